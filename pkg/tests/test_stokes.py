import math

import numpy as np
import pytest

from wssfem.analytic import POISEUILLE3D, STOKES2D
from wssfem.fem import Field, function_space, interpolate, l2_error
from wssfem.harness import CaseSpec, build_problem, level_mesh
from wssfem.mesh import build_mesh, generate_unit_square
from wssfem.stokes import (
    BoundaryCondition,
    FlowProblem,
    NitscheConfig,
    ProblemError,
    StabilizationConfig,
    assemble_operator,
    assemble_stokes,
    bh_stabilization,
    boundary_flux,
    do_nothing,
    mean_pressure,
    nitsche_dirichlet,
    nitsche_terms,
    solve_stokes,
    strong_dirichlet,
)

SIDES = ("left", "right", "bottom", "top")


def square_problem(n, element="P2P1", bc=strong_dirichlet, stress="full_gradient", value=STOKES2D.velocity, **kw):
    stab = StabilizationConfig(1e-2, 1e-2) if element == "P1P1stab" else None
    return FlowProblem(generate_unit_square(n), element, stress, 1.0, {s: bc(value) for s in SIDES},
                       stabilization=kw.pop("stabilization", stab), **kw)


def two_triangles(mu=1.0, s_rule="viscosity"):
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    mesh = build_mesh(v, [[0, 1, 2], [1, 3, 2]], lambda c, n: np.full(len(c), 3), {"wall": 3})
    return FlowProblem(mesh, "P1P1stab", "full_gradient", mu, {"wall": nitsche_dirichlet()},
                       stabilization=StabilizationConfig(0.3, 0.7, s_rule))


# -- configuration errors ------------------------------------------------


def test_missing_bc():
    p = FlowProblem(generate_unit_square(2), "P2P1", "full_gradient", 1.0, {"left": strong_dirichlet()})
    with pytest.raises(ProblemError, match="without a boundary condition"):
        assemble_stokes(p)


def test_p1p1_needs_stabilization():
    p = square_problem(2, "P1P1stab", nitsche_dirichlet, stabilization=None)
    with pytest.raises(ProblemError, match="stabilization"):
        assemble_stokes(p)


def test_bad_configs():
    with pytest.raises(ProblemError):
        BoundaryCondition("strong_dirichlet", tangential_zero=True)
    with pytest.raises(ProblemError):
        FlowProblem(generate_unit_square(1), "P3P2", "full_gradient", 1.0, {})
    with pytest.raises(ProblemError):
        FlowProblem(generate_unit_square(1), "P2P1", "laplacian", 1.0, {})
    with pytest.raises(ProblemError):
        StabilizationConfig(-1.0, 0.0)
    with pytest.raises(ProblemError):
        StabilizationConfig(1.0, 1.0, s_rule=3)
    with pytest.raises(ProblemError):
        NitscheConfig(0.0)


def test_s_rule():
    cfg = StabilizationConfig()
    np.testing.assert_array_equal(cfg.exponent(0.5, np.array([0.1, 0.5, 0.9])), [2, 2, 1])
    np.testing.assert_array_equal(StabilizationConfig(s_rule=1).exponent(10.0, np.array([0.1])), [1])


# -- homogeneous and simple problems -----------------------------------------


@pytest.mark.parametrize("element,bc", [("P2P1", strong_dirichlet), ("P1P1stab", nitsche_dirichlet)])
def test_homogeneous_problem(element, bc):
    sol = solve_stokes(square_problem(4, element, bc, value=None))
    assert np.abs(sol.v.coefficients).max() <= 1e-14
    assert np.abs(sol.p.coefficients).max() <= 1e-14


def test_hydrostatic_body_force():
    # v = 0, p = x + y - 1 (mean zero) balances f = grad p
    p = square_problem(4, value=None, body_force=lambda x: np.ones_like(x))
    sol = solve_stokes(p)
    assert np.abs(sol.v.coefficients).max() <= 1e-12
    assert l2_error(sol.p, lambda x: x[:, 0] + x[:, 1] - 1) <= 1e-12


@pytest.mark.parametrize("element,bc", [("P2P1", strong_dirichlet), ("P1P1stab", nitsche_dirichlet)])
def test_mean_pressure_and_mass(element, bc):
    sol = solve_stokes(square_problem(8, element, bc))
    assert abs(mean_pressure(sol)) <= 1e-10
    inflow = -boundary_flux(sol, "top")
    if element == "P2P1":
        assert abs(boundary_flux(sol)) <= 1e-8 * abs(inflow)
    else:
        # weakly imposed data: the net flux only vanishes under refinement
        coarse = abs(boundary_flux(solve_stokes(square_problem(4, element, bc))))
        assert abs(boundary_flux(sol)) < coarse / 2


def test_exactly_representable_flow():
    # quadratic velocity / linear pressure lies in P2/P1: solved exactly
    v = lambda x: np.stack([x[:, 1] ** 2, x[:, 0] ** 2], axis=1)
    p_exact = lambda x: 2 * x[:, 0] + 2 * x[:, 1] - 2
    prob = square_problem(3, value=v, body_force=lambda x: np.zeros_like(x))
    # -lap v + grad p = (-2 + 2, -2 + 2) = 0
    sol = solve_stokes(prob)
    assert l2_error(sol.v, v) <= 1e-11
    assert l2_error(sol.p, p_exact) <= 1e-10


def test_strong_vs_nitsche_p2p1():
    errs = []
    for n in (8, 16):
        a = solve_stokes(square_problem(n))
        b = solve_stokes(square_problem(n, bc=nitsche_dirichlet))
        diff = l2_error(Field(a.v.dofmap, a.v.coefficients - b.v.coefficients))
        errs.append((diff, l2_error(a.v, STOKES2D.velocity)))
    for diff, err in errs:
        assert diff < err
    assert errs[1][0] < errs[0][0]


def test_stress_model_matters():
    a = solve_stokes(square_problem(4))
    b = solve_stokes(square_problem(4, stress="symmetric_gradient"))
    assert not np.allclose(a.v.coefficients, b.v.coefficients, rtol=0, atol=1e-8)


def test_manufactured_residual_decays():
    norms = []
    for n in (8, 16):
        prob = square_problem(n)
        sysm = assemble_stokes(prob)
        lay = prob.layout
        U = np.zeros(lay.size)
        U[: lay.nv] = interpolate(lay.V, STOKES2D.velocity).coefficients
        U[lay.nv : lay.nv + lay.np] = interpolate(lay.Q, STOKES2D.pressure).coefficients
        r = sysm.matrix @ U - sysm.rhs
        norms.append(np.linalg.norm(r[: lay.nv + lay.np]))
    assert norms[0] / norms[1] >= 2.0


def test_poiseuille_centerline():
    mesh, _ = level_mesh("poiseuille3d", 0)
    sol = solve_stokes(build_problem(CaseSpec("poiseuille3d"), mesh))
    from wssfem.fem import eval_on_points

    x = np.array([[0.0, 0.0, 2e-3 * (1 - 1e-9)]])
    centroid = mesh.vertices[mesh.cells].mean(axis=1)
    # locate the containing cell by barycentric coordinates
    for c in np.argsort(np.linalg.norm(centroid - x, axis=1))[:50]:
        lam = np.linalg.solve(mesh.jacobians[c], x[0] - mesh.vertices[mesh.cells[c, 0]])
        if lam.min() >= -1e-9 and lam.sum() <= 1 + 1e-9:
            break
    u, _ = eval_on_points(sol.v, np.array([c]), x[None])
    assert u[0, 0, 2] == pytest.approx(1.0, abs=0.05)
    assert abs(u[0, 0, 0]) < 1e-9 and abs(u[0, 0, 1]) < 1e-9  # tangential_zero at the outlet


# -- Nitsche ----------------------------------------------------------------


def _nitsche_matrix(problem, value, beta):
    p = FlowProblem(problem.mesh, problem.element, problem.stress, problem.mu, problem.bcs,
                    stabilization=problem.stabilization, nitsche=NitscheConfig(beta))
    buf, rhs = nitsche_terms(p, "top", value)
    return buf.tocsr((p.layout.size, p.layout.size)), rhs


def test_nitsche_penalty_linear_in_beta():
    prob = square_problem(3, "P1P1stab", nitsche_dirichlet)
    (A1, b1), (A2, b2), (A3, b3) = (_nitsche_matrix(prob, STOKES2D.velocity, b) for b in (1.0, 2.0, 3.0))
    np.testing.assert_allclose((A3 - A2).toarray(), (A2 - A1).toarray(), atol=1e-12)
    np.testing.assert_allclose(b3 - b2, b2 - b1, atol=1e-12)
    # what remains at beta -> 0 is the consistency/adjoint pair, which is not symmetric
    A0 = 2 * A1 - A2
    assert abs(A0 - A0.T).max() > 1e-3


def test_nitsche_trace_matching_data():
    # g equal to the trace of the discrete v: adjoint and penalty terms cancel
    g = lambda x: np.stack([1 + x[:, 0], 2 * x[:, 1]], axis=1)
    prob = square_problem(3, "P1P1stab", nitsche_dirichlet, value=g)
    lay = prob.layout
    U = np.zeros(lay.size)
    U[: lay.nv] = interpolate(lay.V, g).coefficients
    U[lay.nv : lay.nv + lay.np] = np.random.default_rng(0).standard_normal(lay.np)
    r = [A @ U - b for A, b in (_nitsche_matrix(prob, g, beta) for beta in (1.0, 50.0))]
    np.testing.assert_allclose(r[0], r[1], atol=1e-12)


def test_nitsche_exact_solution_consistency():
    # exact (v, p) of a linear flow: Nitsche residual only sees -int T n . w, cancelled by the cell terms
    v = lambda x: np.stack([x[:, 0], -x[:, 1]], axis=1)
    prob = square_problem(2, "P1P1stab", nitsche_dirichlet, value=v)
    A, b = assemble_operator(prob)
    lay = prob.layout
    U = np.zeros(lay.size)
    U[: lay.nv] = interpolate(lay.V, v).coefficients
    assert np.abs(A @ U - b).max() <= 1e-12


# -- BH stabilization ---------------------------------------------------------


def _block(prob, which):
    lay = prob.layout
    S = bh_stabilization(prob).tocsr((lay.size, lay.size)).toarray()
    if which == "p":
        return S[lay.nv : lay.nv + lay.np, lay.nv : lay.nv + lay.np]
    return S[: lay.nv, : lay.nv]


@pytest.mark.parametrize("mu,s", [(1.0, 1), (10.0, 2)])
def test_two_cell_oracle(mu, s):
    prob = two_triangles(mu)
    h = math.sqrt(2)  # both cells are right triangles with unit legs
    assert prob.mesh.h_cell == pytest.approx([h, h], abs=1e-15)
    length = math.sqrt(2)
    # p = 0 except 1 at (1, 1): grad p jumps from 0 to (1, 1); normal jump sqrt(2)
    p = np.array([0.0, 0.0, 0.0, 1.0])
    Sp = _block(prob, "p")
    expected = 0.3 * h ** (s + 1) * 2.0 * length
    assert p @ Sp @ p == pytest.approx(expected, rel=1e-13)
    # v_x = x + y - 1 on the upper cell: div jumps by 1
    v = np.zeros(8)
    v[3 * 2 + 0] = 1.0
    Sv = _block(prob, "v")
    assert v @ Sv @ v == pytest.approx(0.7 * h ** (s + 1) * 1.0 * length, rel=1e-13)


def test_bh_zero_on_linear_fields_and_psd():
    prob = square_problem(5, "P1P1stab", nitsche_dirichlet)
    lay = prob.layout
    Sp, Sv = _block(prob, "p"), _block(prob, "v")
    p = interpolate(lay.Q, lambda x: 3 * x[:, 0] - x[:, 1] + 2).coefficients
    assert abs(p @ Sp @ p) <= 1e-14
    v = interpolate(lay.V, lambda x: np.stack([np.full(len(x), 2.0), np.full(len(x), -1.0)], axis=1)).coefficients
    assert abs(v @ Sv @ v) <= 1e-14
    for S in (Sp, Sv):
        np.testing.assert_allclose(S, S.T, atol=1e-15)
        assert np.linalg.eigvalsh(S).min() >= -1e-13


def test_stabilization_only_for_p1p1():
    prob = square_problem(2)
    assert prob.stabilization is None
    assert not bh_stabilization(prob).parts


def test_do_nothing_outlet_problem():
    mesh, _ = level_mesh("poiseuille3d", 0)
    bcs = {"inlet": strong_dirichlet(POISEUILLE3D.velocity), "outlet": do_nothing(), "wall": strong_dirichlet()}
    sol = solve_stokes(FlowProblem(mesh, "P2P1", "symmetric_gradient", POISEUILLE3D.mu, bcs))
    assert not sol.problem.layout.multiplier
    inflow = -boundary_flux(sol, "inlet")
    assert abs(boundary_flux(sol)) <= 1e-8 * inflow
    assert inflow > 0


def test_solution_carries_fingerprint():
    sol = solve_stokes(square_problem(2))
    assert sol.fingerprint == sol.problem.fingerprint()
    assert sol.fingerprint[0] == "P2P1"


def test_problem_uses_vector_p2():
    prob = square_problem(2)
    assert prob.layout.V.element.family == "P2"
    assert prob.layout.nv == 2 * function_space(prob.mesh, "P2").num_nodes
