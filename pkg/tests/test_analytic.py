import numpy as np
import pytest
import sympy as sy

from wssfem.analytic import NS_PIPE, POISEUILLE3D, REGISTRY, STOKES2D, exact_wss_magnitude, get_case

x, y, z = sy.symbols("x y z", real=True)
V2 = sy.Matrix([20 * x * y**3, 5 * x**4 - 5 * y**4])
P2 = 60 * x**2 * y - 20 * y**3 - 5


@pytest.mark.parametrize("case", list(REGISTRY.values()), ids=list(REGISTRY))
def test_self_check(case):
    assert case.self_check(100) <= 1e-10


def _pts(n=20, seed=0):
    return np.random.default_rng(seed).random((n, 2))


def test_2d_fields_match_symbolic():
    X = _pts()
    grad = V2.jacobian([x, y])
    lap = sy.Matrix([sy.diff(V2[i], x, 2) + sy.diff(V2[i], y, 2) for i in range(2)])
    gp = sy.Matrix([sy.diff(P2, x), sy.diff(P2, y)])
    for expr, fn in ((V2, STOKES2D.velocity), (lap, STOKES2D.velocity_laplacian), (gp, STOKES2D.pressure_grad)):
        f = sy.lambdify((x, y), expr, "numpy")
        ref = np.array([np.asarray(f(a, b), dtype=float).ravel() for a, b in X])
        np.testing.assert_allclose(fn(X), ref, rtol=1e-14, atol=1e-12)
    f = sy.lambdify((x, y), grad, "numpy")
    ref = np.array([np.asarray(f(a, b), dtype=float) for a, b in X])
    np.testing.assert_allclose(STOKES2D.velocity_grad(X), ref, rtol=1e-14, atol=1e-12)
    fp = sy.lambdify((x, y), P2, "numpy")
    np.testing.assert_allclose(STOKES2D.pressure(X), fp(X[:, 0], X[:, 1]), rtol=1e-14, atol=1e-12)


def test_2d_pair_solves_stokes_symbolically():
    mom = [-(sy.diff(V2[i], x, 2) + sy.diff(V2[i], y, 2)) + sy.diff(P2, [x, y][i]) for i in range(2)]
    assert [sy.simplify(m) for m in mom] == [0, 0]
    assert sy.simplify(sy.diff(V2[0], x) + sy.diff(V2[1], y)) == 0
    assert sy.integrate(P2, (x, 0, 1), (y, 0, 1)) == 0


@pytest.mark.parametrize(
    "side,normal,param",
    [("bottom", (0, -1), lambda t: (t, 0 * t)), ("top", (0, 1), lambda t: (t, 0 * t + 1)),
     ("left", (-1, 0), lambda t: (0 * t, t)), ("right", (1, 0), lambda t: (0 * t + 1, t))],
)
def test_2d_wss_traces(side, normal, param):
    n = sy.Matrix(normal)
    T = -P2 * sy.eye(2) + V2.jacobian([x, y])
    t = T * n
    tau = sy.simplify(t - (t.dot(n)) * n)
    f = sy.lambdify((x, y), tau, "numpy")
    s = np.linspace(0, 1, 11)
    px, py = param(s)
    ref = np.array([np.asarray(f(a, b), dtype=float).ravel() for a, b in zip(px, py)])
    got = STOKES2D.wss_by_region[side](np.column_stack([px, py]))
    np.testing.assert_allclose(got, ref, rtol=1e-14, atol=1e-12)


def test_pipe_wss_symbolic():
    R, L, mu, um = sy.symbols("R L mu u_m", positive=True)
    w = um * (1 - (x**2 + y**2) / R**2)
    v = sy.Matrix([0, 0, w])
    p = 4 * mu * um * (L - z) / R**2
    G = v.jacobian([x, y, z])
    T = -p * sy.eye(3) + mu * (G + G.T)
    # at (R, 0, z) the outward normal is e_x
    n = sy.Matrix([1, 0, 0])
    t = (T * n).subs({x: R, y: 0})
    tau = t - t.dot(n) * n
    assert sy.simplify(tau - sy.Matrix([0, 0, -2 * mu * um / R])) == sy.zeros(3, 1)
    vals = {R: 1e-3, L: 2e-3, mu: 4e-3, um: 1.0}
    assert float((2 * mu * um / R).subs(vals)) == pytest.approx(8.0)
    assert exact_wss_magnitude(POISEUILLE3D) == pytest.approx(8.0, rel=1e-15)
    pts = np.array([[1e-3, 0.0, 5e-4]])
    np.testing.assert_allclose(POISEUILLE3D.wss_by_region["wall"](pts), [[0, 0, -8.0]], rtol=1e-15)
    # momentum balance: mu lap w = dp/dz
    mom = mu * (sy.diff(w, x, 2) + sy.diff(w, y, 2)) - sy.diff(p, z)
    assert sy.simplify(mom) == 0


def test_pipe_is_navier_stokes_solution():
    pts = POISEUILLE3D.sample_points(np.random.default_rng(1), 50)
    conv = np.einsum("nij,nj->ni", NS_PIPE.velocity_grad(pts), NS_PIPE.velocity(pts))
    assert np.abs(conv).max() == 0.0
    assert NS_PIPE.navier_stokes and not POISEUILLE3D.navier_stokes


def test_wss_dispatch_by_tag():
    tags = {"left": 11, "right": 12, "bottom": 13, "top": 14}
    pts = np.array([[0.5, 1.0], [1.0, 0.25]])
    out = STOKES2D.wss(pts, np.zeros_like(pts), np.array([14, 12]), tags)
    np.testing.assert_allclose(out, [[30.0, 0.0], [0.0, 20.0]])


def test_registry_lookup():
    assert get_case("stokes2d") is STOKES2D
    assert exact_wss_magnitude(STOKES2D) is None
    with pytest.raises(KeyError):
        get_case("aneurysm")
