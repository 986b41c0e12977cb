"""Registry of exact solutions used by the benchmark cases.

Every case stores v, grad v, the vector Laplacian of v, p and grad p in
closed form, together with the exact wall shear stress on each wall
region.  The 2D traces were derived by hand from T = -p I + mu grad v with
outward normals and are cross-checked symbolically in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class AnalyticCase:
    name: str
    dim: int
    mu: float
    rho: float
    stress: str
    velocity: Callable[[Array], Array]  # (n, d) -> (n, d)
    velocity_grad: Callable[[Array], Array]  # (n, d) -> (n, d, d), [i, j] = d v_i / d x_j
    velocity_laplacian: Callable[[Array], Array]
    pressure: Callable[[Array], Array]
    pressure_grad: Callable[[Array], Array]
    wss_by_region: dict  # region name -> callable (n, d) -> (n, d)
    wall_regions: tuple
    navier_stokes: bool = False
    sample_box: tuple = ()  # (low, high) corners of the self-check sampling box

    @property
    def nu(self) -> float:
        return self.mu / self.rho

    def wss(self, points: Array, normals: Array, tags: Array, tag_of: dict) -> Array:
        """Exact WSS at boundary points; ``tag_of`` maps region names to tags."""
        out = np.zeros_like(points, dtype=float)
        for name, fn in self.wss_by_region.items():
            sel = tags == tag_of[name]
            if sel.any():
                out[sel] = fn(points[sel])
        return out

    def strong_residual(self, x: Array) -> tuple[Array, Array]:
        """Momentum and continuity residuals of the exact pair at points x."""
        g = self.velocity_grad(x)
        # div(2 mu D(v)) = mu lap v + mu grad div v, so both stress models share
        # this residual once the continuity residual vanishes identically
        mom = -self.mu * self.velocity_laplacian(x) + self.pressure_grad(x)
        if self.navier_stokes:
            mom = mom + self.rho * np.einsum("nij,nj->ni", g, self.velocity(x))
        div = np.trace(g, axis1=1, axis2=2)
        return mom, div

    def self_check(self, n: int = 100, seed: int = 0) -> float:
        """Largest strong-form residual at ``n`` random interior points."""
        rng = np.random.default_rng(seed)
        x = self.sample_points(rng, n)
        mom, div = self.strong_residual(x)
        return float(max(np.abs(mom).max(), np.abs(div).max()))

    def sample_points(self, rng, n: int) -> Array:
        low, high = (np.asarray(c, dtype=float) for c in self.sample_box)
        x = low + (high - low) * rng.random((4 * n, self.dim))
        if self.dim == 3:
            radius = high[0]
            x = x[x[:, 0] ** 2 + x[:, 1] ** 2 < radius**2]
        return x[:n]


# -- 2D Stokes on the unit square ------------------------------------------


def _v2(x):
    X, Y = x[:, 0], x[:, 1]
    return np.stack([20 * X * Y**3, 5 * X**4 - 5 * Y**4], axis=1)


def _gv2(x):
    X, Y = x[:, 0], x[:, 1]
    g = np.empty((len(x), 2, 2))
    g[:, 0, 0] = 20 * Y**3
    g[:, 0, 1] = 60 * X * Y**2
    g[:, 1, 0] = 20 * X**3
    g[:, 1, 1] = -20 * Y**3
    return g


def _lap2(x):
    X, Y = x[:, 0], x[:, 1]
    return np.stack([120 * X * Y, 60 * X**2 - 60 * Y**2], axis=1)


def _p2(x):
    X, Y = x[:, 0], x[:, 1]
    return 60 * X**2 * Y - 20 * Y**3 - 5


def _gp2(x):
    X, Y = x[:, 0], x[:, 1]
    return np.stack([120 * X * Y, 60 * X**2 - 60 * Y**2], axis=1)


def _zero2(x):
    return np.zeros((len(x), 2))


STOKES2D = AnalyticCase(
    name="stokes2d",
    dim=2,
    mu=1.0,
    rho=1.0,
    stress="full_gradient",
    velocity=_v2,
    velocity_grad=_gv2,
    velocity_laplacian=_lap2,
    pressure=_p2,
    pressure_grad=_gp2,
    wss_by_region={
        "bottom": _zero2,
        "left": _zero2,
        "top": lambda x: np.stack([60 * x[:, 0], np.zeros(len(x))], axis=1),
        "right": lambda x: np.stack([np.zeros(len(x)), np.full(len(x), 20.0)], axis=1),
    },
    wall_regions=("left", "right", "bottom", "top"),
    sample_box=((0.0, 0.0), (1.0, 1.0)),
)


# -- 3D Poiseuille flow in a straight pipe ----------------------------------

PIPE_RADIUS = 1e-3
PIPE_LENGTH = 2e-3
PIPE_MU = 4e-3
PIPE_UMAX = 1.0


def _pipe_case(name: str, navier_stokes: bool) -> AnalyticCase:
    R, L, mu, um = PIPE_RADIUS, PIPE_LENGTH, PIPE_MU, PIPE_UMAX

    def v(x):
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        z = np.zeros(len(x))
        return np.stack([z, z, um * (1 - r2 / R**2)], axis=1)

    def gv(x):
        g = np.zeros((len(x), 3, 3))
        g[:, 2, 0] = -2 * um * x[:, 0] / R**2
        g[:, 2, 1] = -2 * um * x[:, 1] / R**2
        return g

    def lap(x):
        out = np.zeros((len(x), 3))
        out[:, 2] = -4 * um / R**2
        return out

    def p(x):
        return 4 * mu * um * (L - x[:, 2]) / R**2

    def gp(x):
        out = np.zeros((len(x), 3))
        out[:, 2] = -4 * mu * um / R**2
        return out

    def tau(x):
        out = np.zeros((len(x), 3))
        out[:, 2] = -2 * mu * um / R
        return out

    return AnalyticCase(
        name=name,
        dim=3,
        mu=mu,
        rho=1.0,
        stress="symmetric_gradient",
        velocity=v,
        velocity_grad=gv,
        velocity_laplacian=lap,
        pressure=p,
        pressure_grad=gp,
        wss_by_region={"wall": tau},
        wall_regions=("wall",),
        navier_stokes=navier_stokes,
        sample_box=((-R, -R, 0.0), (R, R, L)),
    )


POISEUILLE3D = _pipe_case("poiseuille3d", navier_stokes=False)
NS_PIPE = _pipe_case("ns_pipe", navier_stokes=True)

REGISTRY = {c.name: c for c in (STOKES2D, POISEUILLE3D, NS_PIPE)}


def get_case(name: str) -> AnalyticCase:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown case {name!r}; expected one of {sorted(REGISTRY)}") from None


def exact_wss_magnitude(case: AnalyticCase) -> float | None:
    """Constant |tau| for the pipe cases, None when it varies along the wall."""
    if case.dim == 3:
        return 2 * case.mu * PIPE_UMAX / PIPE_RADIUS
    return None
