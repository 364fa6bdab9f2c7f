"""Weighted function spaces and quadrature semigroup operators.

Functions on punctured space are represented by their spherical means on a
graded radial grid.  The reference weight phi(x) = |x|^{-(d-1)/2} defines the
norm ||f||_H = (int phi |f|^rho dx)^{1/rho} and the admissible test class
(continuous, 0 <= f <= C phi, finite norm).  The semigroups S (heat), S-bar
(rank-one comparison), and S^a (one-point potential) act through quadrature
matrices on the grid; the angular integral of the heat kernel is carried out
in closed form, so radial functions cost a single 1-D matrix-vector product.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator

from .kernel import KernelParams, palpha_correction, radial_heat_kernel

__all__ = [
    "ReferenceWeight",
    "TestFunction",
    "RadialGrid",
    "FieldSample",
    "sphere_area",
    "h_norm",
    "spherical_mean",
    "apply_heat",
    "apply_pbar",
    "apply_palpha",
    "heat_matrix",
    "palpha_matrix",
    "default_rho",
]

_R_CUTOFF_Q = 200.0  # drop correction entries with R^2/4t beyond this


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere: 2 pi (d=2), 4 pi (d=3)."""
    return 2.0 * math.pi if d == 2 else 4.0 * math.pi


def default_rho(d: int, beta: float) -> float:
    """Midpoint of the admissible interval for the norm exponent rho."""
    lo = 1.0 / (1.0 - beta * (d - 1) / (d + 1))
    hi = (d + 1) / (d - 1)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ReferenceWeight:
    """The weight phi(x) = |x|^{-(d-1)/2}."""

    d: int

    def __post_init__(self) -> None:
        if self.d not in (2, 3):
            raise ValueError("dimension d must be 2 or 3")

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        out = r ** (-0.5 * (self.d - 1))
        return float(out) if out.ndim == 0 else out

    def __call__(self, x):
        return self.radial(np.linalg.norm(np.asarray(x, dtype=float), axis=-1))


@dataclass(frozen=True)
class TestFunction:
    """Element of the test class: continuous, 0 <= f <= C phi, finite H-norm.

    `evaluator` takes a radius for radial functions, a coordinate array
    otherwise.  `sing_order` is the power of the leading singularity at the
    origin (f ~ r^{-sing_order}), used for off-grid extrapolation.
    """

    d: int
    evaluator: object
    envelope_const: float
    rho: float
    radial: bool = True
    sing_order: float = 0.0
    label: str = ""

    def __call__(self, r):
        return self.evaluator(r)

    @classmethod
    def gaussian(cls, d: int, rho: float, scale: float = 4.0, label: str = "gaussian"):
        """f(x) = e^{-|x|^2/scale}; the project-wide reference test function."""
        ev = lambda r: np.exp(-np.asarray(r, dtype=float) ** 2 / scale)
        # envelope against phi: max of r^{(d-1)/2} e^{-r^2/scale}
        rr = np.linspace(1e-6, 10.0 * math.sqrt(scale), 20001)
        c = float(np.max(rr ** (0.5 * (d - 1)) * np.exp(-rr * rr / scale)))
        return cls(d=d, evaluator=ev, envelope_const=c, rho=rho, label=label)

    @classmethod
    def phi_power(cls, d: int, xi: float, rho: float, r_cap: float = 1e3,
                  label: str = "phi_power"):
        """f = min(phi^xi, phi(1/r_cap)^xi): a truncated power of the weight."""
        s = 0.5 * (d - 1) * xi
        cap = float(r_cap ** s)

        def ev(r):
            r = np.asarray(r, dtype=float)
            out = np.minimum(r ** (-s), cap)
            return out

        c = cap if xi <= 1 else np.inf  # only xi <= 1 stays under C phi
        return cls(d=d, evaluator=ev, envelope_const=c, rho=rho,
                   sing_order=s, label=label)

    @classmethod
    def ball_indicator(cls, d: int, rho: float, radius: float = 1.0,
                       mollify: float = 0.0, label: str = "ball"):
        """Indicator of the ball, optionally linearly mollified at the edge."""
        def ev(r):
            r = np.asarray(r, dtype=float)
            if mollify <= 0:
                return (r <= radius).astype(float)
            return np.clip((radius + mollify - r) / mollify, 0.0, 1.0)

        return cls(d=d, evaluator=ev, envelope_const=radius ** (0.5 * (d - 1)),
                   rho=rho, label=label)


@dataclass(frozen=True)
class RadialGrid:
    """Graded radial quadrature: sum(weights * g(nodes)) ~ int g(r) r^{d-1} dr."""

    d: int
    nodes: np.ndarray
    weights: np.ndarray
    r_min: float
    r_max: float

    def __post_init__(self) -> None:
        if np.any(self.nodes <= 0) or np.any(np.diff(self.nodes) <= 0):
            raise ValueError("nodes must be positive and strictly increasing")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def key(self) -> tuple:
        return (self.d, self.nodes.size, hash(self.nodes.tobytes()))

    def integrate(self, values: np.ndarray) -> float:
        """int g r^{d-1} dr over the grid (no sphere-area factor)."""
        return float(np.dot(self.weights, values))

    @classmethod
    def default(cls, d: int, horizon: float = 2.0, nodes_per_panel: int = 16,
                n_inner: int = 16, n_outer: int = 16, r_min: float = 1e-6):
        """Log-spaced panels to r=1, then geometric out to max(20, 8 sqrt(T))."""
        r_max = max(20.0, 8.0 * math.sqrt(horizon))
        edges = np.concatenate([
            np.geomspace(r_min, 1.0, n_inner + 1)[:-1],
            np.geomspace(1.0, r_max, n_outer + 1),
        ])
        return cls._from_log_edges(d, edges, nodes_per_panel)

    @classmethod
    def solver(cls, d: int, r_max: float = 16.0, outer_width: float = 0.5,
               nodes_per_panel: int = 16, n_inner: int = 10, r_min: float = 1e-7):
        """Grid for repeated short-time flows: uniform outer panels so that
        Gaussians of width sqrt(2t) down to t ~ 1/64 stay resolved, and a deep
        inner cutoff so the truncated [0, r_min] slab (whose error is linear
        in r_min for the 1/r-singular kernels) stays negligible over ~64
        composed applications."""
        n_out = int(round((r_max - 1.0) / outer_width))
        inner = np.geomspace(r_min, 1.0, n_inner + 1)[:-1]
        outer = np.linspace(1.0, r_max, n_out + 1)
        return cls._from_mixed_edges(d, inner, outer, nodes_per_panel)

    @classmethod
    def _from_log_edges(cls, d: int, edges: np.ndarray, k: int):
        from .kernel import _panel_nodes

        xi_edges = np.log(edges)
        xi, wxi = _panel_nodes(xi_edges, k)
        r = np.exp(xi)
        w = wxi * r ** d
        return cls(d=d, nodes=r, weights=w, r_min=float(edges[0]), r_max=float(edges[-1]))

    @classmethod
    def _from_mixed_edges(cls, d: int, inner_edges, outer_edges, k: int):
        from .kernel import _panel_nodes

        xi, wxi = _panel_nodes(np.log(np.append(inner_edges, outer_edges[0])), k)
        r_in = np.exp(xi)
        w_in = wxi * r_in ** d
        r_out, w_out = _panel_nodes(np.asarray(outer_edges, dtype=float), k)
        w_out = w_out * r_out ** (d - 1)
        return cls(
            d=d,
            nodes=np.concatenate([r_in, r_out]),
            weights=np.concatenate([w_in, w_out]),
            r_min=float(inner_edges[0]),
            r_max=float(outer_edges[-1]),
        )


class FieldSample:
    """Spherical means of a function sampled on a radial grid.

    Values are immutable; off-grid evaluation uses monotone cubic
    interpolation in log r, the declared singularity power below r_min, and
    zero beyond r_max.
    """

    def __init__(self, grid: RadialGrid, values, sing_order: float = 0.0,
                 label: str = ""):
        values = np.asarray(values, dtype=float).copy()
        if values.shape != grid.nodes.shape:
            raise ValueError("values must match the grid nodes")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.sing_order = float(sing_order)
        self.label = label
        self._interp = None

    def __call__(self, r):
        if self._interp is None:
            self._interp = PchipInterpolator(
                np.log(self.grid.nodes), self.values, extrapolate=False
            )
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        out = self._interp(np.log(np.clip(r, 1e-300, None)))
        lo = r < self.grid.r_min
        if np.any(lo):
            out[lo] = self.values[0] * (r[lo] / self.grid.r_min) ** (-self.sing_order)
        out[r > self.grid.r_max] = 0.0
        out = np.nan_to_num(out, nan=0.0)
        return float(out[0]) if scalar else out

    def map(self, fn, label: str | None = None) -> "FieldSample":
        return FieldSample(self.grid, fn(self.values), self.sing_order,
                           label if label is not None else self.label)


def _resolve_values(f, grid: RadialGrid) -> tuple[np.ndarray, float]:
    """Node values and singularity order of a function-like argument."""
    if isinstance(f, FieldSample):
        if f.grid.key == grid.key:
            return f.values, f.sing_order
        return f(grid.nodes), f.sing_order
    if isinstance(f, TestFunction):
        if f.radial:
            return np.asarray(f(grid.nodes), dtype=float), f.sing_order
        vals = np.array([spherical_mean(f, r) for r in grid.nodes])
        return vals, f.sing_order
    if callable(f):
        return np.asarray(f(grid.nodes), dtype=float), 0.0
    raise TypeError("expected FieldSample, TestFunction, or callable")


def spherical_mean(f, r: float, d: int | None = None) -> float:
    """Average of f over the sphere of radius r; identity for radial f."""
    if r <= 0:
        raise ValueError("radius must be positive")
    if isinstance(f, FieldSample):
        return float(f(r))
    if isinstance(f, TestFunction) and f.radial:
        return float(f(r))
    d = f.d if isinstance(f, TestFunction) else d
    if d is None:
        raise ValueError("dimension required for non-radial callables")
    ev = f.evaluator if isinstance(f, TestFunction) else f
    if d == 2:
        th = (np.arange(256) + 0.5) * (2.0 * math.pi / 256)
        pts = r * np.stack([np.cos(th), np.sin(th)], axis=-1)
        return float(np.mean(ev(pts)))
    cz, wz = np.polynomial.legendre.leggauss(64)
    th = (np.arange(64) + 0.5) * (2.0 * math.pi / 64)
    sz = np.sqrt(1.0 - cz * cz)
    pts = r * np.stack(
        [
            np.outer(sz, np.cos(th)),
            np.outer(sz, np.sin(th)),
            np.outer(cz, np.ones_like(th)),
        ],
        axis=-1,
    )
    vals = ev(pts.reshape(-1, 3)).reshape(64, 64)
    return float(np.sum(wz[:, None] * vals) / (2.0 * 64))


def h_norm(f, rho: float | None = None, grid: RadialGrid | None = None,
           d: int | None = None) -> float:
    """||f||_H = (int phi(x) |f(x)|^rho dx)^{1/rho} by graded quadrature."""
    if isinstance(f, FieldSample):
        grid = f.grid if grid is None else grid
    if grid is None:
        if d is None and isinstance(f, TestFunction):
            d = f.d
        if d is None:
            raise ValueError("grid or dimension required")
        grid = RadialGrid.default(d)
    if rho is None:
        rho = f.rho if isinstance(f, TestFunction) else None
        if rho is None:
            raise ValueError("rho required")
    if rho < 1:
        raise ValueError("rho must be >= 1")
    vals, _ = _resolve_values(f, grid)
    phi = ReferenceWeight(grid.d).radial(grid.nodes)
    total = sphere_area(grid.d) * grid.integrate(phi * np.abs(vals) ** rho)
    return float(total ** (1.0 / rho))


# ---------------------------------------------------------------------------
# semigroup operators
# ---------------------------------------------------------------------------

_matrix_cache: dict[tuple, np.ndarray] = {}


def _angular_heat(d: int, t: float, ri: np.ndarray, rj: np.ndarray) -> np.ndarray:
    """int_{S^{d-1}} P(t; x, r_j omega) domega at |x| = r_i (closed form)."""
    if d == 3:
        pref = (4.0 * math.pi * t) ** -1.5 * 2.0 * math.pi * 2.0 * t / (ri * rj)
        return pref * (
            np.exp(-((ri - rj) ** 2) / (4.0 * t))
            - np.exp(-((ri + rj) ** 2) / (4.0 * t))
        )
    return (0.5 / t) * np.exp(-((ri - rj) ** 2) / (4.0 * t)) * special.i0e(
        ri * rj / (2.0 * t)
    )


def heat_matrix(d: int, grid: RadialGrid, t: float) -> np.ndarray:
    """Matrix of S_t on radial functions: out_i = sum_j M_ij f_j."""
    key = ("heat", d, grid.key, round(t, 14))
    m = _matrix_cache.get(key)
    if m is None:
        ri = grid.nodes[:, None]
        rj = grid.nodes[None, :]
        m = _angular_heat(d, t, ri, rj) * grid.weights[None, :]
        _matrix_cache[key] = m
    return m


def correction_matrix(params: KernelParams, grid: RadialGrid, t: float,
                      level: int = 1) -> np.ndarray:
    """Matrix of the excess S^a_t - S_t on radial functions."""
    key = ("corr", params.d, params.alpha, grid.key, round(t, 14), level)
    m = _matrix_cache.get(key)
    if m is None:
        n = grid.nodes.size
        r = grid.nodes
        q = np.zeros((n, n))
        iu, ju = np.triu_indices(n)
        R = r[iu] + r[ju]
        live = R * R / (4.0 * t) < _R_CUTOFF_Q
        if np.any(live):
            vals = palpha_correction(
                params, t, r[iu][live], r[ju][live], level=level
            )
            flat = np.zeros(iu.size)
            flat[live] = vals
            q[iu, ju] = flat
            q[ju, iu] = flat
        m = sphere_area(params.d) * q * grid.weights[None, :]
        _matrix_cache[key] = m
    return m


def palpha_matrix(params: KernelParams, grid: RadialGrid, t: float,
                  level: int = 1) -> np.ndarray:
    return heat_matrix(params.d, grid, t) + correction_matrix(params, grid, t, level)


def palpha_rect(params: KernelParams, out_nodes: np.ndarray, grid: RadialGrid,
                t: float, level: int = 1) -> np.ndarray:
    """Rectangular flow matrix: rows sample S^a_t f at out_nodes while the
    radial quadrature runs over grid (use a finer grid than the output when
    the kernel width sqrt(2t) falls under the output grid's resolution)."""
    key = ("rect", params.d, params.alpha, hash(out_nodes.tobytes()), grid.key,
           round(t, 14), level)
    m = _matrix_cache.get(key)
    if m is None:
        ri = out_nodes[:, None]
        rj = grid.nodes[None, :]
        m = _angular_heat(params.d, t, ri, rj) * grid.weights[None, :]
        R = ri + rj
        live = R * R / (4.0 * t) < _R_CUTOFF_Q
        if np.any(live):
            q = np.zeros(m.shape)
            ii, jj = np.nonzero(live)
            q[ii, jj] = palpha_correction(
                params, t, out_nodes[ii], grid.nodes[jj], level=level
            )
            m = m + sphere_area(params.d) * q * grid.weights[None, :]
        _matrix_cache[key] = m
    return m


def apply_heat(d: int, t: float, f, grid: RadialGrid | None = None) -> FieldSample:
    """S_t f on the grid (radial fast path; spherical means otherwise)."""
    if t <= 0:
        raise ValueError("time t must be positive")
    if grid is None:
        grid = f.grid if isinstance(f, FieldSample) else RadialGrid.default(d)
    vals, _ = _resolve_values(f, grid)
    out = heat_matrix(d, grid, t) @ vals
    return FieldSample(grid, np.maximum(out, 0.0), sing_order=0.0,
                       label="heat_flow")


def apply_pbar(d: int, t: float, f, grid: RadialGrid | None = None) -> FieldSample:
    """S-bar_t f via the rank-one separable form of the comparison kernel."""
    if t <= 0:
        raise ValueError("time t must be positive")
    if grid is None:
        grid = f.grid if isinstance(f, FieldSample) else RadialGrid.default(d)
    vals, _ = _resolve_values(f, grid)
    phi = ReferenceWeight(grid.d).radial(grid.nodes)
    g = phi * np.exp(-grid.nodes ** 2 / (4.0 * t))
    inner = sphere_area(grid.d) * grid.integrate(g * vals)
    out = t ** -0.5 * g * inner
    return FieldSample(grid, out, sing_order=0.5 * (grid.d - 1), label="pbar_flow")


def apply_palpha(params: KernelParams, t: float, f,
                 grid: RadialGrid | None = None, level: int = 1) -> FieldSample:
    """S^a_t f = S_t f + correction; dominates the heat flow nodewise."""
    if t <= 0:
        raise ValueError("time t must be positive")
    if grid is None:
        grid = f.grid if isinstance(f, FieldSample) else RadialGrid.default(params.d)
    vals, _ = _resolve_values(f, grid)
    out = palpha_matrix(params, grid, t, level) @ vals
    sing = 0.5 * (params.d - 1) if params.alpha != math.inf else 0.0
    return FieldSample(grid, np.maximum(out, 0.0), sing_order=sing,
                       label="palpha_flow")
