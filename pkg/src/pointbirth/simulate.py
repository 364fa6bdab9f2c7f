"""Weighted branching-particle Monte Carlo for the superprocess with extra
birth at the origin.

The particle scheme realizes the level-n Trotter law: starting from an
initial cloud, alternate an exact continuous-state-branching (CSB) update of
every particle mass over each interval of length 1/n with a weighted kernel
flow jump at the grid points, beginning with a flow step (mirroring the
scheme's initial flow offset).  The log-Laplace functional of the resulting
cloud is exactly the level-n splitting solution, so comparisons against the
PDE solver at the same level see only Monte Carlo error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import PchipInterpolator

from .kernel import (
    KernelParams,
    NonconvergenceError,
    palpha_correction,
    palpha_total_mass,
)
from .field import sphere_area
from .loglaplace import ModelParams, validate_hypothesis

__all__ = [
    "ParticleCloud",
    "SimConfig",
    "Estimate",
    "ParticleCapError",
    "csb_sample",
    "flow_step",
    "simulate_path",
    "simulate_replicates",
    "estimate_laplace",
    "estimate_mean",
    "replicate_rngs",
]


class ParticleCapError(RuntimeError):
    """The particle count exceeded the configured cap (blow-up guard)."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"particle count {count} exceeded cap {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class ParticleCloud:
    """A finite weighted particle configuration away from the origin."""

    positions: np.ndarray  # shape (n, d)
    masses: np.ndarray  # shape (n,)
    time: float = 0.0

    def __post_init__(self) -> None:
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        m = np.atleast_1d(np.asarray(self.masses, dtype=float))
        if pos.shape[0] != m.shape[0]:
            raise ValueError("positions and masses must have equal length")
        if m.size and (np.any(m < 0) or not np.all(np.isfinite(m))):
            raise ValueError("masses must be finite and nonnegative")
        if pos.size and np.any(np.linalg.norm(pos, axis=1) == 0.0):
            raise ValueError("particles must live away from the origin")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "masses", m)

    @classmethod
    def point_mass(cls, x, mass: float = 1.0, time: float = 0.0):
        return cls(np.atleast_2d(np.asarray(x, dtype=float)),
                   np.array([mass]), time)

    @classmethod
    def empty(cls, d: int, time: float = 0.0):
        return cls(np.zeros((0, d)), np.zeros(0), time)

    @property
    def size(self) -> int:
        return self.masses.size

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.positions, axis=1)

    def pairing(self, phi) -> float:
        """<X, phi> for a radial test function phi(r)."""
        if self.size == 0:
            return 0.0
        return float(np.dot(self.masses, np.asarray(phi(self.radii()),
                                                    dtype=float)))


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo knobs."""

    trotter_n: int = 32
    replicates: int = 10_000
    seed: int = 0
    particle_cap: int = 1_000_000
    split_factor: float = 4.0  # split threshold, x initial per-particle mass
    branch_first: bool = False  # alternative splitting order (no initial flow)

    def __post_init__(self) -> None:
        if (self.trotter_n < 1 or self.replicates < 1 or self.particle_cap < 1
                or self.split_factor <= 0):
            raise ValueError("simulation config fields must be positive")


@dataclass(frozen=True)
class Estimate:
    """Replicate mean with its standard error."""

    mean: float
    stderr: float
    count: int

    def z_score(self, target: float) -> float:
        if self.stderr == 0.0:
            return 0.0 if self.mean == target else math.inf
        return (self.mean - target) / self.stderr


# ---------------------------------------------------------------------------
# continuous-state branching transition sampling
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _stehfest_coeffs(n: int = 14) -> tuple:
    """Gaver-Stehfest coefficients for real-axis Laplace inversion."""
    m = n // 2
    out = []
    for k in range(1, n + 1):
        s = 0.0
        for j in range((k + 1) // 2, min(k, m) + 1):
            s += (j ** m * math.factorial(2 * j)
                  / (math.factorial(m - j) * math.factorial(j)
                     * math.factorial(j - 1) * math.factorial(k - j)
                     * math.factorial(2 * j - k)))
        out.append((-1.0) ** (k + m) * s)
    return tuple(out)


def _cluster_transform(mu: np.ndarray, beta: float) -> np.ndarray:
    """Laplace transform of the normalized branch-cluster law: the CSB
    transition from mass z is compound Poisson with rate z/scale and iid
    clusters J with E e^{-mu J} = 1 - mu (1+mu^beta)^(-1/beta)."""
    mu = np.asarray(mu, dtype=float)
    return -np.expm1(-np.log1p(mu ** -beta) / beta)


def _cluster_cdf(x: np.ndarray, beta: float) -> np.ndarray:
    """CDF of the cluster law by Gaver-Stehfest inversion of G(mu)/mu."""
    zeta = np.array(_stehfest_coeffs())
    k = np.arange(1, zeta.size + 1, dtype=float)
    mu = math.log(2.0) * k[None, :] / np.asarray(x, dtype=float)[:, None]
    vals = _cluster_transform(mu, beta)
    return np.clip(vals @ (zeta / k), 0.0, 1.0)


@lru_cache(maxsize=None)
def _cluster_quantile(beta: float, n_knots: int = 4096):
    """Monotone-interpolated quantile table of the cluster law (one per beta;
    the (delta, eta) dependence is a pure scale factor).  Validated on
    construction against the Laplace transform; raises on nonconvergence."""
    # coverage: head F ~ x^beta, tail 1-F ~ x^-(1+beta)
    x_lo = 10.0 ** (-7.0 / beta)
    x_hi = 10.0 ** (7.0 / (1.0 + beta))
    x = np.geomspace(x_lo, x_hi, 6 * n_knots)
    cdf = np.maximum.accumulate(_cluster_cdf(x, beta))
    keep = (cdf > 1e-7) & (cdf < 1.0 - 1e-7)
    keep &= np.concatenate([[True], np.diff(cdf) > 0])
    x, cdf = x[keep], cdf[keep]
    # knots equispaced in the quantile with geometric refinement at both ends
    p_mid = np.linspace(cdf[0], cdf[-1], n_knots // 2)
    p_lo = np.geomspace(cdf[0], 0.5, n_knots // 4)
    p_hi = 1.0 - np.geomspace(1.0 - cdf[-1], 0.5, n_knots // 4)
    p = np.unique(np.clip(np.concatenate([p_mid, p_lo, p_hi]),
                          cdf[0], cdf[-1]))
    xq = np.exp(np.interp(p, cdf, np.log(x)))
    quant = PchipInterpolator(p, xq, extrapolate=False)

    def sample(u: np.ndarray) -> np.ndarray:
        out = np.empty_like(u)
        lo = u < p[0]
        hi = u > p[-1]
        mid = ~(lo | hi)
        out[mid] = quant(u[mid])
        # closed-form endpoint asymptotics: F ~ x^beta / (beta Gamma(1+beta))
        # near 0 and 1-F ~ C x^-(1+beta) in the tail
        out[lo] = xq[0] * (u[lo] / p[0]) ** (1.0 / beta)
        out[hi] = xq[-1] * ((1.0 - p[-1]) / (1.0 - u[hi])) ** (1.0 / (1.0 + beta))
        return out

    # validation against the defining Laplace transform
    pp = (np.arange(400_000) + 0.5) / 400_000
    xs = sample(pp)
    for lam in np.geomspace(0.1, 100.0, 16):
        got = float(np.mean(np.exp(-lam * xs)))
        want = float(_cluster_transform(np.array([lam]), beta)[0])
        if abs(got - want) > 1e-3 * max(want, 1e-6):
            raise NonconvergenceError(
                f"cluster quantile table failed validation at beta={beta}, "
                f"lambda={lam:.3g}: {got:.6f} vs {want:.6f}")
    return sample


def _csb_sample_many(masses: np.ndarray, delta: float, eta: float,
                     beta: float, rng: np.random.Generator) -> np.ndarray:
    masses = np.asarray(masses, dtype=float)
    if eta == 0.0 or masses.size == 0:
        return masses.copy()
    if beta == 1.0:
        # exact Feller-diffusion transition: Poisson number of unit-rate
        # gamma clusters of scale eta*delta
        scale = eta * delta
        counts = rng.poisson(masses / scale)
        return scale * rng.standard_gamma(counts)
    # compound Poisson of iid clusters; rate = extinction intensity
    q = (eta * beta * delta) ** (-1.0 / beta)
    counts = rng.poisson(masses * q)
    out = np.zeros_like(masses)
    total = int(counts.sum())
    if total:
        draws = _cluster_quantile(float(beta))(rng.random(total))
        ends = np.cumsum(counts)
        sums = np.add.reduceat(draws, np.concatenate([[0], ends[:-1]]))
        sums[counts == 0] = 0.0
        out = sums / q
    return out


def csb_sample(mass: float, delta: float, eta: float, beta: float,
               rng: np.random.Generator) -> float:
    """One transition of critical continuous-state branching with index
    1 + beta: the sample's Laplace transform is exp(-mass * csb_step(lam))."""
    if mass < 0:
        raise ValueError("mass must be nonnegative")
    if not 0 < beta <= 1:
        raise ValueError("branching index requires 0 < beta <= 1")
    if delta <= 0:
        raise ValueError("time step must be positive")
    return float(_csb_sample_many(np.array([mass]), delta, eta, beta, rng)[0])


# ---------------------------------------------------------------------------
# weighted kernel flow jump
# ---------------------------------------------------------------------------

_R_SUPPORT_Q = 200.0  # matches the field module's correction cutoff R^2/4t


class _FlowTables:
    """Per (kernel, delta) tables: the total-mass weight m(delta, r) and
    radial inverse-CDF samplers for the normalized correction move, bucketed
    in log |x|.  Two sampling modes: re-weighted (draw from the nearest
    bucket, restore within-bucket exactness by an importance weight on the
    mass — exactly unbiased for linear functionals) and law-exact (quantile
    interpolation between neighboring buckets — no weight, used where the
    estimator is nonlinear in the cloud and importance weights would bias
    it)."""

    def __init__(self, params: KernelParams, delta: float, level: int = 1):
        self.params = params
        self.delta = delta
        self.level = level
        self.d = params.d
        self.r_cut = math.sqrt(4.0 * delta * _R_SUPPORT_Q)
        # total-mass weight table (smooth, steep: interpolate log excess)
        rr = np.geomspace(1e-9, self.r_cut, 600)
        excess = np.array([
            palpha_total_mass(params, delta, r, level=max(2, level)) - 1.0
            for r in rr
        ])
        excess = np.clip(excess, 1e-300, None)
        self._log_excess = PchipInterpolator(np.log(rr), np.log(excess),
                                             extrapolate=True)
        # radial support nodes for the correction density in |y|
        self.nodes = np.geomspace(1e-7, self.r_cut, 480)
        self.area = sphere_area(self.d)
        self.buckets = np.geomspace(1e-6, self.r_cut, 64)
        self._bucket_tables: dict[int, tuple] = {}
        # finer bucket set for the law-exact quantile-interpolated sampler
        self.qbuckets = np.geomspace(1e-6, self.r_cut, 128)
        self._pgrid = np.unique(np.concatenate([
            np.geomspace(1e-5, 0.5, 128),
            1.0 - np.geomspace(1e-5, 0.5, 128),
        ]))
        self._quantiles: dict[int, np.ndarray] = {}

    def weight(self, r: np.ndarray) -> np.ndarray:
        """m(delta, r) = total mass of the kernel started at radius r."""
        r = np.asarray(r, dtype=float)
        out = np.ones_like(r)
        live = r < self.r_cut
        if np.any(live):
            out[live] += np.exp(self._log_excess(np.log(r[live])))
        return out

    def _density(self, rx: float, ry: np.ndarray) -> np.ndarray:
        """Unnormalized radial density of the correction move from radius
        rx: area * Q(delta; rx, ry) * ry^(d-1)."""
        ry = np.asarray(ry, dtype=float)
        q = np.zeros_like(ry)
        live = (rx + ry) ** 2 / (4.0 * self.delta) < _R_SUPPORT_Q
        if np.any(live):
            q[live] = palpha_correction(
                self.params, self.delta, np.full(live.sum(), rx), ry[live],
                level=self.level)
        return self.area * q * ry ** (self.d - 1)

    def _bucket(self, b: int) -> tuple:
        tab = self._bucket_tables.get(b)
        if tab is None:
            f = self._density(float(self.buckets[b]), self.nodes)
            seg = 0.5 * (f[:-1] + f[1:]) * np.diff(self.nodes)
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            dens = seg / np.diff(self.nodes)  # piecewise-constant density
            tab = (cum, dens)
            self._bucket_tables[b] = tab
        return tab

    def _qtable(self, b: int) -> np.ndarray:
        """Quantile function of the correction radius for bucket center b,
        tabulated on the shared probability grid."""
        tab = self._quantiles.get(b)
        if tab is None:
            f = self._density(float(self.qbuckets[b]), self.nodes)
            seg = 0.5 * (f[:-1] + f[1:]) * np.diff(self.nodes)
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            if cum[-1] <= 0.0:
                tab = np.full(self._pgrid.size, self.nodes[0])
            else:
                cdf = cum / cum[-1]
                keep = np.concatenate([[True], np.diff(cdf) > 0])
                tab = np.interp(self._pgrid, cdf[keep], self.nodes[keep])
            self._quantiles[b] = tab
        return tab

    def sample_radius(self, rx: float, u: float) -> float:
        """Law-exact correction radius draw: quantile interpolation in log
        bucket center between the two buckets bracketing rx."""
        j = int(np.clip(np.searchsorted(self.qbuckets, rx), 1,
                        self.qbuckets.size - 1))
        lo, hi = self.qbuckets[j - 1], self.qbuckets[j]
        s = float(np.clip(math.log(max(rx, lo) / lo) / math.log(hi / lo),
                          0.0, 1.0))
        ql = np.interp(u, self._pgrid, self._qtable(j - 1))
        qh = np.interp(u, self._pgrid, self._qtable(j))
        return float(math.exp((1.0 - s) * math.log(ql) + s * math.log(qh)))

    def sample_correction(self, rx: float, rng: np.random.Generator
                          ) -> tuple[float, float]:
        """Radius |y| drawn from the bucketed correction table, plus the
        importance weight (exact density at rx over sampling density)."""
        b = int(np.clip(np.searchsorted(self.buckets, rx), 0, 63))
        cum, dens = self._bucket(b)
        u = rng.random() * cum[-1]
        j = int(np.clip(np.searchsorted(cum, u) - 1, 0, dens.size - 1))
        while dens[j] <= 0.0:  # land inside a zero-mass segment: step back
            j -= 1
        ry = self.nodes[j] + (u - cum[j]) / dens[j]
        ry = float(np.clip(ry, self.nodes[j], self.nodes[j + 1]))
        target = float(self._density(rx, np.array([ry]))[0])
        target /= float(self.weight(np.array([rx]))[0]) - 1.0
        sampling = float(dens[j]) / float(cum[-1])
        return ry, target / sampling


_flow_tables: dict[tuple, _FlowTables] = {}


def _tables(params: KernelParams, delta: float, level: int = 1) -> _FlowTables:
    key = (params.d, params.alpha, round(delta, 14), level)
    tab = _flow_tables.get(key)
    if tab is None:
        tab = _FlowTables(params, delta, level)
        _flow_tables[key] = tab
    return tab


def _uniform_directions(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n, d))
    norms = np.linalg.norm(v, axis=1)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        v[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(v, axis=1)
    return v / norms[:, None]


def flow_step(cloud: ParticleCloud, delta: float, params: KernelParams,
              rng: np.random.Generator, level: int = 1) -> ParticleCloud:
    """One weighted kernel-flow jump: multiply each mass by the total-mass
    weight m(delta, x) and move the particle by the normalized kernel via the
    mixture decomposition (heat move with probability 1/m, else a draw from
    the normalized correction)."""
    if delta <= 0:
        raise ValueError("time step must be positive")
    if cloud.size == 0:
        return ParticleCloud.empty(cloud.positions.shape[1],
                                   cloud.time + delta)
    radii = cloud.radii()
    if math.isinf(params.alpha):
        w = np.ones_like(radii)
    else:
        w = _tables(params, delta, level).weight(radii)
    masses = cloud.masses * w
    pos = cloud.positions + math.sqrt(2.0 * delta) * rng.standard_normal(
        cloud.positions.shape)
    take_corr = rng.random(cloud.size) >= 1.0 / w
    if np.any(take_corr):
        tab = _tables(params, delta, level)
        idx = np.nonzero(take_corr)[0]
        dirs = _uniform_directions(idx.size, params.d, rng)
        for k, i in enumerate(idx):
            ry, ratio = tab.sample_correction(float(radii[i]), rng)
            pos[i] = ry * dirs[k]
            masses[i] *= ratio
    # positions exactly at the origin have probability zero; redraw
    zero = np.linalg.norm(pos, axis=1) == 0.0
    while np.any(zero):
        i = np.nonzero(zero)[0]
        pos[i] = cloud.positions[i] + math.sqrt(2.0 * delta) * \
            rng.standard_normal((i.size, params.d))
        zero = np.linalg.norm(pos, axis=1) == 0.0
    return ParticleCloud(pos, masses, cloud.time + delta)


# ---------------------------------------------------------------------------
# the Trotter particle path
# ---------------------------------------------------------------------------

def _prune_and_split(cloud: ParticleCloud, threshold: float,
                     cap: int) -> ParticleCloud:
    m = cloud.masses
    keep = m > 0.0
    pos, m = cloud.positions[keep], m[keep]
    if threshold > 0 and m.size and np.any(m > threshold):
        parts_pos, parts_m = [], []
        for x, mass in zip(pos, m):
            if mass > threshold:
                j = int(math.ceil(mass / threshold))
                parts_pos.append(np.repeat(x[None, :], j, axis=0))
                parts_m.append(np.full(j, mass / j))
            else:
                parts_pos.append(x[None, :])
                parts_m.append(np.array([mass]))
        pos = np.concatenate(parts_pos)
        m = np.concatenate(parts_m)
    if m.size > cap:
        raise ParticleCapError(m.size, cap)
    return ParticleCloud(pos, m, cloud.time)


def _sample_kernel_positions(parents_pos: np.ndarray, parents_r: np.ndarray,
                             w: np.ndarray, delta: float,
                             params: KernelParams, rng: np.random.Generator,
                             level: int) -> np.ndarray:
    """Independent draws from the normalized kernel of each parent via the
    heat/correction mixture; law-exact (no importance weights)."""
    m = parents_r.size
    d = parents_pos.shape[1]
    pos = parents_pos + math.sqrt(2.0 * delta) * rng.standard_normal((m, d))
    corr = rng.random(m) >= 1.0 / w
    if np.any(corr):
        tab = _tables(params, delta, level)
        idx = np.nonzero(corr)[0]
        dirs = _uniform_directions(idx.size, d, rng)
        us = rng.random(idx.size)
        for k, i in enumerate(idx):
            pos[i] = tab.sample_radius(float(parents_r[i]), float(us[k])) \
                * dirs[k]
    zero = np.linalg.norm(pos, axis=1) == 0.0
    while np.any(zero):
        i = np.nonzero(zero)[0]
        pos[i] = parents_pos[i] + math.sqrt(2.0 * delta) * \
            rng.standard_normal((i.size, d))
        zero = np.linalg.norm(pos, axis=1) == 0.0
    return pos


def _cluster_step(cloud: ParticleCloud, delta: float, params: ModelParams,
                  rng: np.random.Generator, cap: int,
                  level: int) -> ParticleCloud:
    """Exact composite (flow, branch) transition from an atomic state.

    The branch step sees the flowed measure only as the intensity of a
    Poisson cluster field, so sampling cluster count from the flowed total
    mass, cluster positions independently from the parents' normalized
    kernels, and cluster sizes from the branching law reproduces the
    level-n law exactly -- each cluster moves independently, which a single
    weighted atom per particle cannot represent for the Laplace functional.
    """
    d = cloud.positions.shape[1]
    if cloud.size == 0:
        return ParticleCloud.empty(d, cloud.time + delta)
    radii = cloud.radii()
    if math.isinf(params.kernel.alpha):
        w = np.ones_like(radii)
    else:
        w = _tables(params.kernel, delta, level).weight(radii)
    mw = cloud.masses * w
    total = float(mw.sum())
    beta, eta = params.beta, params.eta
    if beta == 1.0:
        scale = eta * delta
        count = int(rng.poisson(total / scale))
        sizes = scale * rng.standard_exponential(count)
    else:
        q = (eta * beta * delta) ** (-1.0 / beta)
        count = int(rng.poisson(total * q))
        sizes = _cluster_quantile(float(beta))(rng.random(count)) / q
    if count == 0:
        return ParticleCloud.empty(d, cloud.time + delta)
    if count > cap:
        raise ParticleCapError(count, cap)
    parent = rng.choice(cloud.size, size=count, p=mw / total)
    pos = _sample_kernel_positions(cloud.positions[parent], radii[parent],
                                   w[parent], delta, params.kernel, rng,
                                   level)
    return ParticleCloud(pos, sizes, cloud.time + delta)


def simulate_path(mu0: ParticleCloud, t: float, params: ModelParams,
                  config: SimConfig, rng: np.random.Generator,
                  level: int = 1) -> ParticleCloud:
    """Evolve an initial cloud to time t under the level-n splitting.

    The scheme pairs each flow jump with the branch step that follows it
    into one exact cluster transition (see _cluster_step), then realizes the
    final unpaired flow by per-particle jumps after mass-conserving
    fragmentation (the residual pairing bias of a single jump per atom
    scales with the squared atom mass, so fine fragments make it
    negligible).  With eta = 0 there is no branching and the path is the
    weighted flow alone.
    """
    rep = validate_hypothesis(params)
    if not rep.ok:
        raise ValueError("; ".join(rep.violations))
    n = config.trotter_n
    delta = 1.0 / n
    steps = int(round(t * n))
    if abs(steps - t * n) > 1e-9:
        raise ValueError("t must be a multiple of 1/trotter_n")
    threshold = (config.split_factor * float(np.max(mu0.masses))
                 if mu0.size else math.inf)
    cloud = mu0
    if params.eta == 0.0:
        for _ in range(steps + 1):
            cloud = flow_step(cloud, delta, params.kernel, rng, level)
            cloud = _prune_and_split(cloud, threshold, config.particle_cap)
        return ParticleCloud(cloud.positions, cloud.masses, t)
    if config.branch_first:
        # alternative ordering: branch the atomic state first, no initial
        # flow offset; clusters of a resting atom merge into its mass total
        masses = _csb_sample_many(cloud.masses, delta, params.eta,
                                  params.beta, rng)
        cloud = _prune_and_split(ParticleCloud(cloud.positions, masses,
                                               cloud.time),
                                 threshold, config.particle_cap)
        steps -= 1
    for _ in range(steps):
        cloud = _cluster_step(cloud, delta, params, rng,
                              config.particle_cap, level)
        cloud = _prune_and_split(cloud, threshold, config.particle_cap)
        if cloud.size == 0:
            return ParticleCloud.empty(mu0.positions.shape[1], t)
    # final flow: fragment atoms, then one weighted jump per fragment
    if cloud.size:
        frag = cloud.total_mass / 256.0
        cloud = _prune_and_split(cloud, min(threshold, frag),
                                 config.particle_cap)
    cloud = flow_step(cloud, delta, params.kernel, rng, level)
    return ParticleCloud(cloud.positions, cloud.masses, t)


def replicate_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-replicate streams from a splittable seed sequence."""
    return [np.random.default_rng(s)
            for s in np.random.SeedSequence(seed).spawn(n)]


def simulate_replicates(mu0: ParticleCloud, t: float, params: ModelParams,
                        config: SimConfig, level: int = 1
                        ) -> list[ParticleCloud]:
    """Independent replicates of simulate_path with deterministic seeding."""
    rngs = replicate_rngs(config.seed, config.replicates)
    return [simulate_path(mu0, t, params, config, rng, level) for rng in rngs]


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def _estimate(values: np.ndarray) -> Estimate:
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        raise ValueError("no replicates")
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(mean=mean, stderr=stderr, count=n)


def estimate_laplace(clouds: list[ParticleCloud], phi) -> Estimate:
    """Replicate mean/SE of exp(-<X, phi>)."""
    return _estimate([math.exp(-c.pairing(phi)) for c in clouds])


def estimate_mean(clouds: list[ParticleCloud], phi) -> Estimate:
    """Replicate mean/SE of <X, phi>."""
    return _estimate([c.pairing(phi) for c in clouds])
