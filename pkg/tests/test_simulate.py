"""Branching-particle scheme: exact samplers and unbiasedness checks."""

import math

import numpy as np
import pytest

from pointbirth import loglaplace as ll
from pointbirth import simulate as sim
from pointbirth import field as fld
from pointbirth.field import apply_palpha
from pointbirth.kernel import KernelParams


def test_particle_cloud_basics():
    c = sim.ParticleCloud.point_mass([1.0, 0.0], mass=2.0)
    assert c.size == 1 and c.total_mass == 2.0
    assert c.radii()[0] == pytest.approx(1.0)
    assert c.pairing(lambda r: r * 0 + 3.0) == pytest.approx(6.0)
    e = sim.ParticleCloud.empty(3)
    assert e.size == 0 and e.total_mass == 0.0 and e.pairing(abs) == 0.0


def test_estimate_z_score():
    est = sim.Estimate(mean=1.0, stderr=0.1, count=100)
    assert est.z_score(0.7) == pytest.approx(3.0)


def test_replicate_rngs_deterministic():
    a = sim.replicate_rngs(11, 4)
    b = sim.replicate_rngs(11, 4)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.random(5), rb.random(5))


def test_csb_sample_feller_exact():
    # beta = 1 (Feller diffusion): extinction, criticality, and the Laplace
    # transform against the exact exponent map
    z, delta, eta = 1.0, 0.5, 1.0
    rng = np.random.default_rng(3)
    draws = np.array([sim.csb_sample(z, delta, eta, 1.0, rng)
                      for _ in range(20000)])
    n = draws.size
    p_ext = float(np.mean(draws == 0.0))
    target_ext = math.exp(-z / (eta * delta))
    se = math.sqrt(target_ext * (1 - target_ext) / n)
    assert abs(p_ext - target_ext) <= 3 * se

    se_mean = draws.std(ddof=1) / math.sqrt(n)
    assert abs(draws.mean() - z) <= 3 * se_mean

    for lam in (0.5, 2.0):
        vals = np.exp(-lam * draws)
        target = math.exp(-z * ll.csb_step(lam, delta, eta, 1.0))
        se = vals.std(ddof=1) / math.sqrt(n)
        assert abs(vals.mean() - target) <= 3 * se


def test_csb_sample_stable_branch():
    # beta < 1: compound-Poisson representation against the exponent map
    z, delta, eta, beta = 1.0, 0.25, 1.0, 0.5
    rng = np.random.default_rng(5)
    draws = np.array([sim.csb_sample(z, delta, eta, beta, rng)
                      for _ in range(20000)])
    n = draws.size
    p_ext = float(np.mean(draws == 0.0))
    q = (eta * beta * delta) ** (-1.0 / beta)
    target_ext = math.exp(-z * q)
    se = math.sqrt(max(target_ext * (1 - target_ext) / n, 1e-12))
    assert abs(p_ext - target_ext) <= 4 * se
    for lam in (0.3, 1.0, 5.0):
        vals = np.exp(-lam * draws)
        target = math.exp(-z * ll.csb_step(lam, delta, eta, beta))
        se = vals.std(ddof=1) / math.sqrt(n)
        assert abs(vals.mean() - target) <= 3 * se


def test_csb_sample_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sim.csb_sample(-1.0, 0.1, 1.0, 1.0, rng)
    with pytest.raises(ValueError):
        sim.csb_sample(1.0, 0.0, 1.0, 1.0, rng)
    assert sim.csb_sample(0.0, 0.1, 1.0, 1.0, rng) == 0.0


def test_flow_step_weighted_mean():
    # one flow jump is unbiased for <X, phi>: compare against the kernel flow
    params = KernelParams(d=3, alpha=0.0)
    phi = fld.TestFunction.gaussian(3, rho=1.6)
    delta = 1.0 / 32.0
    n = 20000
    cloud = sim.ParticleCloud(
        np.tile([1.0, 0.0, 0.0], (n, 1)), np.ones(n))
    rng = np.random.default_rng(17)
    out = sim.flow_step(cloud, delta, params, rng)
    vals = out.masses * phi(out.radii())
    target = apply_palpha(params, delta, phi)(1.0)
    se = vals.std(ddof=1) / math.sqrt(n)
    assert abs(vals.mean() - target) <= 3 * se
    assert np.all(out.masses > 0.0)
    assert out.time == pytest.approx(delta)


def test_simulate_path_eta_zero_mean(phi2, ref2):
    # pure weighted flow: E<X_t, phi> = S_{t + 1/n} phi(x) (the scheme
    # front-loads one flow step)
    params = ll.ModelParams(d=2, alpha=0.0, beta=1.0, eta=0.0, rho=2.0)
    n, t = 8, 0.25
    cfg = sim.SimConfig(trotter_n=n, replicates=3000, seed=9)
    mu0 = sim.ParticleCloud.point_mass([1.0, 0.0])
    clouds = sim.simulate_replicates(mu0, t, params, cfg)
    est = sim.estimate_mean(clouds, phi2)
    target = apply_palpha(params.kernel, t + 1.0 / n, phi2)(1.0)
    assert abs(est.z_score(target)) <= 3.0


def test_simulate_path_critical_mass(ref2):
    # critical branching preserves expected total mass; with alpha large the
    # flow weight is ~1, so the replicate mean of total mass stays near 1
    params = ll.ModelParams(d=2, alpha=8.0, beta=1.0, eta=1.0, rho=2.0)
    cfg = sim.SimConfig(trotter_n=8, replicates=3000, seed=21)
    mu0 = sim.ParticleCloud.point_mass([1.0, 0.0])
    clouds = sim.simulate_replicates(mu0, 0.25, params, cfg)
    masses = np.array([c.total_mass for c in clouds])
    se = masses.std(ddof=1) / math.sqrt(masses.size)
    assert abs(masses.mean() - 1.0) <= 3 * se
    # extinction probability of critical Feller mass from z=1 by t: ~e^{-1/t}
    frac = float(np.mean(masses == 0.0))
    target = math.exp(-4.0)
    assert 0.25 * target < frac < 4.0 * target


def test_simulate_replicates_deterministic(ref2, phi2):
    cfg = sim.SimConfig(trotter_n=8, replicates=50, seed=33)
    mu0 = sim.ParticleCloud.point_mass([1.0, 0.0])
    a = sim.simulate_replicates(mu0, 0.25, ref2, cfg)
    b = sim.simulate_replicates(mu0, 0.25, ref2, cfg)
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.positions, cb.positions)
        assert np.array_equal(ca.masses, cb.masses)


def test_simulate_path_time_validation(ref2):
    cfg = sim.SimConfig(trotter_n=8, replicates=1, seed=0)
    mu0 = sim.ParticleCloud.point_mass([1.0, 0.0])
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sim.simulate_path(mu0, 0.3, ref2, cfg, rng)


def test_particle_cap(ref2):
    cfg = sim.SimConfig(trotter_n=8, replicates=1, seed=1, particle_cap=3,
                        split_factor=0.01)
    mu0 = sim.ParticleCloud.point_mass([1.0, 0.0])
    with pytest.raises(sim.ParticleCapError):
        sim.simulate_path(mu0, 0.25, ref2, cfg, np.random.default_rng(1))


def test_branch_first_ordering_runs(ref2, phi2):
    cfg = sim.SimConfig(trotter_n=8, replicates=200, seed=5,
                        branch_first=True)
    mu0 = sim.ParticleCloud.point_mass([1.0, 0.0])
    clouds = sim.simulate_replicates(mu0, 0.25, ref2, cfg)
    est = sim.estimate_laplace(clouds, phi2)
    assert 0.0 < est.mean <= 1.0
