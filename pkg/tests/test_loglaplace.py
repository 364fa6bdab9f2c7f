"""Nonlinear cumulant equation: exact pieces, solvers, and self-consistency."""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import beta as beta_fn

from pointbirth import loglaplace as ll


# --- exact scalar pieces ---------------------------------------------------

def test_csb_step_closed_form():
    # beta = 1: v / (1 + eta v t)
    assert ll.csb_step(1.0, 1.0, 1.0, 1.0) == pytest.approx(0.5)
    # beta = 1/2: v / (1 + eta v^{1/2} t / 2)^2
    assert ll.csb_step(1.0, 1.0, 1.0, 0.5) == pytest.approx(1.0 / 1.5 ** 2)
    assert ll.csb_step(2.0, 1.0, 0.0, 0.7) == 2.0


def test_csb_step_semigroup_property():
    v = np.array([0.0, 0.3, 1.0, 7.5])
    for beta in (0.4, 1.0):
        one = ll.csb_step(ll.csb_step(v, 0.3, 1.2, beta), 0.5, 1.2, beta)
        two = ll.csb_step(v, 0.8, 1.2, beta)
        assert np.allclose(one, two, rtol=1e-13)


def test_csb_step_is_ode_flow():
    # d/dt v = -eta v^{1+beta} at t=0, by central difference in the step size
    v, eta, beta = 1.7, 0.9, 0.6
    h = 1e-6
    deriv = (ll.csb_step(v, h, eta, beta) - v) / h
    assert abs(deriv + eta * v ** (1 + beta)) < 1e-4


def test_csb_step_validation():
    with pytest.raises(ValueError):
        ll.csb_step(1.0, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ll.csb_step(-1.0, 0.1, 1.0, 1.0)


def test_elementary_bound():
    lhs, rhs = ll.elementary_bound(-1.0, 1.0, 0.5)
    assert lhs == pytest.approx(1.0)
    assert rhs == pytest.approx(1.5 * math.sqrt(2.0) * 2.0)
    rng = np.random.default_rng(7)
    for _ in range(2000):
        a, b = rng.uniform(-10, 10, 2)
        beta = rng.uniform(1e-6, 1.0)
        lhs, rhs = ll.elementary_bound(a, b, beta)
        assert lhs <= rhs * (1 + 1e-12)


def test_i_integral():
    assert ll.i_integral(0.7, 0.0, 0.0) == pytest.approx(1.4)
    assert ll.i_integral(1.0, 0.25, 0.25) == pytest.approx(
        4.0 / 3.0 + beta_fn(0.75, 0.75))
    # brute-force quadrature of int (1 + s^-kappa) (t-s)^-lam ds
    t, kappa, lam = 0.7, 0.125, 0.25
    brute, _ = quad(lambda s: (1.0 + s ** -kappa) * (t - s) ** -lam,
                    0.0, t, limit=200)
    assert ll.i_integral(t, kappa, lam) == pytest.approx(brute, rel=1e-8)
    with pytest.raises(ValueError):
        ll.i_integral(1.0, 0.5, 0.6)
    with pytest.raises(ValueError):
        ll.i_integral(-1.0, 0.1, 0.1)


# --- hypothesis bookkeeping ------------------------------------------------

def test_reference_params(ref2, ref3):
    assert (ref2.d, ref2.alpha, ref2.beta, ref2.eta, ref2.rho) == \
        (2, 0.0, 1.0, 1.0, 2.0)
    assert ref2.kappa == pytest.approx(0.125)
    assert ref2.lam == pytest.approx(0.25)
    assert (ref3.d, ref3.beta, ref3.rho) == (3, 0.5, 1.6)
    assert ref3.kappa == pytest.approx(0.0625)
    assert ref3.lam == pytest.approx(0.25)
    assert ll.validate_hypothesis(ref2).ok
    assert ll.validate_hypothesis(ref3).ok


def test_hypothesis_violations(ref3):
    bad = ll.ModelParams(d=3, alpha=0.0, beta=1.0, eta=1.0, rho=1.6)
    rep = ll.validate_hypothesis(bad)
    assert not rep.ok and rep.violations
    with pytest.raises(ValueError):
        ll.ModelParams(d=3, alpha=0.0, beta=1.5, eta=1.0, rho=1.6)
    with pytest.raises(ValueError):
        ll.ModelParams(d=3, alpha=0.0, beta=0.5, eta=-1.0, rho=1.6)


# --- solvers on a short horizon -------------------------------------------

T_SHORT = 0.25


@pytest.fixture(scope="module")
def short2(ref2, phi2):
    return ll.picard_solve(ref2, phi2, T_SHORT)


def test_linearized_constant_coefficient(ref2, phi2):
    # psi = c: integrating factor gives v(t) = e^{-ct} S_t phi
    c = 0.8
    sol = ll.linearized_solve(ref2, phi2, c, T_SHORT)
    hom = ll.linearized_solve(ref2, phi2, None, T_SHORT)
    for i in (len(sol.times) // 2, len(sol.times) - 1):
        t = sol.times[i]
        expect = math.exp(-c * t) * hom.fields[i].values
        err = np.max(np.abs(sol.fields[i].values - expect))
        assert err < 1e-6 * np.max(expect)


def test_picard_self_consistency(ref2, phi2, short2):
    cfg = ll.SolverConfig(horizon=T_SHORT)
    from pointbirth.field import h_norm
    res = ll.residual(short2, phi2, ref2)
    assert np.max(res) <= 5.0 * cfg.picard_tol * h_norm(phi2, ref2.rho)
    assert short2.info["picard_iters"] <= cfg.max_picard_iters


def test_picard_strictly_below_free_flow(ref2, phi2, short2):
    # eta > 0 subtracts a positive integral: v(t) < S_t phi at interior nodes
    grid = short2.fields[0].grid
    n = short2.times.size - 1
    delta = short2.times[1] - short2.times[0]
    chain = ll._flow_chain(ref2.kernel, grid, delta, n, 1)
    phi_vals = phi2.evaluator(grid.nodes)
    s_phi = chain[n] @ phi_vals
    v = short2.fields[-1].values
    mask = s_phi > 1e-8
    assert np.all(v[mask] < s_phi[mask])
    assert np.all(v >= 0.0)


def test_picard_eta_zero_is_free_flow(ref2, phi2):
    params = ll.ModelParams(d=2, alpha=0.0, beta=1.0, eta=0.0, rho=2.0)
    sol = ll.picard_solve(params, phi2, T_SHORT)
    hom = ll.linearized_solve(params, phi2, None, T_SHORT)
    err = np.max(np.abs(sol.fields[-1].values - hom.fields[-1].values))
    assert err < 1e-12
    assert sol.info["picard_iters"] <= 2


def test_two_initializations_agree(ref2, phi2, short2):
    zero = ll.picard_solve(ref2, phi2, T_SHORT, initial="zero")
    from pointbirth.field import FieldSample, h_norm
    grid = short2.fields[0].grid
    diff = max(
        h_norm(FieldSample(grid, a.values - b.values, sing_order=0.5), 2.0)
        for a, b in zip(short2.fields, zero.fields))
    assert diff < 1e-5 * h_norm(phi2, ref2.rho)


def test_trotter_eta_zero_is_shifted_flow(phi2):
    # with no branching the scheme is pure flow: v_n(k/n) = S_{(k+1)/n} phi
    params = ll.ModelParams(d=2, alpha=0.0, beta=1.0, eta=0.0, rho=2.0)
    n = 4
    sol = ll.trotter_solve(params, phi2, T_SHORT, n)
    grid = sol.fields[0].grid
    steps = int(round(T_SHORT * n))
    chain = ll._flow_chain(params.kernel, grid, 1.0 / n, steps + 1, 1)
    phi_vals = phi2.evaluator(grid.nodes)
    expect = chain[steps + 1] @ phi_vals
    assert np.max(np.abs(sol.fields[-1].values - expect)) < 1e-10


def test_trotter_residual_decreases(ref2, phi2):
    res4 = np.max(ll.residual(ll.trotter_solve(ref2, phi2, T_SHORT, 4),
                              phi2, ref2))
    res16 = np.max(ll.residual(ll.trotter_solve(ref2, phi2, T_SHORT, 16),
                               phi2, ref2))
    assert res16 < res4


def test_trotter_domination(ref2, phi2):
    # 0 <= v_n(k/n) <= S_{(k+1)/n} phi nodewise
    n = 8
    sol = ll.trotter_solve(ref2, phi2, T_SHORT, n)
    grid = sol.fields[0].grid
    steps = int(round(T_SHORT * n))
    chain = ll._flow_chain(ref2.kernel, grid, 1.0 / n, steps + 1, 1)
    phi_vals = phi2.evaluator(grid.nodes)
    for k in range(steps + 1):
        v = sol.fields[k].values
        upper = chain[k + 1] @ phi_vals
        assert np.all(v >= 0.0)
        assert np.all(v <= upper + 1e-12)


def test_refinement_defect_reports_discretization_error(ref2, phi2, short2):
    res = np.max(ll.residual(short2, phi2, ref2))
    ref = ll.refinement_defect(short2, phi2, ref2)
    assert np.all(np.isfinite(ref))
    # the half-step defect sees the genuine time-discretization error, which
    # dwarfs the fixed-point closure of the converged iteration
    assert np.max(ref) > 10.0 * res


def test_solver_config_validation():
    with pytest.raises(ValueError):
        ll.SolverConfig(picard_tol=0.0)
    with pytest.raises(ValueError):
        ll.SolverConfig(trotter_n=0)
