"""Special functions against the integral-representation quadrature oracle."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from pointbirth import specfun


def k0_oracle(z: float) -> float:
    """Brute-force quadrature of K0(z) = int_0^inf e^{-z cosh u} du.

    Integrates the scaled form e^{-z(cosh u - 1)} for relative accuracy at
    large z, then removes the scaling.
    """
    upper = math.acosh(1.0 + 745.0 / z)
    val, _ = quad(lambda u: math.exp(-z * (math.cosh(u) - 1.0)), 0.0, upper,
                  limit=300, epsabs=0.0, epsrel=1e-11)
    return val * math.exp(-z)


def k0_tilde_oracle(z: float) -> float:
    """e^z (2z/pi)^{1/2} K0(z) with the quadrature oracle for K0."""
    return math.exp(z) * math.sqrt(2.0 * z / math.pi) * k0_oracle(z)


def test_k0_matches_integral_oracle():
    zs = np.geomspace(1e-4, 50.0, 40)
    vals = specfun.macdonald_k0(zs)
    for z, v in zip(zs, vals):
        assert abs(v / k0_oracle(float(z)) - 1.0) < 1e-8


def test_k0_frozen_values():
    # quadrature-oracle checkpoints
    assert abs(specfun.macdonald_k0(1.0) - 0.4210244382) < 1e-9
    assert abs(specfun.macdonald_k0(10.0) / 1.778e-5 - 1.0) < 1e-3


def test_k0_branch_continuity():
    # series and asymptotic branches must agree across the cutoff
    cut = specfun.DEFAULT_ACCURACY.series_cutoff
    below = specfun.macdonald_k0(cut * (1.0 - 1e-12))
    above = specfun.macdonald_k0(cut * (1.0 + 1e-12))
    assert abs(below / above - 1.0) < 1e-10


def test_k0_tilde_definition_and_value():
    zs = np.geomspace(1e-3, 40.0, 15)
    lhs = specfun.k0_tilde(zs)
    rhs = np.exp(zs) * np.sqrt(2.0 * zs / np.pi) * specfun.macdonald_k0(zs)
    assert np.max(np.abs(lhs / rhs - 1.0)) < 1e-12
    assert specfun.k0_tilde(0.0) == 0.0
    assert abs(specfun.k0_tilde(1.0) / 0.9131 - 1.0) < 1e-3


def test_k0_tilde_endpoints():
    # small-z limit behaviour: agrees with e^z (2z/pi)^{1/2} log(1/z)
    z = 1e-6
    limit_expr = math.exp(z) * math.sqrt(2.0 * z / math.pi) * (-math.log(z))
    assert abs(specfun.k0_tilde(z) - limit_expr) < 1e-3
    assert abs(specfun.k0_tilde(z) - k0_tilde_oracle(z)) < 1e-3
    # large-z: bounded, approaching 1 from below
    assert abs(specfun.k0_tilde(50.0) - k0_tilde_oracle(50.0)) < 1e-3
    zs = np.geomspace(1e-8, 1e3, 200)
    vals = specfun.k0_tilde(zs)
    assert np.all(vals >= 0.0)
    assert np.all(vals <= 1.0 + 1e-9)
    assert vals[-1] > 0.999


def test_gamma_values():
    assert abs(specfun.gamma(1.0) - 1.0) < 1e-13
    assert abs(specfun.gamma(0.5) - math.sqrt(math.pi)) < 1e-13
    assert abs(specfun.gamma(5.0) - 24.0) < 1e-11
    us = np.linspace(0.1, 10.0, 50)
    from scipy.special import gamma as sp_gamma
    assert np.max(np.abs(specfun.gamma(us) / sp_gamma(us) - 1.0)) < 1e-12


def test_input_validation():
    with pytest.raises(ValueError):
        specfun.macdonald_k0(0.0)
    with pytest.raises(ValueError):
        specfun.k0_tilde(-1.0)
    with pytest.raises(ValueError):
        specfun.gamma(-2.0)
    with pytest.raises(ValueError):
        specfun.AccuracySpec(rel_tol=0.0)
    with pytest.raises(ValueError):
        specfun.AccuracySpec(series_cutoff=-1.0)
