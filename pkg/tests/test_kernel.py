"""Pointwise kernel values against closed-form and quadrature oracles."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from pointbirth import kernel as K


P2 = K.KernelParams(d=2, alpha=0.0)
P3 = K.KernelParams(d=3, alpha=0.0)


def test_heat_kernel_total_mass_d3():
    # int P(t;x,y) dy = 1 by radial quadrature around the center
    for t in (0.25, 1.0):
        val, _ = quad(lambda s: 4.0 * math.pi * s * s
                      * K.radial_heat_kernel(3, t, s), 0.0, 40.0, limit=200)
        assert abs(val - 1.0) < 1e-10


def test_heat_kernel_matches_gaussian():
    x = np.array([1.0, -0.5, 0.25])
    y = np.array([0.2, 0.4, -1.0])
    t = 0.7
    expect = (4.0 * math.pi * t) ** -1.5 * math.exp(
        -float(np.sum((x - y) ** 2)) / (4.0 * t))
    assert abs(K.heat_kernel(3, t, x, y) / expect - 1.0) < 1e-14


def test_pbar_direct_substitution():
    # d=2, t=4, |x|=4, |y|=1: t^{-1/2} phi(x) phi(y) e^{-|x|^2/4t} e^{-|y|^2/4t}
    expect = 0.5 * 0.5 * 1.0 * math.exp(-1.0) * math.exp(-1.0 / 16.0)
    got = K.pbar_kernel(2, 4.0, np.array([4.0, 0.0]), np.array([0.0, 1.0]))
    assert abs(got / expect - 1.0) < 1e-14


def test_palpha_d3_alpha0_closed_form():
    # x = y = (1,0,0), t = 1: the alpha-integral term vanishes at alpha = 0
    # and the remaining two closed-form terms sum to (4 pi)^{-3/2} (1 + 2/e)
    expect = (4.0 * math.pi) ** -1.5 * (1.0 + 2.0 * math.exp(-1.0))
    assert abs(expect - 0.03896499279789428) < 1e-17
    val = K.palpha_kernel(P3, 1.0, np.array([1.0, 0.0, 0.0]),
                          np.array([1.0, 0.0, 0.0]))
    assert abs(val.total / expect - 1.0) < 1e-12
    assert val.alpha_corr == pytest.approx(0.0, abs=1e-18)


def test_palpha_d3_closed_form_vs_quadrature():
    # the erfcx closed form of the alpha term against adaptive quadrature
    for alpha in (-1.0, 0.5, 2.0):
        p = K.KernelParams(d=3, alpha=alpha)
        for rx, ry in ((0.5, 1.5), (1.0, 1.0)):
            closed = K.palpha_correction(p, 0.8, rx, ry, method="closed")
            brute = K.palpha_correction(p, 0.8, rx, ry, method="quad")
            scale = max(abs(closed), (4.0 * math.pi * 0.8) ** -1.5)
            assert abs(closed - brute) / scale < 1e-10


def test_correction_positive_and_decreasing_in_alpha():
    # Q^alpha > 0 (mass creation) and decreasing in alpha at fixed (t,rx,ry)
    alphas = (-1.0, 0.0, 1.0, 3.0)
    for params_d in (2, 3):
        vals = [K.palpha_correction(K.KernelParams(params_d, a), 0.5, 0.7, 1.2)
                for a in alphas]
        assert all(v > 0.0 for v in vals)
        assert all(a > b for a, b in zip(vals, vals[1:]))


def test_total_mass_d3_against_radial_quadrature():
    # m(1, |x|=1) = 1 (heat mass) + int 4 pi r^2 * image(1; 1, r) dr with
    # image(t; rx, ry) = (2t/(rx ry)) (4 pi t)^{-3/2} e^{-(rx+ry)^2/4t}
    tail, _ = quad(
        lambda r: 4.0 * math.pi * r * r * (2.0 / r)
        * (4.0 * math.pi) ** -1.5 * math.exp(-((1.0 + r) ** 2) / 4.0),
        0.0, 40.0, limit=200)
    expect = 1.0 + tail
    got = K.palpha_total_mass(P3, 1.0, 1.0)
    assert abs(got / expect - 1.0) < 1e-10
    assert abs(got - 1.3992824567484914) < 1e-12


def test_total_mass_exceeds_one():
    for p in (P2, P3, K.KernelParams(2, 1.5), K.KernelParams(3, -0.5)):
        for t, a in ((0.1, 0.5), (1.0, 2.0)):
            assert K.palpha_total_mass(p, t, a) >= 1.0


def test_heat_residual_small():
    # P^alpha solves the heat equation away from the origin
    x3 = np.array([1.0, 0.0, 0.0])
    assert abs(K.heat_residual(P3, 1.0, x3, x3)) < 1e-3
    x2 = np.array([0.8, 0.3])
    y2 = np.array([-0.4, 0.9])
    assert abs(K.heat_residual(P2, 0.75, x2, y2)) < 1e-3


def test_palpha_batch_decomposition():
    rx = np.array([0.5, 1.0, 2.0])
    ry = np.array([1.0, 1.0, 0.5])
    c = np.array([-0.5, 0.0, 1.0])
    for p in (P2, P3):
        parts = K.palpha_batch(p, 0.6, rx, ry, c)
        total = parts["heat"] + parts["image"] + parts["alpha_corr"]
        assert np.allclose(parts["total"], total, rtol=0, atol=0)
        assert np.all(parts["total"] >= parts["heat"])
        if p.d == 2:
            assert np.allclose(parts["image"], 0.0)


def test_symmetry_in_radii():
    for p in (P2, P3):
        a = K.palpha_correction(p, 0.4, 0.6, 1.7)
        b = K.palpha_correction(p, 0.4, 1.7, 0.6)
        assert abs(a / b - 1.0) < 1e-12


def test_input_validation():
    with pytest.raises(ValueError):
        K.KernelParams(d=4, alpha=0.0)
    with pytest.raises(ValueError):
        K.palpha_kernel(P3, 0.0, np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        K.palpha_kernel(P3, 1.0, np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        K.palpha_correction(P2, 1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        K.palpha_total_mass(P3, 1.0, 0.0)
