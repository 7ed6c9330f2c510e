import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from carleman_lab.geometry import c0_gap, distance_extrema, select_beta
from carleman_lab.weights import (
    CarlemanParams,
    evaluate_weight,
    log_weight,
    pseudoconvexity_gap,
    weight_jet,
)

PHI_EXAMPLE = 3.1189612072867922202  # exp(1.1375), mpmath


def params(**kw):
    base = dict(x0=(-0.5, 0.5), lam=0.5, beta=0.9, t0=0.0, s=1.0)
    base.update(kw)
    return CarlemanParams(**base)


def test_weight_example():
    psi, phi = evaluate_weight(params(), np.array([1.0, 1.0]), 0.5)
    assert psi == pytest.approx(2.275, rel=1e-15)
    assert phi == pytest.approx(PHI_EXAMPLE, rel=1e-14)


def test_time_term_vanishes_at_t0():
    psi, _ = evaluate_weight(params(t0=0.3), np.array([0.0, 0.5]), 0.3)
    assert psi == pytest.approx(0.25, rel=1e-15)


def test_small_lambda_flattens_weight():
    x = np.random.default_rng(0).uniform(0, 1, size=(50, 2))
    _, phi = evaluate_weight(params(lam=1e-12), x, 0.7)
    assert np.max(np.abs(phi - 1.0)) < 1e-10


def test_jet_example_and_gap():
    jet = weight_jet(params(), np.array([1.0, 1.0]), 0.5)
    assert np.allclose(jet.grad_psi, [3.0, 1.0])
    assert jet.psi_t == pytest.approx(-0.9)
    assert jet.gap == pytest.approx(-9.19, rel=1e-14)
    assert pseudoconvexity_gap(params(), np.array([1.0, 1.0]), 0.5) == pytest.approx(-9.19, rel=1e-14)
    w = np.array([0.3, -1.7])
    assert w @ jet.hess_psi @ w == pytest.approx(2 * w @ w)


def test_gap_negative_at_t0_and_zero_on_cone():
    p = params(beta=0.7)
    x = np.random.default_rng(1).uniform(0, 1, size=(100, 2))
    r = np.linalg.norm(x - np.array(p.x0), axis=1)
    assert np.all(pseudoconvexity_gap(p, x, 0.0) <= -4 * 0.25 + 1e-12)
    assert np.allclose(pseudoconvexity_gap(p, x, r / p.beta), 0.0, atol=1e-12)


def test_log_weight():
    p = params(s=3.0)
    x = np.array([0.2, 0.9])
    assert log_weight(p, x, 0.4) == pytest.approx(6.0 * evaluate_weight(p, x, 0.4)[1])


@pytest.mark.parametrize("bad", [dict(lam=0.0), dict(s=-1.0), dict(beta=1.0), dict(beta=0.0), dict(t0=-0.1)])
def test_params_validated(bad):
    with pytest.raises(ValueError):
        params(**bad)


# ---------------------------------------------------------------- symbolic oracle

x1, x2, t = sp.symbols("x1 x2 t", real=True)


def symbolic_phi(p):
    psi = (x1 - p.x0[0]) ** 2 + (x2 - p.x0[1]) ** 2 - p.beta * (t - p.t0) ** 2
    return psi, sp.exp(p.lam * psi)


def wave(expr):
    return sp.diff(expr, t, 2) - sp.diff(expr, x1, 2) - sp.diff(expr, x2, 2)


@pytest.mark.parametrize("lam, beta, t0", [(1.0, 0.9, 0.0), (0.3, 0.5, 0.4), (2.0, 0.78125, 1.0)])
def test_jet_matches_symbolic_derivatives(lam, beta, t0):
    p = params(lam=lam, beta=beta, t0=t0)
    psi, phi = symbolic_phi(p)
    exprs = {
        "psi": psi, "phi": phi,
        "phi_t": sp.diff(phi, t), "phi_tt": sp.diff(phi, t, 2),
        "lap_phi": sp.diff(phi, x1, 2) + sp.diff(phi, x2, 2),
        "wave_phi": wave(phi), "wave_phi_t": wave(sp.diff(phi, t)), "wave2_phi": wave(wave(phi)),
    }
    vec = {
        "grad_phi": [sp.diff(phi, x1), sp.diff(phi, x2)],
        "grad_phi_t": [sp.diff(phi, x1, t), sp.diff(phi, x2, t)],
        "grad_wave_phi": [sp.diff(wave(phi), x1), sp.diff(wave(phi), x2)],
    }
    hess = [[sp.diff(phi, a, b) for b in (x1, x2)] for a in (x1, x2)]
    rng = np.random.default_rng(7)
    for _ in range(5):
        xv, tv = rng.uniform(0, 1, 2), rng.uniform(0, 2)
        jet = weight_jet(p, xv, tv)
        sub = {x1: xv[0], x2: xv[1], t: tv}
        for name, e in exprs.items():
            ref = float(e.evalf(subs=sub))
            assert float(getattr(jet, name)) == pytest.approx(ref, rel=1e-11, abs=1e-11), name
        for name, es in vec.items():
            ref = [float(e.evalf(subs=sub)) for e in es]
            assert np.allclose(getattr(jet, name), ref, rtol=1e-11, atol=1e-11), name
        ref = [[float(e.evalf(subs=sub)) for e in row] for row in hess]
        assert np.allclose(jet.hess_phi, ref, rtol=1e-11, atol=1e-11)


def test_jet_one_dimensional_against_symbols():
    p = CarlemanParams((-1.0,), lam=0.8, beta=0.6)
    x = sp.symbols("x", real=True)
    phi = sp.exp(p.lam * ((x + 1) ** 2 - p.beta * t**2))
    w = sp.diff(phi, t, 2) - sp.diff(phi, x, 2)
    w2 = sp.diff(w, t, 2) - sp.diff(w, x, 2)
    jet = weight_jet(p, np.array([0.37]), 0.8)
    sub = {x: 0.37, t: 0.8}
    assert float(jet.wave2_phi) == pytest.approx(float(w2.evalf(subs=sub)), rel=1e-11)
    assert float(jet.lap_phi) == pytest.approx(float(sp.diff(phi, x, 2).evalf(subs=sub)), rel=1e-11)


def test_gradient_finite_differences_second_order():
    p = params(lam=1.0)
    x, tv = np.array([0.4, 0.7]), 0.6
    exact = weight_jet(p, x, tv).grad_psi
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        fd = []
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            # psi is quadratic, so use phi to see a nonzero truncation error
            fd.append((evaluate_weight(p, x + e, tv)[1] - evaluate_weight(p, x - e, tv)[1]) / (2 * h))
        errs.append(np.max(np.abs(np.array(fd) - weight_jet(p, x, tv).grad_phi)))
        assert np.allclose(exact, 2 * (x - np.array(p.x0)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders > 1.9) & (orders < 2.1))


@given(st.floats(0.05, 3.0), st.floats(0.05, 0.95), st.floats(0.0, 1.0), st.floats(0.0, 1.0),
       st.floats(0.0, 2.0), st.floats(0.01, 0.5))
def test_weight_monotone_in_distance_and_time(lam, beta, a, b, tv, step):
    p = params(lam=lam, beta=beta)
    x = np.array([a, b])
    _, phi = evaluate_weight(p, x, tv)
    farther = np.array(p.x0) + (x - np.array(p.x0)) * (1 + step)
    assert evaluate_weight(p, farther, tv)[1] > phi
    assert evaluate_weight(p, x, tv + step)[1] < phi


@pytest.mark.parametrize("lam", [0.1, 0.5, 1.0, 2.0])
def test_c0_positive_for_selected_beta(unit_square, lam):
    x0, T = (-0.5, 0.5), 2.0
    beta = select_beta(unit_square, x0, T)
    ext = distance_extrema(unit_square, x0)
    assert c0_gap(ext, lam, beta, T) > 0
    assert math.exp(lam * ext.d0**2) > math.exp(lam * (ext.d1**2 - beta * T**2))
