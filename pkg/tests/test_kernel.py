import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from oracles import rho_loop, zeta_loop
from qbcal.kernel import (DiscrepancyKernelParams, EmulatorKernelParams, PrecisionPrior,
                          add_jitter, default_simulation_prior, gram, log_beta_ard,
                          log_gamma_pdf, log_prior, observation_prior, rho, zeta)

unit = st.floats(0.01, 0.99)


def test_rho_hand_cases():
    p = EmulatorKernelParams(0.5, 0.5, [0.5])
    assert rho([0.3], [0.3], p, True) == pytest.approx(2.0, abs=1e-12)
    assert rho([0.3], [0.3], p, False) == pytest.approx(1.0, abs=1e-12)
    assert rho([0.0], [0.5], p, False) == pytest.approx(0.5, abs=1e-12)


def test_rho_matches_loop_oracle_on_table():
    cases = [((0.2, 0.7), (0.9, 0.1), 0.3, 0.8, (0.4, 0.95)),
             ((0.0, 0.0, 1.0), (1.0, 0.5, 0.0), 0.7, 0.2, (0.1, 0.5, 0.99)),
             ((0.5,), (0.25,), 0.05, 0.95, (0.001,))]
    for zi, zj, s2, e2, beta in cases:
        p = EmulatorKernelParams(s2, e2, beta)
        for same in (False, True):
            assert abs(rho(zi, zj, p, same) - rho_loop(zi, zj, s2, e2, beta, same)) < 1e-12


@pytest.mark.parametrize("s2,e2", [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.0)])
def test_rho_rejects_degenerate(s2, e2):
    p = EmulatorKernelParams(s2, e2, [0.5])
    with pytest.raises(ValueError):
        rho([0.1], [0.2], p, False)


def test_zeta_hand_cases():
    assert zeta([0.4, 1.0], [0.4, 1.0], DiscrepancyKernelParams(0.5, [0.3, 0.2])) == \
        pytest.approx(1.0, abs=1e-12)
    assert zeta([0.0, 5.0], [3.0, -2.0], DiscrepancyKernelParams(0.2, [1.0, 1.0])) == \
        pytest.approx(4.0, abs=1e-12)
    assert zeta([0.0], [1.0], DiscrepancyKernelParams(0.5, [0.5])) == \
        pytest.approx(0.0625, abs=1e-12)


def test_zeta_matches_loop_oracle():
    r = np.random.default_rng(1)
    for _ in range(20):
        xi, xj = r.standard_normal(4), r.standard_normal(4)
        tau2, alpha = r.uniform(0.05, 0.95), r.uniform(0.05, 1.0, 4)
        v = zeta(xi, xj, DiscrepancyKernelParams(tau2, alpha))
        assert abs(v - zeta_loop(xi, xj, tau2, alpha)) < 1e-12 * max(1.0, abs(v))


@pytest.mark.parametrize("tau2,alpha", [(0.0, [0.5]), (1.0, [0.5]), (0.5, [0.0])])
def test_zeta_rejects_degenerate(tau2, alpha):
    with pytest.raises(ValueError):
        zeta([0.0], [1.0], DiscrepancyKernelParams(tau2, alpha))


def test_gram_singleton_and_white_term():
    p = EmulatorKernelParams(0.4, 0.3, [0.2, 0.6])
    z = np.array([[0.1, 0.8]])
    G = gram(z, "emulator", p)
    assert G.shape == (1, 1)
    assert G[0, 0] == pytest.approx(rho(z[0], z[0], p, True), abs=1e-14)
    G2 = gram(np.vstack([z, z]), "emulator", p)
    assert G2[0, 1] == pytest.approx(G2[0, 0] - p.nugget, abs=1e-12)


def test_gram_rejects_empty_and_unknown():
    p = EmulatorKernelParams(0.4, 0.3, [0.2])
    with pytest.raises(ValueError):
        gram(np.zeros((0, 1)), "emulator", p)
    with pytest.raises(ValueError):
        gram(np.zeros((2, 1)), "matern", p)


def test_gram_psd_on_random_sets():
    r = np.random.default_rng(7)
    worst = np.inf
    for k in range(100):
        n, d = r.integers(2, 30), r.integers(1, 5)
        if k % 2:
            pts = r.random((n, d))
            p = EmulatorKernelParams(r.uniform(0.05, 0.95), r.uniform(0.05, 0.95),
                                     r.uniform(0.01, 1.0, d))
            G = gram(pts, "emulator", p)
        else:
            pts = r.standard_normal((n, d))
            p = DiscrepancyKernelParams(r.uniform(0.05, 0.95), r.uniform(0.01, 1.0, d))
            G = gram(pts, "discrepancy", p)
        np.testing.assert_array_equal(G, G.T)
        worst = min(worst, np.linalg.eigvalsh(G).min() / max(1.0, np.abs(G).max()))
    assert worst >= -1e-10


def test_jitter_makes_positive_definite():
    pts = np.zeros((4, 1))
    G = gram(pts, "discrepancy", DiscrepancyKernelParams(0.5, [0.5]))
    np.linalg.cholesky(add_jitter(G))
    np.testing.assert_allclose(np.diag(add_jitter(G)) - np.diag(G), 1e-10)


# -- priors ----------------------------------------------------------------

def test_uniform_block_prior():
    assert log_prior(EmulatorKernelParams(0.3, 0.6, [0.2, 0.9])) == 0.0
    assert log_prior(EmulatorKernelParams(0.3, 1.2, [0.2])) == -np.inf
    assert log_prior(EmulatorKernelParams(0.3, 0.5, [0.0])) == -np.inf


def test_beta_ard_hand_value():
    expected = math.log(0.1) - 0.9 * math.log(0.5)
    assert log_beta_ard([0.5]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(-1.6786, abs=2e-4)     # quoted to 4 d.p.
    assert log_beta_ard([0.5]) == pytest.approx(stats.beta(1, 0.1).logpdf(0.5), abs=1e-12)
    assert log_beta_ard([1.2]) == -np.inf
    assert log_beta_ard([0.0]) == -np.inf
    assert np.isfinite(log_beta_ard([1.0]))


def test_discrepancy_block_prior():
    block = DiscrepancyKernelParams(0.4, [0.5, 0.5])
    assert log_prior(block) == pytest.approx(2 * (math.log(0.1) - 0.9 * math.log(0.5)))
    assert log_prior(DiscrepancyKernelParams(1.0, [0.5])) == -np.inf


def test_gamma_hand_value():
    # Gamma(2, rate b) at lambda = 2/b: 2 log b - log Gamma(2) + log(2/b) - 2
    for b in (0.1, 1.0, 7.5):
        expected = math.log(b) + math.log(2.0) - 2.0
        assert log_gamma_pdf(2.0 / b, 2.0, b) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(stats.gamma(2.0, scale=1 / b).logpdf(2 / b), abs=1e-12)
    assert log_gamma_pdf(-1.0, 2.0, 1.0) == -np.inf


def test_precision_prior_k_scaling():
    pr = PrecisionPrior(3.0, 6.0, k_scaled=True)
    assert log_prior(pr, 0.5, 2.0) == pytest.approx(stats.gamma(3.0, scale=2 / 6.0).logpdf(0.5))
    with pytest.raises(ValueError):
        pr.effective_rate()
    with pytest.raises(ValueError):
        PrecisionPrior(0.0, 1.0)
    with pytest.raises(ValueError):
        PrecisionPrior(1.0, np.inf)
    with pytest.raises(TypeError):
        log_prior(3.0)


def test_default_priors():
    pr = default_simulation_prior([5.0, 2.0])
    assert pr.shape == 2.0 and pr.k_scaled
    assert pr.rate == pytest.approx(np.sqrt(np.finfo(float).eps) * 5.0)
    ob = observation_prior(0.04, 100, c=0.1)
    assert ob.shape == pytest.approx(10.0) and ob.rate == pytest.approx(0.4)
    assert ob.shape / ob.rate == pytest.approx(1 / 0.04)
    with pytest.raises(ValueError):
        observation_prior(0.04, 100, c=0.01)
    with pytest.raises(ValueError):
        observation_prior(0.04, 100, c=1.5)
    observation_prior(0.04, 100, c=0.02)


# -- properties ------------------------------------------------------------

vec3 = st.lists(st.floats(0, 1), min_size=3, max_size=3)


@given(vec3, vec3, unit, unit, st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3))
def test_rho_symmetric(zi, zj, s2, e2, beta):
    p = EmulatorKernelParams(s2, e2, beta)
    assert rho(zi, zj, p, False) == pytest.approx(rho(zj, zi, p, False), rel=1e-14)


@given(st.floats(0.0, 0.45), st.floats(0.01, 0.5), st.floats(0.01, 0.99))
def test_rho_monotone_decay(d, extra, b):
    p = EmulatorKernelParams(0.5, 0.5, [b])
    near = rho([0.5], [0.5 + d], p, False)
    far = rho([0.5], [0.5 + d + extra], p, False)
    assert far < near
    one = EmulatorKernelParams(0.5, 0.5, [1.0])
    assert rho([0.5], [0.5 + d], one, False) == rho([0.5], [0.5 + d + extra], one, False)


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.integers(0, 2), st.floats(0.1, 2.0), st.floats(0.05, 0.99), unit)
def test_zeta_ard_removal(xi, xj, s, shift, a, tau2):
    alpha = np.full(3, 0.6)
    moved = list(xi)
    moved[s] += shift
    alpha_off = alpha.copy()
    alpha_off[s] = 1.0
    p_off = DiscrepancyKernelParams(tau2, alpha_off)
    assert zeta(moved, xj, p_off) == pytest.approx(zeta(xi, xj, p_off), rel=1e-12)
    alpha_on = alpha.copy()
    alpha_on[s] = a
    p_on = DiscrepancyKernelParams(tau2, alpha_on)
    if abs(xi[s] - xj[s]) != abs(moved[s] - xj[s]):
        assert zeta(moved, xj, p_on) != zeta(xi, xj, p_on) or zeta(xi, xj, p_on) == 0.0
