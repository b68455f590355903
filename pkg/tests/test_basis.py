import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import align_signs, dense_basis, unit_eigenspace
from qbcal.basis import (BasisPair, SimulationEnsemble, build_complement_basis,
                         build_simulation_basis, denormalize, normalize,
                         project_observation, standardize_boundary)


def _ensemble(Y, P=1, seed=0):
    M = Y.shape[1]
    Z = np.random.default_rng(seed).random((M, P))
    return SimulationEnsemble(Y, Z)


def test_default_fraction_explains_99_percent(rng):
    scales = np.diag(np.geomspace(1, 1e-3, 12))
    Y = rng.standard_normal((30, 12)) @ scales @ rng.standard_normal((12, 12))
    b = build_simulation_basis(_ensemble(Y))
    assert b.variance_explained >= 0.99
    Yc = Y - Y.mean(axis=0)
    s = np.linalg.svd(Yc, compute_uv=False)
    frac = np.sum(s[:b.n_basis - 1] ** 2) / np.sum(s ** 2)
    assert frac >= 0.99
    assert np.sum(s[:b.n_basis - 2] ** 2) / np.sum(s ** 2) < 0.99


def test_constant_runs_give_ones_column_only():
    c = np.array([1.0, -2.0, 3.5, 0.25])
    Y = np.tile(c, (7, 1))
    b = build_simulation_basis(_ensemble(Y))
    assert b.n_basis == 1
    np.testing.assert_allclose(b.K[:, 0], 1.0)
    np.testing.assert_allclose(b.W[0], c)
    np.testing.assert_allclose(b.column_means, c)


def test_rank_one_matches_dense_svd_oracle():
    u = np.array([1.0, -1.0, 2.0, 0.5])
    coeff = np.array([1.0, -2.0, 0.5])
    Y = np.outer(u, coeff) + np.array([3.0, 1.0, -1.0])
    b = build_simulation_basis(_ensemble(Y), 0.99)
    K, W = dense_basis(Y, b.n_basis - 1)
    K = align_signs(K, b.K)
    W = np.linalg.lstsq(K, Y, rcond=None)[0]
    np.testing.assert_allclose(b.K, K, atol=1e-10)
    np.testing.assert_allclose(b.W, W, atol=1e-10)


def test_last_weight_row_reproduces_means(rng):
    Y = rng.standard_normal((20, 6))
    b = build_simulation_basis(_ensemble(Y), 0.9)
    np.testing.assert_allclose(b.W[-1], Y.mean(axis=0), atol=1e-12)


@pytest.mark.parametrize("frac", [0.0, -0.1, 1.5])
def test_rejects_bad_fraction(rng, frac):
    with pytest.raises(ValueError):
        build_simulation_basis(_ensemble(rng.standard_normal((5, 3))), frac)


def test_full_fraction_never_selects_null_directions():
    t = np.linspace(0, 1, 10)
    Y = np.column_stack([t, 2 * t, 3 * t, -t])      # rank one after centring
    b = build_simulation_basis(_ensemble(Y), 1.0)
    assert b.n_basis == 2
    assert np.all(np.linalg.norm(b.K, axis=0) > 0.1)


def test_ties_are_included():
    # two orthogonal centred directions of equal energy
    N = 8
    a = np.array([1, -1, 1, -1, 1, -1, 1, -1], float)
    c = np.array([1, 1, -1, -1, 1, 1, -1, -1], float)
    Y = np.column_stack([a, -a, c, -c])
    b = build_simulation_basis(_ensemble(Y), 0.4)
    assert b.n_basis == 3


def test_complement_two_points():
    b = BasisPair(np.ones((2, 1)), np.zeros((1, 2)), np.zeros(2), 1.0)
    H = build_complement_basis(b).H
    assert H.shape == (2, 1)
    np.testing.assert_allclose(np.abs(H[:, 0]), [1 / np.sqrt(2)] * 2, atol=1e-14)
    assert H[0, 0] == -H[1, 0]


def test_complement_against_eigen_oracle(rng):
    A = np.linalg.qr(rng.standard_normal((6, 3)))[0] * np.array([2.0, 1.0, 0.5])
    b = build_complement_basis(BasisPair(A, np.zeros((3, 4)), np.zeros(4), 1.0))
    P, Hor = unit_eigenspace(A)
    assert b.H.shape == (6, 3)
    np.testing.assert_allclose(b.H.T @ A, 0.0, atol=1e-12)
    np.testing.assert_allclose(b.H.T @ b.H, np.eye(3), atol=1e-12)
    # same subspace as the oracle eigenvectors
    np.testing.assert_allclose(b.H @ b.H.T, Hor @ Hor.T, atol=1e-10)
    np.testing.assert_allclose(b.H @ b.H.T, P, atol=1e-10)


def test_complement_rejects_full_basis():
    K = np.eye(3)
    with pytest.raises(ValueError):
        build_complement_basis(BasisPair(K, np.zeros((3, 2)), np.zeros(2), 1.0))


def _complete(rng, N=8, M=5):
    Y = rng.standard_normal((N, M))
    return build_complement_basis(build_simulation_basis(_ensemble(Y), 0.8))


def test_projection_in_span_of_k(rng):
    b = _complete(rng)
    y = b.K @ rng.standard_normal(b.n_basis)
    w, v = project_observation(y, b)
    np.testing.assert_allclose(v, 0.0, atol=1e-12)


def test_projection_of_first_complement_column(rng):
    b = _complete(rng)
    w, v = project_observation(b.H[:, 0], b)
    np.testing.assert_allclose(w, 0.0, atol=1e-12)
    e = np.zeros(v.size)
    e[0] = 1.0
    np.testing.assert_allclose(v, e, atol=1e-12)


def test_projection_matches_least_squares(rng):
    Y = rng.standard_normal((8, 4))
    b = build_complement_basis(build_simulation_basis(_ensemble(Y), 0.85))
    assert 1 < b.n_basis < 8
    y = rng.standard_normal(8)
    w, v = project_observation(y, b)
    sol = np.linalg.lstsq(np.column_stack([b.K, b.H]), y, rcond=None)[0]
    np.testing.assert_allclose(w, sol[:b.n_basis], atol=1e-9)
    np.testing.assert_allclose(v, sol[b.n_basis:], atol=1e-9)
    np.testing.assert_allclose(b.K @ w + b.H @ v, y, atol=1e-8 * np.linalg.norm(y))


def test_projection_rejects_nonfinite(rng):
    b = _complete(rng)
    y = np.zeros(8)
    y[2] = np.nan
    with pytest.raises(ValueError):
        project_observation(y, b)
    with pytest.raises(ValueError):
        project_observation(np.zeros(5), b)


def test_ensemble_validation():
    with pytest.raises(ValueError):
        SimulationEnsemble(np.zeros((4, 1)), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        SimulationEnsemble(np.zeros((4, 2)), np.array([[0.5], [1.2]]))
    with pytest.raises(ValueError):
        SimulationEnsemble(np.array([[np.inf, 0], [0, 0]]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        SimulationEnsemble(np.zeros((4, 2)), np.zeros((3, 1)))


def test_normalisation_round_trip(rng):
    lo, hi = np.array([1.0, -5.0]), np.array([3.0, 5.0])
    S = lo + rng.random((6, 2)) * (hi - lo)
    Y = rng.standard_normal((10, 6))
    e = SimulationEnsemble.from_original_units(Y, S, lo, hi, rng.standard_normal((10, 3)),
                                               x0_seed=4)
    assert e.design.min() >= 0 and e.design.max() <= 1
    np.testing.assert_allclose(e.to_original_units(e.design), S, atol=1e-12)
    np.testing.assert_allclose(denormalize(normalize(S, lo, hi), lo, hi), S)
    assert e.boundary.shape == (10, 4)


def test_x0_column_reproducible(rng):
    B = rng.standard_normal((50, 2)) * 3 + 1
    a = standardize_boundary(B, 9)
    b = standardize_boundary(B, 9)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a[:, 1:].mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(a[:, 1:].std(axis=0), 1, atol=1e-12)
    assert not np.array_equal(a[:, 0], standardize_boundary(B, 10)[:, 0])


# -- properties ------------------------------------------------------------

ensembles = st.tuples(st.integers(4, 30), st.integers(2, 12), st.integers(0, 2 ** 31)).map(
    lambda t: np.random.default_rng(t[2]).standard_normal((t[0], t[1]))
    @ np.diag(np.geomspace(1, 1e-2, t[1])) + np.random.default_rng(t[2] + 1).random(t[1]))


@given(ensembles, st.sampled_from([0.5, 0.9, 0.99]))
def test_basis_invariants(Y, frac):
    e = _ensemble(Y)
    try:
        b = build_complement_basis(build_simulation_basis(e, frac))
    except ValueError:
        return                                        # Q = N, no complement
    K, H = b.K, b.H
    norms = np.linalg.norm(K, axis=0)
    G = K.T @ K
    off = G - np.diag(np.diag(G))
    assert np.all(np.abs(off) < 1e-10 * np.outer(norms, norms) + 1e-12)
    assert np.all(np.abs(K[:, :-1].sum(axis=0)) < 1e-10 * np.maximum(norms[:-1], 1) * np.sqrt(K.shape[0]))
    np.testing.assert_allclose(H.T @ H, np.eye(H.shape[1]), atol=1e-10)
    np.testing.assert_allclose(K.T @ H, 0.0, atol=1e-10 * max(1.0, norms.max()))
    np.testing.assert_allclose(H @ H.T, b.projector(), atol=1e-8)
    # reconstruction residual bounded by the discarded variance
    Yc = Y - Y.mean(axis=0)
    R = Y - K @ b.W
    assert np.sum(R ** 2) <= (1 - frac + 1e-6) * np.sum(Yc ** 2) + 1e-12
    # idempotence
    for m in range(min(3, Y.shape[1])):
        w, v = project_observation(Y[:, m], b)
        w2, v2 = project_observation(K @ w + H @ v, b)
        np.testing.assert_allclose(w2, w, atol=1e-10 * (1 + np.abs(w).max()))
        np.testing.assert_allclose(v2, v, atol=1e-10 * (1 + np.abs(v).max()))


@given(ensembles)
def test_basis_columns_uncorrelated(Y):
    b = build_simulation_basis(_ensemble(Y), 0.9)
    if b.n_basis < 3:
        return
    C = np.corrcoef(b.K[:, :-1].T)
    np.testing.assert_allclose(C - np.diag(np.diag(C)), 0.0, atol=1e-8)


@given(arrays(float, (6, 3), elements=st.floats(-1e3, 1e3)))
def test_weights_solve_projection(Y):
    if np.ptp(Y, axis=0).max() == 0:
        return
    try:
        b = build_simulation_basis(_ensemble(Y), 0.95)
    except ValueError:
        return
    np.testing.assert_allclose(b.W, (b.K.T @ Y) / b.norms2[:, None], rtol=1e-12, atol=1e-9)
