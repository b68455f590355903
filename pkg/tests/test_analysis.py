import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import r2_dense
from qbcal.analysis import (SAME_SIZE_RULE, DiscrepancyReport, InputAttribution, ModelEntry,
                            bayes_factor, build_discrepancy_report, compare_models,
                            compute_r2, evidence_label, rmse)
from qbcal.basis import BasisPair, build_complement_basis
from qbcal.inference import (AnnealingSchedule, DiscrepancyProblem, PosteriorArchive,
                             weighted_median)
from qbcal.kernel import PrecisionPrior


def _setup(N=30, seed=0):
    r = np.random.default_rng(seed)
    t = np.linspace(0, 1, N)
    trend = np.sin(2 * np.pi * t)
    K = np.column_stack([trend - trend.mean(), np.ones(N)])
    b = build_complement_basis(BasisPair(K, np.zeros((2, 3)), np.zeros(3), 1.0))
    return r, K, b.H


def _archive(dis_samples, dis_logw=None):
    d = np.atleast_2d(np.asarray(dis_samples, float))
    lw = np.zeros(d.shape[0]) if dis_logw is None else np.asarray(dis_logw, float)
    return PosteriorArchive(np.zeros((1, 1)), np.zeros(1), d, lw, np.zeros(1), np.zeros(1))


# -- R^2 -------------------------------------------------------------------

def test_r2_zero_when_alpha_is_one():
    r, K, H = _setup()
    X = r.standard_normal((30, 2))
    v = r.standard_normal(28)
    assert np.allclose(H.T @ np.ones(30), 0.0, atol=1e-12)
    arc = _archive([[0.3, 1.0, 1.0, 2.0]])
    vals, w = compute_r2(arc, v, X, H, 1, K=K)
    assert vals[0] == 0.0 and w[0] == 1.0
    # the dense form agrees that nothing is explained
    assert r2_dense(v, X, H, 0.3, 1.0, 2.0, 1) == pytest.approx(0.0, abs=1e-20)


def test_r2_matches_dense_oracle():
    r, K, H = _setup(N=25, seed=1)
    X = r.standard_normal((25, 3))
    v = r.standard_normal(23)
    draws = np.array([[0.2, 0.9, 0.3, 0.7, 4.0],
                      [0.6, 0.5, 0.95, 0.1, 0.5],
                      [0.05, 0.99, 0.99, 0.4, 30.0]])
    for s in range(3):
        vals, _ = compute_r2(_archive(draws), v, X, H, s, K=K)
        for d in range(3):
            ref = r2_dense(v, X, H, draws[d, 0], draws[d, 1 + s], draws[d, 4], s)
            assert vals[d] == pytest.approx(ref, rel=1e-8, abs=1e-12)


def test_r2_rejects_zero_discrepancy():
    r, K, H = _setup()
    with pytest.raises(ValueError, match="no discrepancy variance; analysis undefined"):
        compute_r2(_archive([[0.3, 0.5, 0.5, 1.0]]), np.zeros(28),
                   r.standard_normal((30, 2)), H, 0)


def test_r2_skips_negligible_draws():
    r, K, H = _setup()
    X = r.standard_normal((30, 2))
    v = r.standard_normal(28)
    arc = _archive([[0.3, 0.5, 0.5, 1.0], [0.3, 0.5, 0.5, 1.0]], [0.0, -50.0])
    vals, w = compute_r2(arc, v, X, H, 1, K=K)
    assert vals[1] == 0.0 and w[1] < 1e-20 and vals[0] > 0.0


def _fitted_report(v, X, H, K, names, seed=0, replicates=3):
    prob = DiscrepancyProblem(v, X, H, PrecisionPrior(2.0, 0.02), K)
    runs = [prob.run(AnnealingSchedule.default(60, 48, 2, seed=seed * 100 + k))
            for k in range(replicates)]
    arc = _archive(np.vstack([x.samples for x in runs]),
                   np.concatenate([x.log_weights for x in runs]))
    return arc, build_discrepancy_report(arc, v, X, H, names, K=K)


def test_smooth_driver_is_attributed():
    r, K, H = _setup(N=40, seed=2)
    X = np.column_stack([r.standard_normal(40), np.sort(r.uniform(-2, 2, 40))])
    y = np.sin(1.5 * X[:, 1]) + 0.05 * r.standard_normal(40)
    v = H.T @ y
    arc, rep = _fitted_report(v, X, H, K, ["x0", "x1"])
    r2 = {s: compute_r2(arc, v, X, H, s, K=K) for s in (0, 1)}
    assert weighted_median(*r2[1]) > weighted_median(*r2[0])
    assert max(r2[0][0].max(), r2[1][0].max()) <= 1.05
    assert rep.per_input[1].significant and not rep.per_input[0].significant
    assert rep.ranking[0] == 1
    assert rep.per_input[0].r2_tilde_estimate == 0.0
    assert rep.per_input[0].r2_tilde_hdi == (0.0, 0.0)


def test_point_mass_report_is_well_formed():
    r, K, H = _setup()
    X = r.standard_normal((30, 2))
    v = r.standard_normal(28)
    arc = _archive([[0.4, 0.6, 0.8, 1.5]])
    rep = build_discrepancy_report(arc, v, X, H, ["x0", "Te"], K=K)
    for e in rep.per_input:
        assert e.r2_hdi[0] == e.r2_hdi[1] and e.r2_tilde_hdi[0] == e.r2_tilde_hdi[1]
    assert sorted(rep.ranking) == [0, 1]
    assert "Te" in rep.table()
    with pytest.raises(ValueError):
        build_discrepancy_report(arc, v, X, H, ["x0"], K=K)


def test_report_json_round_trip():
    e = InputAttribution("Ws", 0.4, (0.2, 0.6), 0.35, (0.1, 0.5), True)
    rep = DiscrepancyReport((InputAttribution("x0", 0.01, (0.0, 0.03), 0.0, (0.0, 0.0),
                                              False), e), (1, 0))
    back = DiscrepancyReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert back == rep
    assert back.significant_names == ["Ws"]
    assert set(rep.to_dict()["perInput"][0]) == {"name", "r2Estimate", "r2Hdi",
                                                 "r2TildeEstimate", "r2TildeHdi",
                                                 "significant"}


# -- Bayes factors ---------------------------------------------------------

def test_large_bayes_factor_is_decisive():
    est, hdi_, label = bayes_factor([812.17], [-52.79])
    assert est == pytest.approx(864.96, abs=1e-9)
    assert label == "decisive"
    assert hdi_ == pytest.approx((864.96, 864.96))


def test_self_comparison_is_weak_zero():
    reps = [3.1, 2.9, 3.4, 3.0]
    est, (lo, hi), label = bayes_factor(reps, reps)
    assert est == 0.0 and label == "weak"
    assert lo <= 0.0 <= hi


@pytest.mark.parametrize("x,label", [(-0.01, "negative"), (0.0, "weak"), (0.49, "weak"),
                                     (0.5, "substantial"), (0.99, "substantial"),
                                     (1.0, "strong"), (1.5, "strong"), (1.999, "strong"),
                                     (2.0, "decisive"), (864.96, "decisive"),
                                     (np.inf, "decisive"), (-np.inf, "negative")])
def test_label_scale(x, label):
    assert evidence_label(x) == label


def test_same_size_rule():
    with pytest.raises(ValueError, match=SAME_SIZE_RULE):
        bayes_factor([1.0], [0.0], size_j=30, size_i=20)
    with pytest.raises(ValueError, match=SAME_SIZE_RULE):
        compare_models([ModelEntry("a", np.array([1.0]), 0.1, 30),
                        ModelEntry("b", np.array([0.0]), 0.2, 40)])
    with pytest.raises(ValueError):
        bayes_factor([], [1.0])


def test_rmse_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([1.5, 2.5, 3.5], [1.0, 2.0, 3.0]) == pytest.approx(0.5)
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(3.5355, abs=1e-4)
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5), rel=1e-15)
    with pytest.raises(ValueError):
        rmse([1.0], [1.0, 2.0])


def test_comparison_table():
    cmp = compare_models([ModelEntry("M1", np.array([-240.0, -241.0]), 1.2, 30),
                          ModelEntry("M2", np.array([-35.0, -34.0]), 0.3, 30),
                          ModelEntry("M3", np.array([-25.5, -25.1]), 0.1, 30)])
    assert cmp.labels[2][1] == "decisive" and cmp.labels[1][2] == "negative"
    assert np.all(np.diag(cmp.bayes_factors) == 0.0)
    d = json.loads(json.dumps(cmp.to_dict()))
    assert [m["name"] for m in d["models"]] == ["M1", "M2", "M3"]
    assert "M3" in cmp.table()


evidence = st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=5)


@given(st.lists(evidence, min_size=3, max_size=3))
def test_bayes_factor_antisymmetric_and_transitive(reps):
    entries = [ModelEntry(f"m{i}", np.array(r), 0.0, 10) for i, r in enumerate(reps)]
    B = compare_models(entries).bayes_factors
    np.testing.assert_array_equal(B, -B.T)
    ev = np.array([e.log10_evidence for e in entries])
    for k in range(3):
        for j in range(3):
            for i in range(3):
                assert B[k, i] == ev[k] - ev[i]
                assert B[k, i] == pytest.approx(B[k, j] + B[j, i], abs=1e-9)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_label_monotone(a, b):
    order = ["negative", "weak", "substantial", "strong", "decisive"]
    lo, hi = sorted((a, b))
    assert order.index(evidence_label(lo)) <= order.index(evidence_label(hi))


@pytest.mark.slow
def test_fictitious_input_control():
    # discrepancy independent of every input: at most 1 of 20 experiments may flag
    flagged = 0
    for e in range(20):
        r, K, H = _setup(N=30, seed=1000 + e)
        X = r.standard_normal((30, 3))
        v = 0.3 * r.standard_normal(28)
        _, rep = _fitted_report(v, X, H, K, ["x0", "a", "b"], seed=e)
        flagged += bool(rep.significant_names)
    assert flagged <= 1
