"""Discrepancy attribution, Bayes-factor comparison and prediction error.

The attribution index of boundary condition ``s`` is the share of the
observed complement-space signal reproduced by a discrepancy GP that may only
use input ``s``.  Subtracting the same draw's value for the pure-noise input
x0 gives the baseline-corrected index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .inference import DiscrepancyProblem, PosteriorArchive, hdi, weighted_median
from .kernel import PrecisionPrior

LOG10 = np.log(10.0)
SAME_SIZE_RULE = "compare models built upon simulation samples of the same size"
EVIDENCE_SCALE = ((2.0, "decisive"), (1.0, "strong"), (0.5, "substantial"), (0.0, "weak"))


def _weights_from_archive(archive: PosteriorArchive, min_relative=1e-10):
    w = archive.discrepancy_weights
    keep = w > min_relative * w.max()
    return keep, w


def compute_r2(posterior: PosteriorArchive, v_hat, X, H, input_index, K=None,
               problem: DiscrepancyProblem | None = None):
    """Per-draw R^2 of input ``input_index`` and the draws' normalised weights.

    Draws with negligible weight (below 1e-10 of the largest) are returned as
    zero without evaluation; they carry no weight in any summary.
    """
    v_hat = np.asarray(v_hat, dtype=float)
    var_v = float(np.var(v_hat))
    if var_v <= 0.0:
        raise ValueError("no discrepancy variance; analysis undefined")
    if problem is None:
        problem = DiscrepancyProblem(v_hat, X, H, PrecisionPrior(1.0, 1.0), K)
    S1 = problem.n_inputs
    if not 0 <= input_index < S1:
        raise ValueError(f"input index must lie in 0..{S1 - 1}")
    samples = np.atleast_2d(posterior.discrepancy_samples)
    keep, weights = _weights_from_archive(posterior)
    out = np.zeros(samples.shape[0])
    for d in np.nonzero(keep)[0]:
        tau2, alpha, lam = samples[d, 0], samples[d, 1 + input_index], samples[d, 1 + S1]
        out[d] = _r2_single(problem, input_index, tau2, alpha, lam, var_v)
    return out, weights


def _r2_single(problem, index, tau2, alpha, lam, var_v):
    if alpha >= 1.0:
        return 0.0
    log_alpha = np.zeros(problem.n_inputs)
    log_alpha[index] = np.log(alpha)
    cf = problem.factor(log_alpha, (1.0 - tau2) / tau2, lam)
    if cf is None:
        raise FloatingPointError("discrepancy covariance is not positive definite")
    s, _ = problem.projected_inverse_apply(cf, problem.r)
    # H^T zeta H (H^T A H)^-1 v_hat = v_hat - (H^T A H)^-1 v_hat / lambda
    v = problem.v_hat - (problem.H.T @ s) / lam
    return float(np.var(v) / var_v)


@dataclass(frozen=True)
class InputAttribution:
    name: str
    r2_estimate: float
    r2_hdi: tuple
    r2_tilde_estimate: float
    r2_tilde_hdi: tuple
    significant: bool

    def to_dict(self):
        return {"name": self.name, "r2Estimate": self.r2_estimate,
                "r2Hdi": list(self.r2_hdi), "r2TildeEstimate": self.r2_tilde_estimate,
                "r2TildeHdi": list(self.r2_tilde_hdi), "significant": self.significant}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["r2Estimate"], tuple(d["r2Hdi"]), d["r2TildeEstimate"],
                   tuple(d["r2TildeHdi"]), bool(d["significant"]))


@dataclass(frozen=True)
class DiscrepancyReport:
    per_input: tuple
    ranking: tuple

    @property
    def significant_names(self):
        return [e.name for e in self.per_input if e.significant]

    def to_dict(self):
        return {"perInput": [e.to_dict() for e in self.per_input],
                "ranking": list(self.ranking)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(InputAttribution.from_dict(e) for e in d["perInput"]),
                   tuple(int(i) for i in d["ranking"]))

    def table(self) -> str:
        lines = [f"{'rank':>4}  {'input':<8} {'R2':>8} {'R2 95% HDI':>21} "
                 f"{'R2~':>8} {'R2~ 95% HDI':>21}"]
        for k, i in enumerate(self.ranking, 1):
            e = self.per_input[i]
            star = " *" if e.significant else ""
            lines.append(
                f"{k:>4}  {e.name:<8} {e.r2_estimate:8.4f} "
                f"[{e.r2_hdi[0]:8.4f}, {e.r2_hdi[1]:8.4f}] {e.r2_tilde_estimate:8.4f} "
                f"[{e.r2_tilde_hdi[0]:8.4f}, {e.r2_tilde_hdi[1]:8.4f}]{star}")
        lines.append("* significant: 0 lies outside the 95% HDI of R2~")
        return "\n".join(lines)


def build_discrepancy_report(posterior: PosteriorArchive, v_hat, X, H, names,
                             K=None, mass=0.95) -> DiscrepancyReport:
    """R^2 and baseline-corrected R^2 for every input, x0 first.

    ``names`` lists the S+1 input names in the column order of ``X``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    names = list(names)
    if len(names) != X.shape[1]:
        raise ValueError("one name per boundary column (including x0) is required")
    problem = DiscrepancyProblem(v_hat, X, H, PrecisionPrior(1.0, 1.0), K)
    r2 = []
    weights = None
    for s in range(X.shape[1]):
        vals, weights = compute_r2(posterior, v_hat, X, H, s, problem=problem)
        r2.append(vals)
    r2 = np.array(r2)
    entries = []
    for s in range(X.shape[1]):
        tilde = r2[s] - r2[0]
        lo, hi = hdi(tilde, mass, weights)
        entries.append(InputAttribution(
            names[s], weighted_median(r2[s], weights), hdi(r2[s], mass, weights),
            weighted_median(tilde, weights), (lo, hi), bool(lo > 0.0 or hi < 0.0)))
    ranking = tuple(int(i) for i in
                    sorted(range(len(entries)), key=lambda i: -entries[i].r2_tilde_estimate))
    return DiscrepancyReport(tuple(entries), ranking)


# -- model comparison ------------------------------------------------------

def evidence_label(log10_bf) -> str:
    """Evidence category of a log10 Bayes factor; edges take the stronger label."""
    x = float(log10_bf)
    if not np.isfinite(x) and x > 0:
        return "decisive"
    for edge, label in EVIDENCE_SCALE:
        if x >= edge:
            return label
    return "negative"


def bayes_factor(evidence_j, evidence_i, size_j=None, size_i=None, mass=0.95):
    """log10 B_{j,i} from replicate log10 evidences: (estimate, hdi, label).

    ``size_j`` and ``size_i`` are the ensemble sizes M the two models were
    emulated from; when given they must agree.
    """
    a = np.atleast_1d(np.asarray(evidence_j, dtype=float))
    b = np.atleast_1d(np.asarray(evidence_i, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("replicate lists must be nonempty")
    if size_j is not None and size_i is not None and int(size_j) != int(size_i):
        raise ValueError(SAME_SIZE_RULE)
    est = float(a.mean() - b.mean())
    diffs = (a[:, None] - b[None, :]).ravel()
    interval = hdi(diffs, mass) if diffs.size > 1 else (float(diffs[0]), float(diffs[0]))
    return est, interval, evidence_label(est)


def rmse(predictions, observations) -> float:
    p = np.asarray(predictions, dtype=float)
    o = np.asarray(observations, dtype=float)
    if p.shape != o.shape:
        raise ValueError("predictions and observations differ in length")
    return float(np.sqrt(np.mean((p - o) ** 2)))


@dataclass(frozen=True)
class ModelEntry:
    name: str
    log10_replicates: np.ndarray
    rmse: float
    n_runs: int | None = None

    @property
    def log10_evidence(self) -> float:
        return float(np.mean(self.log10_replicates))


@dataclass(frozen=True)
class ModelComparison:
    names: tuple
    log10_evidence: np.ndarray
    log10_evidence_hdi: tuple
    rmse: np.ndarray
    bayes_factors: np.ndarray            # [j, i] = log10 B_{j,i}
    bf_hdi: np.ndarray                   # [j, i, 2]
    labels: tuple = field(default_factory=tuple)

    def to_dict(self):
        models = [{"name": n, "log10Evidence": float(e), "log10EvidenceHdi": list(h),
                   "rmse": float(r)}
                  for n, e, h, r in zip(self.names, self.log10_evidence,
                                        self.log10_evidence_hdi, self.rmse)]
        return {"models": models,
                "bayesFactors": self.bayes_factors.tolist(),
                "bayesFactorHdi": self.bf_hdi.tolist(),
                "labels": [list(row) for row in self.labels]}

    def table(self) -> str:
        w = max(8, max(len(n) for n in self.names))
        lines = [f"{'model':<{w}} {'log10 Z':>12} {'95% HDI':>25} {'RMSE [degC]':>12}"]
        for n, e, h, r in zip(self.names, self.log10_evidence, self.log10_evidence_hdi,
                              self.rmse):
            lines.append(f"{n:<{w}} {e:12.3f} [{h[0]:11.3f}, {h[1]:11.3f}] {r:12.4f}")
        lines.append("")
        lines.append(f"{'log10 B[j,i]':<{w}} " + " ".join(f"{n:>22}" for n in self.names))
        for j, n in enumerate(self.names):
            cells = [f"{self.bayes_factors[j, i]:10.3f} {self.labels[j][i]:>11}"
                     for i in range(len(self.names))]
            lines.append(f"{n:<{w}} " + " ".join(cells))
        return "\n".join(lines)


def compare_models(entries, mass=0.95) -> ModelComparison:
    """Pairwise log10 Bayes factors of models sharing one observation series."""
    entries = list(entries)
    if len(entries) < 2:
        raise ValueError("at least two models are needed for a comparison")
    sizes = {e.n_runs for e in entries if e.n_runs is not None}
    if len(sizes) > 1:
        raise ValueError(SAME_SIZE_RULE)
    n = len(entries)
    ev = np.array([e.log10_evidence for e in entries])
    ev_hdi = tuple(hdi(e.log10_replicates, mass) if np.size(e.log10_replicates) > 1
                   else (e.log10_evidence, e.log10_evidence) for e in entries)
    bf = ev[:, None] - ev[None, :]
    bf_hdi = np.zeros((n, n, 2))
    labels = []
    for j in range(n):
        row = []
        for i in range(n):
            _, interval, _ = bayes_factor(entries[j].log10_replicates,
                                          entries[i].log10_replicates, mass=mass)
            bf_hdi[j, i] = interval
            row.append(evidence_label(bf[j, i]))
        labels.append(tuple(row))
    return ModelComparison(tuple(e.name for e in entries), ev, ev_hdi,
                           np.array([e.rmse for e in entries]), bf, bf_hdi, tuple(labels))
