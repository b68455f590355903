"""Annealed importance sampling over the calibration and discrepancy posteriors.

Sampling happens in an unconstrained space: unit-interval parameters through
the logit, precisions through the log.  Prior densities there include the
Jacobian, and the initial draws are exact prior draws, so the evidence
estimate is that of the original parameterisation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.special import expit, gammaln, logsumexp

from .emulator import predict_batch
from .kernel import (ARD_BETA_A, ARD_BETA_B, DiscrepancyKernelParams,
                     PrecisionPrior, log_beta_ard, log_gamma_pdf)

log = logging.getLogger(__name__)

_LOG2PI = np.log(2.0 * np.pi)
_TARGET_ACCEPT = 0.3


def _softplus(u):
    return np.logaddexp(0.0, u)


# -- schedule --------------------------------------------------------------

def default_temperatures(n=200, start=1e-5, switch=0.1):
    """Geometric ladder from ``start`` to ``switch``, then linear up to one."""
    if n < 3:
        return np.linspace(0.0, 1.0, max(n, 2))
    n_geo = n // 2
    geo = np.geomspace(start, switch, n_geo)
    lin = np.linspace(switch, 1.0, n - n_geo)[1:]
    return np.concatenate([[0.0], geo, lin])


@dataclass(frozen=True)
class AnnealingSchedule:
    temperatures: np.ndarray = field(default_factory=default_temperatures)
    chains: int = 64
    steps_per_temperature: int = 3
    proposal_scale: float = 0.2
    seed: int = 0

    def __post_init__(self):
        t = np.asarray(self.temperatures, dtype=float)
        object.__setattr__(self, "temperatures", t)
        if t.ndim != 1 or t.size < 2 or t[0] != 0.0 or t[-1] != 1.0:
            raise ValueError("temperatures must run from 0 to 1")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("temperatures must be strictly increasing")
        if self.chains < 1 or self.steps_per_temperature < 1:
            raise ValueError("chains and steps_per_temperature must be positive")
        if not self.proposal_scale > 0.0:
            raise ValueError("proposal_scale must be positive")

    @classmethod
    def default(cls, n_temperatures=200, chains=64, steps_per_temperature=3,
                proposal_scale=0.2, seed=0):
        return cls(default_temperatures(n_temperatures), chains,
                   steps_per_temperature, proposal_scale, seed)

    def with_seed(self, seed) -> "AnnealingSchedule":
        return replace(self, seed=int(seed))

    def replicate_seeds(self, n):
        children = np.random.SeedSequence(self.seed).spawn(n)
        return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


@dataclass(frozen=True)
class AISResult:
    samples: np.ndarray
    log_weights: np.ndarray
    log_evidence: float
    log_evidence_se: float
    acceptance: np.ndarray

    @property
    def normalized_weights(self) -> np.ndarray:
        return np.exp(self.log_weights - logsumexp(self.log_weights))

    @property
    def ess(self) -> float:
        w = self.normalized_weights
        return float(1.0 / np.sum(w ** 2))


def log_mean_exp(a):
    a = np.asarray(a, dtype=float)
    return float(logsumexp(a) - np.log(a.size))


def evidence_standard_error(log_weights):
    """Delta-method standard error of the log of the mean weight."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size < 2 or not np.any(np.isfinite(lw)):
        return np.inf
    w = np.exp(lw - np.max(lw))
    return float(np.std(w, ddof=1) / (np.sqrt(w.size) * np.mean(w)))


def _anneal(log_target, prior_sampler, prior_log_density, temps, chains, steps,
            rng, factor0, steps_table=None):
    """One annealing pass.

    Without ``steps_table`` the per-coordinate proposal step at each
    temperature is the population spread times a factor adapted toward 30%
    acceptance, and the table of steps used is returned.  With a table the
    steps are taken from it unchanged.
    """
    x = np.array(prior_sampler(rng, chains), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    lp = np.asarray(prior_log_density(x), dtype=float)
    ll = np.asarray(log_target(x), dtype=float) - lp
    ll[~np.isfinite(lp)] = -np.inf
    logw = np.zeros(chains)
    factor = factor0
    used = np.empty((temps.size - 1, x.shape[1]))
    acceptance = np.empty(temps.size - 1)

    for k in range(1, temps.size):
        t = temps[k]
        with np.errstate(invalid="ignore"):
            logw += (t - temps[k - 1]) * ll
        if steps_table is None:
            spread = np.std(x, axis=0)
            step = factor * np.where(spread > 1e-6, spread, 1e-6)
        else:
            step = steps_table[k - 1]
        used[k - 1] = step
        n_acc = 0
        for _ in range(steps):
            prop = x + step * rng.standard_normal(x.shape)
            lp_new = np.asarray(prior_log_density(prop), dtype=float)
            ll_new = np.full(chains, -np.inf)
            ok = np.isfinite(lp_new)
            if np.any(ok):
                ll_new[ok] = np.asarray(log_target(prop[ok]), dtype=float) - lp_new[ok]
            with np.errstate(invalid="ignore"):
                log_ratio = (lp_new + t * ll_new) - (lp + t * ll)
            accept = np.log(rng.random(chains)) < np.nan_to_num(log_ratio, nan=-np.inf)
            x[accept] = prop[accept]
            lp[accept] = lp_new[accept]
            ll[accept] = ll_new[accept]
            n_acc += int(accept.sum())
        rate = n_acc / (chains * steps)
        acceptance[k - 1] = rate
        factor = float(np.clip(factor * np.exp(2.0 * (rate - _TARGET_ACCEPT)), 1e-4, 10.0))
    return x, logw, used, acceptance


def ais_run(log_target, prior_sampler, prior_log_density, schedule: AnnealingSchedule,
            pilot_steps=1):
    """Annealed importance sampling from the prior to ``log_target``.

    ``log_target`` and ``prior_log_density`` map a (chains, d) array to
    (chains,) log densities; ``prior_sampler(rng, n)`` returns n prior draws.
    The bridge at temperature t is prior * likelihood**t with likelihood =
    target / prior, and each temperature applies ``steps_per_temperature``
    random-walk Metropolis updates.

    Step sizes are tuned in a pilot pass (``pilot_steps`` updates per
    temperature, adapted toward 30% acceptance) and then frozen, so that the
    weighted pass uses transitions that do not depend on its own chains.
    """
    pilot_ss, main_ss = np.random.SeedSequence(schedule.seed).spawn(2)
    temps = schedule.temperatures
    C = schedule.chains
    _, _, table, _ = _anneal(log_target, prior_sampler, prior_log_density, temps, C,
                             pilot_steps, np.random.default_rng(pilot_ss),
                             schedule.proposal_scale)
    x, logw, _, acceptance = _anneal(log_target, prior_sampler, prior_log_density, temps,
                                     C, schedule.steps_per_temperature,
                                     np.random.default_rng(main_ss),
                                     schedule.proposal_scale, steps_table=table)
    if not np.any(np.isfinite(logw)):
        raise RuntimeError(
            "every AIS chain ended with zero weight; the target is incompatible "
            "with the prior support")
    return AISResult(x, logw, log_mean_exp(logw), evidence_standard_error(logw),
                     acceptance)


# -- unconstrained parameter spaces ---------------------------------------

class ParameterSpace:
    """Product prior over unit-interval, Beta(1, 0.1) and Gamma coordinates.

    ``kinds`` entries are ``"unit"``, ``"ard"`` or ``("gamma", shape, rate)``.
    """

    def __init__(self, kinds):
        self.kinds = list(kinds)
        self.dim = len(self.kinds)
        self.unit = np.array([i for i, k in enumerate(self.kinds) if k == "unit"], int)
        self.ard = np.array([i for i, k in enumerate(self.kinds) if k == "ard"], int)
        g = [(i, k[1], k[2]) for i, k in enumerate(self.kinds) if isinstance(k, tuple)]
        self.gamma = np.array([i for i, _, _ in g], int)
        self.shape = np.array([s for _, s, _ in g], float)
        self.rate = np.array([r for _, _, r in g], float)
        if self.unit.size + self.ard.size + self.gamma.size != self.dim:
            raise ValueError("unknown parameter kind")

    def sample(self, rng, n):
        U = np.empty((n, self.dim))
        if self.unit.size:
            x = rng.uniform(np.finfo(float).tiny, 1.0, size=(n, self.unit.size))
            U[:, self.unit] = np.log(x) - np.log1p(-x)
        if self.ard.size:
            # 1 - alpha = V**(1/b) for V uniform; logit computed without rounding to one
            v = rng.uniform(np.finfo(float).tiny, 1.0, size=(n, self.ard.size))
            log_one_minus = np.log(v) / ARD_BETA_B
            U[:, self.ard] = np.log(-np.expm1(log_one_minus)) - log_one_minus
        if self.gamma.size:
            U[:, self.gamma] = np.log(rng.gamma(self.shape, 1.0 / self.rate,
                                                size=(n, self.gamma.size)))
        return U

    def log_prior(self, U):
        U = np.atleast_2d(U)
        out = np.zeros(U.shape[0])
        if self.unit.size:
            u = U[:, self.unit]
            out -= np.sum(_softplus(-u) + _softplus(u), axis=1)
        if self.ard.size:
            u = U[:, self.ard]
            a, b = ARD_BETA_A, ARD_BETA_B
            log_norm = gammaln(a + b) - gammaln(a) - gammaln(b)
            out += np.sum(log_norm - a * _softplus(-u) - b * _softplus(u), axis=1)
        if self.gamma.size:
            u = U[:, self.gamma]
            out += np.sum(self.shape * np.log(self.rate) - gammaln(self.shape)
                          + self.shape * u - self.rate * np.exp(u), axis=1)
        return out

    def to_natural(self, U):
        U = np.atleast_2d(U)
        X = np.empty_like(U)
        for idx in (self.unit, self.ard):
            if idx.size:
                X[:, idx] = expit(U[:, idx])
        if self.gamma.size:
            X[:, self.gamma] = np.exp(U[:, self.gamma])
        return X

    def from_natural(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.empty_like(X)
        for idx in (self.unit, self.ard):
            if idx.size:
                with np.errstate(divide="ignore"):
                    U[:, idx] = np.log(X[:, idx]) - np.log1p(-X[:, idx])
        if self.gamma.size:
            U[:, self.gamma] = np.log(X[:, self.gamma])
        return U


# -- calibration target ----------------------------------------------------

def _gauss_logpdf(x, mean, var):
    return -0.5 * (_LOG2PI + np.log(var) + (x - mean) ** 2 / var)


def calibration_log_likelihood(Zs, lambda_star, emulator, w_star):
    """Sum over weights of log N(w*_q; w'_q, sigma'^2_q), batched over rows."""
    mean, var = predict_batch(emulator, Zs, lambda_star)
    return np.sum(_gauss_logpdf(np.asarray(w_star)[None, :], mean, var), axis=1)


def calibration_log_target(z_star, lambda_star, emulator, w_star, obs_prior: PrecisionPrior):
    """Unnormalised log posterior of (z*, lambda*_1..Q): Gaussian terms plus priors."""
    z = np.asarray(z_star, dtype=float)
    lam = np.asarray(lambda_star, dtype=float)
    if np.any(z < 0.0) or np.any(z > 1.0) or np.any(lam <= 0.0):
        return -np.inf
    ll = calibration_log_likelihood(z[None, :], lam[None, :], emulator, w_star)[0]
    lp = np.sum(obs_prior.log_density(lam, emulator.knorm2))
    return float(ll + lp)


class CalibrationProblem:
    """Posterior of calibration inputs and per-weight observation precisions."""

    def __init__(self, emulator, w_star, obs_prior: PrecisionPrior):
        self.emulator = emulator
        self.w_star = np.asarray(w_star, dtype=float)
        self.obs_prior = obs_prior
        P, Q = emulator.n_params, emulator.n_weights
        rates = np.atleast_1d(obs_prior.effective_rate(emulator.knorm2))
        rates = np.broadcast_to(rates, (Q,))
        self.space = ParameterSpace(["unit"] * P
                                    + [("gamma", obs_prior.shape, r) for r in rates])
        self.n_params = P
        self.n_weights = Q

    def log_likelihood(self, U):
        X = self.space.to_natural(U)
        P = self.n_params
        return calibration_log_likelihood(X[:, :P], X[:, P:], self.emulator, self.w_star)

    def log_target(self, U):
        return self.space.log_prior(U) + self.log_likelihood(U)

    def run(self, schedule):
        res = ais_run(self.log_target, self.space.sample, self.space.log_prior, schedule)
        return replace(res, samples=self.space.to_natural(res.samples))


# -- discrepancy target ----------------------------------------------------

def _orth_complement(H):
    N, m = H.shape
    P = np.eye(N) - H @ H.T
    evals, evecs = np.linalg.eigh(0.5 * (P + P.T))
    return evecs[:, evals > 0.5]


class DiscrepancyProblem:
    """Posterior of (tau2, alpha_0..alpha_S, lambda*) given v_hat.

    The complement-space Gaussian log density is evaluated in the N-point
    space through A = I/lambda + zeta(X, X):
    (H^T A H)^-1 = H^T [A^-1 - A^-1 K (K^T A^-1 K)^-1 K^T A^-1] H and
    log|H^T A H| = log|A| + log|K^T A^-1 K| - log|K^T K|.
    """

    def __init__(self, v_hat, X, H, obs_prior: PrecisionPrior, K=None):
        self.v_hat = np.asarray(v_hat, dtype=float)
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.H = np.asarray(H, dtype=float)
        N, m = self.H.shape
        if self.X.shape[0] != N:
            raise ValueError("boundary matrix and H disagree on N")
        if self.v_hat.shape != (m,):
            raise ValueError("v_hat must have one entry per column of H")
        self.K = _orth_complement(self.H) if K is None else np.asarray(K, dtype=float)
        self.r = self.H @ self.v_hat
        self.D = 4.0 * (self.X.T[:, :, None] - self.X.T[:, None, :]) ** 2
        _, self.logdet_KtK = np.linalg.slogdet(self.K.T @ self.K)
        self.obs_prior = obs_prior
        self.n_inputs = self.X.shape[1]
        self.space = ParameterSpace(["unit"] + ["ard"] * self.n_inputs
                                    + [("gamma", obs_prior.shape, obs_prior.rate)])

    def correlation(self, log_alpha):
        return np.exp(np.tensordot(np.asarray(log_alpha, dtype=float), self.D, axes=1))

    def _solve(self, A, rhs):
        cf = linalg.cho_factor(A, lower=True, check_finite=False)
        return cf, linalg.cho_solve(cf, rhs, check_finite=False)

    def factor(self, log_alpha, signal_var, lam):
        """Cholesky of A = I/lam + signal_var * R(alpha), or None on failure."""
        A = signal_var * self.correlation(log_alpha)
        A[np.diag_indices_from(A)] += 1.0 / lam
        try:
            return linalg.cho_factor(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            A[np.diag_indices_from(A)] += 1e-8 * np.max(np.diag(A))
            try:
                return linalg.cho_factor(A, lower=True, check_finite=False)
            except linalg.LinAlgError:
                return None

    def projected_inverse_apply(self, cf, r):
        """H (H^T A H)^-1 H^T r for r in the complement space, given chol(A)."""
        B = linalg.cho_solve(cf, np.column_stack([r, self.K]), check_finite=False)
        Ainv_r, Ainv_K = B[:, 0], B[:, 1:]
        MK = self.K.T @ Ainv_K
        coef = np.linalg.solve(MK, self.K.T @ Ainv_r)
        return Ainv_r - Ainv_K @ coef, MK

    def gaussian_term(self, log_alpha, signal_var, lam):
        cf = self.factor(log_alpha, signal_var, lam)
        if cf is None:
            return -np.inf
        s, MK = self.projected_inverse_apply(cf, self.r)
        quad = float(self.r @ s)
        sign, logdet_MK = np.linalg.slogdet(MK)
        if sign <= 0:
            return -np.inf
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0]))) + logdet_MK - self.logdet_KtK
        m = self.v_hat.size
        return -0.5 * (m * _LOG2PI + logdet + quad)

    def log_likelihood(self, U):
        U = np.atleast_2d(U)
        S1 = self.n_inputs
        signal_var = np.exp(-U[:, 0])                    # (1 - tau2) / tau2
        log_alpha = -_softplus(-U[:, 1:1 + S1])
        lam = np.exp(U[:, 1 + S1])
        return np.array([self.gaussian_term(log_alpha[i], signal_var[i], lam[i])
                         for i in range(U.shape[0])])

    def log_target(self, U):
        return self.space.log_prior(U) + self.log_likelihood(U)

    def run(self, schedule):
        res = ais_run(self.log_target, self.space.sample, self.space.log_prior, schedule)
        return replace(res, samples=self.space.to_natural(res.samples))


def discrepancy_log_target(params: DiscrepancyKernelParams, lambda_star, v_hat, X, H,
                           obs_prior: PrecisionPrior, K=None):
    """Unnormalised log posterior of the discrepancy hyperparameters.

    Gaussian log density of v_hat under H^T (I/lambda* + zeta(X, X)) H, plus
    the Gamma prior on lambda*, Beta(1, 0.1) priors on alpha and the uniform
    prior on tau2.
    """
    tau2 = float(params.tau2)
    alpha = params.alpha
    if not 0.0 < tau2 < 1.0 or np.any(alpha <= 0.0) or np.any(alpha > 1.0) \
            or not lambda_star > 0.0:
        return -np.inf
    problem = DiscrepancyProblem(v_hat, X, H, obs_prior, K)
    g = problem.gaussian_term(np.log(alpha), params.signal_var, float(lambda_star))
    return float(g + log_gamma_pdf(lambda_star, obs_prior.shape, obs_prior.rate)
                 + log_beta_ard(alpha))


# -- summaries -------------------------------------------------------------

def hdi(samples, mass=0.95, weights=None):
    """Shortest interval holding at least ``mass`` of a weighted sample."""
    if not 0.0 < mass < 1.0:
        raise ValueError("mass must lie in (0, 1)")
    x = np.asarray(samples, dtype=float).ravel()
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != x.shape:
        raise ValueError("weights and samples differ in length")
    keep = w > 0
    x, w = x[keep], w[keep]
    if w.sum() <= 0 or x.size == 0:
        raise ValueError("total weight must be positive")
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order] / w.sum()
    if x[0] == x[-1]:
        return float(x[0]), float(x[0])
    cum = np.cumsum(w)
    before = cum - w
    j = np.searchsorted(cum, before + mass - 1e-12, side="left")
    valid = j < x.size
    i = np.nonzero(valid)[0]
    widths = x[j[valid]] - x[i]
    best = int(np.argmin(widths))
    return float(x[i[best]]), float(x[j[valid][best]])


def weighted_quantile(samples, q, weights=None):
    x = np.asarray(samples, dtype=float).ravel()
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float).ravel()
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cum = np.cumsum(w) / np.sum(w)
    return float(x[min(np.searchsorted(cum, q, side="left"), x.size - 1)])


def weighted_median(samples, weights=None):
    return weighted_quantile(samples, 0.5, weights)


# -- archive ---------------------------------------------------------------

@dataclass(frozen=True)
class PosteriorArchive:
    """Pooled AIS output of replicated runs on both posteriors.

    Sample rows are grouped by replicate; ``*_log_weights`` are the raw chain
    log-weights.  Calibration columns are z*_1..P then lambda*_1..Q;
    discrepancy columns are tau2, alpha_0..alpha_S, lambda*.
    """

    calibration_samples: np.ndarray
    calibration_log_weights: np.ndarray
    discrepancy_samples: np.ndarray
    discrepancy_log_weights: np.ndarray
    calibration_replicates: np.ndarray      # natural-log evidence per replicate
    discrepancy_replicates: np.ndarray
    log_jacobian: float = 0.0

    @property
    def log_evidence_calibration(self) -> float:
        return log_mean_exp(self.calibration_log_weights) + self.log_jacobian

    @property
    def log_evidence_discrepancy(self) -> float:
        return log_mean_exp(self.discrepancy_log_weights)

    @property
    def log_evidence(self) -> float:
        return self.log_evidence_calibration + self.log_evidence_discrepancy

    @property
    def replicates(self) -> np.ndarray:
        """Total natural-log evidence of each replicate."""
        return self.calibration_replicates + self.log_jacobian + self.discrepancy_replicates

    @property
    def log10_replicates(self) -> np.ndarray:
        return self.replicates / np.log(10.0)

    @staticmethod
    def _weights(lw):
        return np.exp(lw - logsumexp(lw))

    @property
    def calibration_weights(self) -> np.ndarray:
        return self._weights(self.calibration_log_weights)

    @property
    def discrepancy_weights(self) -> np.ndarray:
        return self._weights(self.discrepancy_log_weights)


def run_replicated(calibration: CalibrationProblem, discrepancy: DiscrepancyProblem,
                   schedule: AnnealingSchedule, replicates=20,
                   discrepancy_schedule: AnnealingSchedule | None = None,
                   log_jacobian=0.0) -> PosteriorArchive:
    """Run AIS ``replicates`` times on both targets with seeds spawned from the schedule seed."""
    if replicates < 1:
        raise ValueError("at least one replicate is required")
    dsched = discrepancy_schedule or schedule
    cal_seeds = schedule.replicate_seeds(replicates)
    dis_seeds = np.random.SeedSequence([dsched.seed, 1]).spawn(replicates)
    cal, dis = [], []
    for r in range(replicates):
        cal.append(calibration.run(schedule.with_seed(cal_seeds[r])))
        dseed = int(dis_seeds[r].generate_state(1, dtype=np.uint64)[0])
        dis.append(discrepancy.run(dsched.with_seed(dseed)))
        log.info("replicate %d: logZ_cal=%.3f logZ_dis=%.3f", r,
                 cal[-1].log_evidence, dis[-1].log_evidence)
    return PosteriorArchive(
        np.vstack([c.samples for c in cal]), np.concatenate([c.log_weights for c in cal]),
        np.vstack([d.samples for d in dis]), np.concatenate([d.log_weights for d in dis]),
        np.array([c.log_evidence for c in cal]), np.array([d.log_evidence for d in dis]),
        float(log_jacobian))
