"""Quasi-Bayesian basis-weight emulator.

Each row of the weight matrix W gets its own zero-mean GP over a subset of the
calibration inputs.  Hyperparameters (kernel parameters and the precision
lambda_q) are found by maximising the per-weight joint density and are then
frozen; nothing downstream resamples them.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.special import expit, gammaln, logit
from scipy.stats import gamma, qmc

from .basis import BasisPair, SimulationEnsemble
from .kernel import (JITTER, UNIT_CLIP, EmulatorKernelParams, PrecisionPrior,
                     correlation, default_simulation_prior)

log = logging.getLogger(__name__)

_LOG2PI = np.log(2.0 * np.pi)


class EmulatorFitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = 8
    selection_threshold: float = 2.0
    select_inputs: bool = True
    max_iter: int = 2000
    seed: int = 0


@dataclass(frozen=True)
class EmulatorPriors:
    """Gamma prior on the simulation precision; ``rate=None`` uses sqrt(eps)*s_max."""

    shape: float = 2.0
    rate: float | None = None


@dataclass(frozen=True)
class WeightGP:
    active: tuple[int, ...]
    kernel: EmulatorKernelParams
    lam: float
    design: np.ndarray          # M x |active|
    weights: np.ndarray         # length M
    chol: np.ndarray            # lower Cholesky factor of rho(Z,Z) + I/lam
    alpha: np.ndarray           # (rho(Z,Z) + I/lam)^-1 w
    log_density: float
    converged: bool = True

    def covariance(self) -> np.ndarray:
        return _training_cov(self.design, self.kernel, self.lam)


@dataclass(frozen=True)
class EmulatorModel:
    per_weight: list[WeightGP]
    training_design: np.ndarray
    training_weights: np.ndarray
    knorm2: np.ndarray
    precision_prior: PrecisionPrior     # Gamma(a', b'), k-scaled
    fit_log_density: float
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def n_weights(self) -> int:
        return len(self.per_weight)

    @property
    def n_params(self) -> int:
        return self.training_design.shape[1]


# -- per-weight objective --------------------------------------------------

def _training_cov(Z, kernel, lam):
    M = Z.shape[0]
    C = kernel.signal_var * correlation(Z, Z, np.log(kernel.beta))
    C[np.diag_indices(M)] += kernel.nugget + 1.0 / lam
    return C


def _cholesky(C):
    """Jittered Cholesky; one retry with a larger jitter before giving up."""
    d = np.max(np.diag(C))
    for scale in (JITTER, 1e-6):
        try:
            return np.linalg.cholesky(C + scale * d * np.eye(C.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("covariance is singular even after jitter escalation")


def gaussian_log_marginal(w, C):
    L = _cholesky(C)
    a = linalg.solve_triangular(L, w, lower=True)
    return -0.5 * (w.size * _LOG2PI + a @ a) - np.sum(np.log(np.diag(L)))


_LOGIT_BOUND = float(logit(1.0 - UNIT_CLIP))
_LOG_LAMBDA_BOUNDS = (np.log(1e-12), np.log(1e16))


def _unpack(theta, n_active):
    u = np.clip(expit(theta[:-1]), UNIT_CLIP, 1.0 - UNIT_CLIP)
    kernel = EmulatorKernelParams(u[0], u[1], u[2:2 + n_active])
    return kernel, float(np.exp(theta[-1]))


def weight_log_density(w, Z, kernel, lam, prior: PrecisionPrior, knorm2):
    """One factor of the joint hyperparameter density (uniform kernel priors)."""
    u = kernel.as_vector()
    if np.any(u <= 0.0) or np.any(u >= 1.0) or not lam > 0.0:
        return -np.inf
    try:
        ll = gaussian_log_marginal(w, _training_cov(Z, kernel, lam))
    except np.linalg.LinAlgError:
        return -np.inf
    return float(ll + prior.log_density(lam, knorm2))


def _objective_and_grad(theta, w, D, prior, rate):
    """Negative log density and its gradient in logit/log coordinates."""
    M = w.size
    n_active = D.shape[0]
    kernel, lam = _unpack(theta, n_active)
    s, n = kernel.signal_var, kernel.nugget
    R = np.exp(np.tensordot(np.log(kernel.beta), D, axes=1)) if n_active else np.ones((M, M))
    C = s * R
    C[np.diag_indices(M)] += n + 1.0 / lam
    try:
        L = _cholesky(C)
    except np.linalg.LinAlgError:
        return 1e300, np.zeros_like(theta)
    alpha = linalg.cho_solve((L, True), w)
    Cinv = linalg.cho_solve((L, True), np.eye(M))
    ll = -0.5 * (M * _LOG2PI + w @ alpha) - np.sum(np.log(np.diag(L)))
    lp = (prior.shape * np.log(rate) - gammaln(prior.shape)
          + (prior.shape - 1.0) * np.log(lam) - rate * lam)
    A = np.outer(alpha, alpha) - Cinv
    grad = np.empty_like(theta)
    sR = s * R
    grad[0] = 0.5 * np.sum(A * (-sR))
    grad[1] = 0.5 * np.trace(A) * (-n)
    for p in range(n_active):
        grad[2 + p] = 0.5 * np.sum(A * (sR * D[p])) * (1.0 - kernel.beta[p])
    grad[-1] = 0.5 * np.trace(A) * (-1.0 / lam) + (prior.shape - 1.0) - rate * lam
    # clipped coordinates are flat
    u = expit(theta[:-1])
    flat = (u <= UNIT_CLIP) | (u >= 1.0 - UNIT_CLIP)
    grad[:-1][flat] = 0.0
    return -(ll + lp), -grad


def _prior_starts(n_active, prior, knorm2, restarts, rng):
    """Stratified draws of the kernel parameters and of lambda from its prior."""
    dim = 2 + n_active + 1
    sampler = qmc.LatinHypercube(d=dim, seed=rng)
    U = sampler.random(restarts)
    U = np.clip(U, 1e-3, 1.0 - 1e-3)
    rate = prior.effective_rate(knorm2)
    lam = gamma.ppf(U[:, -1], prior.shape, scale=1.0 / rate)
    return U[:, :-1], lam


def optimize_weight_gp(w, Z, prior, knorm2, restarts=8, max_iter=2000, rng=None):
    """Multi-start bounded quasi-Newton maximisation in logit/log coordinates.

    Returns (kernel, lam, log_density, converged).
    """
    rng = np.random.default_rng(rng)
    w = np.asarray(w, dtype=float)
    Z = np.asarray(Z, dtype=float).reshape(len(w), -1)
    n_active = Z.shape[1]
    D = 4.0 * (Z.T[:, :, None] - Z.T[:, None, :]) ** 2
    rate = float(prior.effective_rate(knorm2))
    starts_u, starts_lam = _prior_starts(n_active, prior, knorm2, restarts, rng)
    bounds = [(-_LOGIT_BOUND, _LOGIT_BOUND)] * (2 + n_active) + [_LOG_LAMBDA_BOUNDS]

    best = None
    converged = False
    for u0, lam0 in zip(starts_u, starts_lam):
        theta0 = np.concatenate([logit(u0), [np.clip(np.log(lam0), *_LOG_LAMBDA_BOUNDS)]])
        res = optimize.minimize(_objective_and_grad, theta0, jac=True,
                                args=(w, D, prior, rate), method="L-BFGS-B",
                                bounds=bounds, options={"maxiter": max_iter})
        if best is None or res.fun < best.fun:
            best = res
        converged = converged or bool(res.success)
    kernel, lam = _unpack(best.x, n_active)
    value = weight_log_density(w, Z, kernel, lam, prior, knorm2)
    return kernel, lam, value, converged


def forward_select_inputs(weight_row, design, prior, threshold=2.0, knorm2=1.0,
                          restarts=8, max_iter=2000, rng=None):
    """Greedy forward selection of the inputs a weight GP depends on.

    Starting from the empty set, the input whose inclusion most increases the
    maximised log density is added until the best gain drops below
    ``threshold``.  Returns the sorted tuple of selected column indices.
    """
    rng = np.random.default_rng(rng)
    design = np.atleast_2d(np.asarray(design, dtype=float))
    w = np.asarray(weight_row, dtype=float)
    P = design.shape[1]
    active: list[int] = []
    if not np.isfinite(threshold) and threshold > 0:
        return ()
    *_, current, _ = optimize_weight_gp(w, design[:, []], prior, knorm2,
                                        restarts, max_iter, rng)
    while len(active) < P:
        gains = {}
        for p in range(P):
            if p in active:
                continue
            cols = sorted(active + [p])
            *_, val, _ = optimize_weight_gp(w, design[:, cols], prior, knorm2,
                                            restarts, max_iter, rng)
            gains[p] = val - current
        p_best = max(gains, key=lambda p: (gains[p], -p))
        if gains[p_best] < threshold:
            break
        active.append(p_best)
        current += gains[p_best]
    return tuple(sorted(active))


def simulation_precision_prior(ensemble, basis, priors=EmulatorPriors()):
    """Gamma(a', b') with a' = a + M(N-Q)/2 and b' = b + sum of residual energy / 2."""
    Y = ensemble.outputs if isinstance(ensemble, SimulationEnsemble) else np.asarray(ensemble)
    N, M = Y.shape
    Q = basis.n_basis
    base = default_simulation_prior(basis.singular_values, priors.shape)
    b = base.rate if priors.rate is None else priors.rate
    R = basis.projector() @ Y
    a_post = priors.shape + M * (N - Q) / 2.0
    b_post = b + 0.5 * float(np.sum(R * Y))
    return PrecisionPrior(a_post, b_post, k_scaled=True)


def build_weight_gp(w, Z_full, active, kernel, lam, prior, knorm2, converged=True):
    Z = Z_full[:, list(active)]
    C = _training_cov(Z, kernel, lam)
    L = _cholesky(C)
    alpha = linalg.cho_solve((L, True), w)
    return WeightGP(tuple(int(a) for a in active), kernel, lam, Z.copy(),
                    np.asarray(w, dtype=float).copy(), L, alpha,
                    weight_log_density(w, Z, kernel, lam, prior, knorm2), converged)


def fit_emulator(ensemble, basis: BasisPair, priors=EmulatorPriors(),
                 config=OptimizerConfig()) -> EmulatorModel:
    """Fit one GP per basis weight and freeze the optimised hyperparameters."""
    Z = ensemble.design
    M, P = Z.shape
    notes = []
    if M < 2 * P:
        msg = f"only {M} runs for {P} parameters; at least {2 * P} are recommended"
        warnings.warn(msg, EmulatorFitWarning, stacklevel=2)
        notes.append(msg)
    prior = simulation_precision_prior(ensemble, basis, priors)
    knorm2 = basis.norms2
    seeds = np.random.SeedSequence(config.seed).spawn(basis.n_basis)
    records = []
    for q in range(basis.n_basis):
        rng = np.random.default_rng(seeds[q])
        w = basis.W[q]
        if config.select_inputs:
            active = forward_select_inputs(w, Z, prior, config.selection_threshold,
                                           knorm2[q], config.restarts,
                                           config.max_iter, rng)
        else:
            active = tuple(range(P))
        kernel, lam, _, ok = optimize_weight_gp(w, Z[:, list(active)], prior, knorm2[q],
                                                config.restarts, config.max_iter, rng)
        if not ok:
            msg = f"weight {q}: optimiser did not converge; keeping best point found"
            warnings.warn(msg, EmulatorFitWarning, stacklevel=2)
            notes.append(msg)
        rec = build_weight_gp(w, Z, active, kernel, lam, prior, knorm2[q], ok)
        log.debug("weight %d: active=%s lam=%.3g logp=%.3f", q, active, lam,
                  rec.log_density)
        records.append(rec)
    total = float(sum(r.log_density for r in records))
    return EmulatorModel(records, Z.copy(), basis.W.copy(), knorm2.copy(), prior,
                         total, tuple(notes))


# -- prediction ------------------------------------------------------------

def predict_batch(model: EmulatorModel, Zs, lambda_star):
    """Conditional means and variances for a batch of calibration points.

    ``Zs`` is C x P, ``lambda_star`` is C x Q; returns two C x Q arrays.
    """
    Zs = np.atleast_2d(np.asarray(Zs, dtype=float))
    lam = np.atleast_2d(np.asarray(lambda_star, dtype=float))
    C = Zs.shape[0]
    Q = model.n_weights
    means = np.empty((C, Q))
    var = np.empty((C, Q))
    for q, gp in enumerate(model.per_weight):
        k = gp.kernel
        zs = Zs[:, list(gp.active)]
        cross = k.signal_var * correlation(zs, gp.design, np.log(k.beta))
        means[:, q] = cross @ gp.alpha
        V = linalg.solve_triangular(gp.chol, cross.T, lower=True)
        var[:, q] = (1.0 / lam[:, q] + k.signal_var + k.nugget
                     - np.einsum("ij,ij->j", V, V))
    return means, np.maximum(var, np.finfo(float).tiny)


def emulator_predict(model: EmulatorModel, z_star, lambda_star):
    """Per-weight conditional mean and variance at a single point ``z_star``."""
    z_star = np.asarray(z_star, dtype=float)
    if z_star.shape != (model.n_params,):
        raise ValueError(f"z_star must have length {model.n_params}")
    if np.any(z_star < 0.0) or np.any(z_star > 1.0):
        raise ValueError("z_star must lie in the unit hypercube")
    lam = np.asarray(lambda_star, dtype=float)
    if lam.shape != (model.n_weights,) or np.any(lam <= 0.0):
        raise ValueError("lambda_star must hold one positive precision per weight")
    m, v = predict_batch(model, z_star[None, :], lam[None, :])
    return m[0], v[0]
