"""Squared-exponential covariances on the unit hypercube and their priors.

Both kernels use the correlation parameterisation ``c ** (4 * d**2)`` with
``c`` in (0, 1]; a value of one switches the corresponding input off.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

UNIT_CLIP = 1e-6
JITTER = 1e-10
ARD_BETA_A = 1.0
ARD_BETA_B = 0.1


@dataclass(frozen=True)
class EmulatorKernelParams:
    sigma2: float
    eta2: float
    beta: np.ndarray

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "beta", beta)

    @property
    def signal_var(self) -> float:
        return (1.0 - self.sigma2) / self.sigma2

    @property
    def nugget(self) -> float:
        return (1.0 - self.eta2) / self.eta2

    def check(self):
        for name, v in (("sigma2", self.sigma2), ("eta2", self.eta2)):
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {v}")
        if np.any(self.beta <= 0.0) or np.any(self.beta > 1.0):
            raise ValueError("beta entries must lie in (0, 1]")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.sigma2, self.eta2], self.beta])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), float(v[1]), v[2:].copy())


@dataclass(frozen=True)
class DiscrepancyKernelParams:
    tau2: float
    alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha",
                           np.atleast_1d(np.asarray(self.alpha, dtype=float)))

    @property
    def signal_var(self) -> float:
        return (1.0 - self.tau2) / self.tau2

    def check(self):
        if not 0.0 < self.tau2 < 1.0:
            raise ValueError(f"tau2 must lie strictly inside (0, 1), got {self.tau2}")
        if np.any(self.alpha <= 0.0) or np.any(self.alpha > 1.0):
            raise ValueError("alpha entries must lie in (0, 1]")

    def single_input(self, index: int) -> "DiscrepancyKernelParams":
        """Copy with every alpha except ``index`` set to one."""
        alpha = np.ones_like(self.alpha)
        alpha[index] = self.alpha[index]
        return DiscrepancyKernelParams(self.tau2, alpha)


@dataclass(frozen=True)
class PrecisionPrior:
    """Gamma(shape, rate) prior on a precision.

    With ``k_scaled`` the rate is divided by k_q^T k_q of the basis vector the
    precision belongs to.
    """

    shape: float
    rate: float
    k_scaled: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.shape) and np.isfinite(self.rate)) \
                or self.shape <= 0 or self.rate <= 0:
            raise ValueError("Gamma shape and rate must be finite and positive")

    def effective_rate(self, knorm2=None):
        if self.k_scaled:
            if knorm2 is None:
                raise ValueError("k_q^T k_q is required for a k-scaled prior")
            return self.rate / np.asarray(knorm2, dtype=float)
        return self.rate

    def log_density(self, lam, knorm2=None):
        return log_gamma_pdf(lam, self.shape, self.effective_rate(knorm2))

    def sample(self, rng, size, knorm2=None):
        rate = self.effective_rate(knorm2)
        return rng.gamma(self.shape, 1.0 / np.asarray(rate), size=size)


def _check_emulator(sigma2, eta2):
    if not 0.0 < sigma2 < 1.0 or not 0.0 < eta2 < 1.0:
        raise ValueError("sigma2 and eta2 must lie strictly inside (0, 1)")


def rho(zi, zj, params: EmulatorKernelParams, same_index: bool) -> float:
    """Emulator covariance between two (active-input) design points."""
    _check_emulator(params.sigma2, params.eta2)
    zi = np.atleast_1d(np.asarray(zi, dtype=float))
    zj = np.atleast_1d(np.asarray(zj, dtype=float))
    if zi.shape != params.beta.shape or zj.shape != params.beta.shape:
        raise ValueError("point dimension does not match the number of beta entries")
    corr = np.prod(params.beta ** (4.0 * (zi - zj) ** 2))
    value = params.signal_var * corr
    if same_index:
        value += params.nugget
    return float(value)


def zeta(xi, xj, params: DiscrepancyKernelParams) -> float:
    """Discrepancy covariance between two boundary-condition vectors."""
    if not 0.0 < params.tau2 < 1.0:
        raise ValueError("tau2 must lie strictly inside (0, 1)")
    if np.any(params.alpha <= 0.0):
        raise ValueError("alpha entries must be positive")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    xj = np.atleast_1d(np.asarray(xj, dtype=float))
    if xi.shape != params.alpha.shape or xj.shape != params.alpha.shape:
        raise ValueError("point dimension does not match the number of alpha entries")
    return float(params.signal_var * np.prod(params.alpha ** (4.0 * (xi - xj) ** 2)))


def sq_dist_stack(A, B=None):
    """4 * (a_p - b_p)^2 for every input p, shape (P, len(A), len(B))."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    return 4.0 * (A.T[:, :, None] - B.T[:, None, :]) ** 2


def correlation(A, B, log_corr_params):
    """prod_p c_p ** (4 (a_p - b_p)^2) for all pairs, c given as logs."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] == 0:
        return np.ones((A.shape[0], B.shape[0]))
    d2 = 4.0 * (A[:, None, :] - B[None, :, :]) ** 2
    return np.exp(d2 @ np.asarray(log_corr_params, dtype=float))


def emulator_cross(A, B, params: EmulatorKernelParams):
    """rho(A, B) with distinct indices (no white term)."""
    _check_emulator(params.sigma2, params.eta2)
    return params.signal_var * correlation(A, B, np.log(params.beta))


def gram(points, kind, params):
    """Covariance matrix of ``points`` under the emulator or discrepancy kernel.

    ``kind`` is ``"emulator"`` (white term on the diagonal) or
    ``"discrepancy"``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("point list is empty")
    if pts.ndim == 1:
        pts = pts[:, None]
    if kind == "emulator":
        if pts.shape[1] != params.beta.size:
            raise ValueError("point dimension does not match the number of beta entries")
        G = emulator_cross(pts, pts, params)
        G[np.diag_indices_from(G)] += params.nugget
    elif kind == "discrepancy":
        if not 0.0 < params.tau2 < 1.0:
            raise ValueError("tau2 must lie strictly inside (0, 1)")
        if np.any(params.alpha <= 0.0):
            raise ValueError("alpha entries must be positive")
        if pts.shape[1] != params.alpha.size:
            raise ValueError("point dimension does not match the number of alpha entries")
        G = params.signal_var * correlation(pts, pts, np.log(params.alpha))
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    return 0.5 * (G + G.T)


def add_jitter(G, scale=JITTER):
    G = np.array(G, dtype=float, copy=True)
    d = np.diag_indices(G.shape[-1])
    G[..., d[0], d[1]] += scale * np.max(np.diagonal(G, axis1=-2, axis2=-1), axis=-1, keepdims=True)
    return G


# -- prior densities -------------------------------------------------------

def log_uniform_unit(x):
    """Uniform(0, 1) log-density summed over ``x``; -inf outside the open interval."""
    x = np.asarray(x, dtype=float)
    if np.all((x > 0.0) & (x < 1.0)):
        return 0.0
    return -np.inf


def log_beta_ard(alpha):
    """Sum of Beta(1, 0.1) log-densities of the alpha entries.

    Entries at or above ``1 - UNIT_CLIP`` are evaluated at the clip value since
    the density diverges at one.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if np.any(alpha <= 0.0) or np.any(alpha > 1.0):
        return -np.inf
    a, b = ARD_BETA_A, ARD_BETA_B
    x = np.minimum(alpha, 1.0 - UNIT_CLIP)
    log_norm = gammaln(a + b) - gammaln(a) - gammaln(b)
    return float(np.sum(log_norm + (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x)))


def log_gamma_pdf(lam, shape, rate):
    lam = np.asarray(lam, dtype=float)
    rate = np.asarray(rate, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(lam) - rate * lam
    return np.where(lam > 0.0, out, -np.inf)


def log_prior(block, *precision_args):
    """Log prior density of a parameter block.

    Emulator kernel parameters and tau2 are Uniform(0, 1); discrepancy alphas
    are Beta(1, 0.1).  For a :class:`PrecisionPrior` pass the precision value
    (and k_q^T k_q when the prior is k-scaled).  Out-of-support values give
    ``-inf``.
    """
    if isinstance(block, EmulatorKernelParams):
        return log_uniform_unit(block.as_vector())
    if isinstance(block, DiscrepancyKernelParams):
        lp = log_uniform_unit([block.tau2])
        if not np.isfinite(lp):
            return -np.inf
        return lp + log_beta_ard(block.alpha)
    if isinstance(block, PrecisionPrior):
        return float(np.sum(block.log_density(*precision_args)))
    raise TypeError(f"no prior defined for {type(block).__name__}")


def default_simulation_prior(singular_values, shape=2.0):
    """Gamma(2, sqrt(eps) * s_max) prior for the simulation precision."""
    s_max = float(np.max(singular_values)) if np.size(singular_values) else 0.0
    rate = np.sqrt(np.finfo(float).eps) * s_max
    if rate <= 0.0:
        rate = np.sqrt(np.finfo(float).eps)
    return PrecisionPrior(shape, rate, k_scaled=True)


def observation_prior(noise_variance, n_obs, c=0.1, k_scaled=True):
    """Gamma(N c, var(nu) N c) prior for an observation precision."""
    if not 2.0 / n_obs - 1e-12 <= c <= 1.0:
        raise ValueError(f"confidence c must lie in [2/N, 1], got {c}")
    if noise_variance <= 0:
        raise ValueError("noise variance must be positive")
    return PrecisionPrior(n_obs * c, noise_variance * n_obs * c, k_scaled=k_scaled)
