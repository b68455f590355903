"""Simulation basis K, its orthogonal complement H and the associated projections.

The first Q-1 columns of K are left singular vectors of the run-centred
ensemble scaled by ``s / sqrt(M)``; the last column is the all-ones vector so
that its weights reproduce the per-run means.  H is an orthonormal basis of the
space orthogonal to K.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SimulationEnsemble:
    """M runs of an N-point output series together with their settings.

    ``outputs`` is N x M, ``design`` is M x P in the unit hypercube and
    ``boundary`` is N x (S+1): the fictitious i.i.d. standard-normal column x0
    followed by the S standardised boundary conditions.
    """

    outputs: np.ndarray
    design: np.ndarray
    boundary: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    names: tuple[str, ...] = ()
    boundary_names: tuple[str, ...] = ()
    x0_seed: int | None = None

    def __post_init__(self):
        Y = np.asarray(self.outputs, dtype=float)
        Z = np.atleast_2d(np.asarray(self.design, dtype=float))
        if Y.ndim != 2:
            raise ValueError("outputs must be an N x M matrix")
        if Z.shape[0] != Y.shape[1]:
            raise ValueError(
                f"design has {Z.shape[0]} rows but outputs has {Y.shape[1]} runs")
        if Y.shape[1] < 2:
            raise ValueError("at least two simulation runs are required")
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(Z))):
            raise ValueError("ensemble contains non-finite entries")
        if np.any(Z < 0.0) or np.any(Z > 1.0):
            raise ValueError("design entries must lie in [0, 1]")
        object.__setattr__(self, "outputs", Y)
        object.__setattr__(self, "design", Z)
        if self.boundary is not None:
            X = np.asarray(self.boundary, dtype=float)
            if X.ndim != 2 or X.shape[0] != Y.shape[0]:
                raise ValueError("boundary must have one row per output step")
            if not np.all(np.isfinite(X)):
                raise ValueError("boundary contains non-finite entries")
            object.__setattr__(self, "boundary", X)

    @property
    def n_steps(self) -> int:
        return self.outputs.shape[0]

    @property
    def n_runs(self) -> int:
        return self.outputs.shape[1]

    @property
    def n_params(self) -> int:
        return self.design.shape[1]

    @classmethod
    def from_original_units(cls, outputs, settings, lower, upper, boundary=None,
                            names=(), boundary_names=(), x0_seed=None):
        """Build an ensemble from parameter settings in physical units.

        ``boundary`` holds the raw boundary conditions (N x S); they are
        standardised and the fictitious x0 column is prepended using
        ``x0_seed``.
        """
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        design = normalize(settings, lower, upper)
        X = None
        if boundary is not None:
            X = standardize_boundary(boundary, x0_seed)
        return cls(outputs, design, X, lower, upper, tuple(names),
                   tuple(boundary_names), x0_seed)

    def to_original_units(self, z):
        if self.lower is None:
            raise ValueError("ensemble carries no normalisation bounds")
        return denormalize(z, self.lower, self.upper)


def normalize(settings, lower, upper):
    settings = np.atleast_2d(np.asarray(settings, dtype=float))
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper <= lower):
        raise ValueError("every upper bound must exceed its lower bound")
    return (settings - lower) / (upper - lower)


def denormalize(z, lower, upper):
    z = np.asarray(z, dtype=float)
    return np.asarray(lower) + z * (np.asarray(upper) - np.asarray(lower))


def standardize_boundary(boundary, x0_seed):
    """Standardise each boundary column and prepend the x0 noise column.

    Column 0 of the result is x0 so that column s holds boundary condition s.
    """
    B = np.atleast_2d(np.asarray(boundary, dtype=float))
    mu = B.mean(axis=0)
    sd = B.std(axis=0)
    sd[sd == 0.0] = 1.0
    x0 = np.random.default_rng(x0_seed).standard_normal(B.shape[0])
    return np.column_stack([x0, (B - mu) / sd])


@dataclass(frozen=True)
class BasisPair:
    K: np.ndarray
    W: np.ndarray
    column_means: np.ndarray
    variance_explained: float
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    H: np.ndarray | None = None

    @property
    def n_basis(self) -> int:
        return self.K.shape[1]

    @property
    def norms2(self) -> np.ndarray:
        """k_q^T k_q for every column."""
        return np.einsum("nq,nq->q", self.K, self.K)

    @property
    def complete(self) -> bool:
        return self.H is not None

    def projector(self) -> np.ndarray:
        """P = I - K (K^T K)^-1 K^T."""
        K = self.K
        return np.eye(K.shape[0]) - K @ np.linalg.solve(K.T @ K, K.T)


def _fix_signs(U):
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def build_simulation_basis(ensemble, variance_fraction=0.99, rtol=1e-12):
    """Select SVD directions of the run-centred outputs plus the ones vector.

    Directions are added in decreasing singular-value order until their
    cumulative squared singular values reach ``variance_fraction`` of the
    total.  All directions tied with the last selected one are included.
    """
    if not 0.0 < variance_fraction <= 1.0:
        raise ValueError("variance_fraction must lie in (0, 1]")
    Y = ensemble.outputs if isinstance(ensemble, SimulationEnsemble) else np.asarray(ensemble, float)
    N, M = Y.shape
    if M < 2:
        raise ValueError("at least two simulation runs are required")
    means = Y.mean(axis=0)
    Yc = Y - means
    U, s, _ = np.linalg.svd(Yc, full_matrices=False)
    total = float(np.sum(s ** 2))
    tiny = rtol * max(float(s[0]) if s.size else 0.0, np.finfo(float).tiny)

    if total <= 0.0 or s[0] <= np.finfo(float).eps * max(1.0, np.abs(Y).max()) * np.sqrt(N * M):
        n_sel = 0
        explained = 1.0
    else:
        cum = np.cumsum(s ** 2) / total
        n_sel = int(np.searchsorted(cum, variance_fraction - 1e-12) + 1)
        n_sel = min(n_sel, s.size)
        # include directions tied with the last selected one
        while n_sel < s.size and np.isclose(s[n_sel], s[n_sel - 1], rtol=1e-12, atol=0.0):
            n_sel += 1
        if np.any(s[:n_sel] <= tiny):
            raise ValueError(
                "rank-deficient ensemble: the requested variance fraction needs "
                "zero singular values")
        explained = float(cum[n_sel - 1])
    if n_sel + 1 > N:
        raise ValueError("basis would have more columns than output points")

    Usel = _fix_signs(U[:, :n_sel])
    K = np.column_stack([Usel * (s[:n_sel] / np.sqrt(M)), np.ones(N)])
    norms2 = np.einsum("nq,nq->q", K, K)
    W = (K.T @ Y) / norms2[:, None]
    return BasisPair(K=K, W=W, column_means=means,
                     variance_explained=min(explained, 1.0),
                     singular_values=s.copy())


def build_complement_basis(basis):
    """Orthonormal eigenvectors of P with eigenvalue one (threshold 0.5)."""
    K = basis.K
    N, Q = K.shape
    if Q >= N:
        raise ValueError("no complement space: Q equals N")
    P = np.eye(N) - K @ np.linalg.solve(K.T @ K, K.T)
    P = 0.5 * (P + P.T)
    evals, evecs = np.linalg.eigh(P)
    H = evecs[:, evals > 0.5]
    if H.shape[1] != N - Q:
        raise ValueError("projector eigenvalues do not split into N-Q ones")
    H = _fix_signs(H[:, ::-1])
    return BasisPair(K=basis.K, W=basis.W, column_means=basis.column_means,
                     variance_explained=basis.variance_explained,
                     singular_values=basis.singular_values, H=H)


def project_observation(y, basis):
    """Return (w*, v_hat) with w*_q = k_q^T y / k_q^T k_q and v_hat = H^T y."""
    if basis.H is None:
        raise ValueError("complement basis H has not been built")
    y = np.asarray(y, dtype=float)
    if y.shape != (basis.K.shape[0],):
        raise ValueError(f"observation must have length {basis.K.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise ValueError("observation contains non-finite entries")
    w_star = (basis.K.T @ y) / basis.norms2
    v_hat = basis.H.T @ y
    return w_star, v_hat
