"""End-to-end calibration of one model variant against one observation series.

basis -> emulator -> replicated AIS on both posteriors -> summaries.  All
randomness derives from a single master seed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .analysis import DiscrepancyReport, ModelEntry, build_discrepancy_report, rmse
from .basis import (BasisPair, SimulationEnsemble, build_complement_basis,
                    build_simulation_basis, project_observation)
from .emulator import (EmulatorModel, EmulatorPriors, OptimizerConfig, fit_emulator,
                       predict_batch)
from .inference import (AnnealingSchedule, CalibrationProblem, DiscrepancyProblem,
                        PosteriorArchive, hdi, run_replicated, weighted_median)
from .kernel import observation_prior

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineSettings:
    variance_fraction: float = 0.99
    prior_shape: float = 2.0
    prior_rate: float | None = None          # None: sqrt(eps) * largest singular value
    a_star_c: float = 0.1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: AnnealingSchedule = field(default_factory=AnnealingSchedule.default)
    discrepancy_schedule: AnnealingSchedule | None = None
    replicates: int = 20
    basis_jacobian: bool = True


def stage_seeds(master_seed):
    """Integer seeds for the emulator, calibration AIS and discrepancy AIS."""
    children = np.random.SeedSequence(master_seed).spawn(3)
    return [int(c.generate_state(1, dtype=np.uint64)[0] % (2 ** 63)) for c in children]


@dataclass(frozen=True)
class CalibrationOutcome:
    ensemble: SimulationEnsemble
    basis: BasisPair
    emulator: EmulatorModel
    observation: np.ndarray
    noise_variance: float
    w_star: np.ndarray
    v_hat: np.ndarray
    archive: PosteriorArchive
    prediction: np.ndarray

    @property
    def rmse(self) -> float:
        return rmse(self.prediction, self.observation)

    @property
    def n_runs(self) -> int:
        return self.ensemble.n_runs

    def parameter_summary(self, mass=0.95):
        """Posterior median and HDI of each calibration input in original units."""
        P = self.ensemble.n_params
        Z = self.archive.calibration_samples[:, :P]
        w = self.archive.calibration_weights
        rows = []
        for p in range(P):
            if self.ensemble.lower is not None:
                lo_b, hi_b = self.ensemble.lower[p], self.ensemble.upper[p]
            else:
                lo_b, hi_b = 0.0, 1.0
            x = lo_b + Z[:, p] * (hi_b - lo_b)
            lo, hi = hdi(x, mass, w)
            name = self.ensemble.names[p] if self.ensemble.names else f"z{p + 1}"
            rows.append({"name": name, "estimate": weighted_median(x, w),
                         "hdiLow": lo, "hdiHigh": hi})
        return rows

    def model_entry(self, name) -> ModelEntry:
        return ModelEntry(name, self.archive.log10_replicates, self.rmse, self.n_runs)

    def discrepancy_report(self, names=None) -> DiscrepancyReport:
        X = self.ensemble.boundary
        if names is None:
            names = ("x0",) + tuple(self.ensemble.boundary_names)
        return build_discrepancy_report(self.archive, self.v_hat, X, self.basis.H, names,
                                        K=self.basis.K)


def posterior_prediction(emulator, basis, archive, min_relative=1e-10):
    """Weighted posterior mean of K * E[w(z*)] over the calibration draws."""
    w = archive.calibration_weights
    keep = w > min_relative * w.max()
    P = emulator.n_params
    S = archive.calibration_samples[keep]
    means, _ = predict_batch(emulator, S[:, :P], S[:, P:])
    mean_w = (w[keep] / w[keep].sum()) @ means
    return basis.K @ mean_w


def calibrate(ensemble: SimulationEnsemble, observation, noise_variance,
              settings: PipelineSettings = PipelineSettings(), seed=0,
              on_stage=None) -> CalibrationOutcome:
    """Fit the emulator and run both replicated AIS problems under ``seed``.

    ``on_stage(name)`` is called as each stage starts (basis, emulator,
    sampling, prediction).
    """
    stage = on_stage or (lambda name: None)
    if ensemble.boundary is None:
        raise ValueError("ensemble carries no boundary conditions")
    y = np.asarray(observation, dtype=float)
    emu_seed, cal_seed, dis_seed = stage_seeds(seed)
    stage("basis")
    basis = build_complement_basis(build_simulation_basis(ensemble, settings.variance_fraction))
    log.info("basis: Q=%d explaining %.6f of the variance", basis.n_basis,
             basis.variance_explained)
    w_star, v_hat = project_observation(y, basis)
    stage("emulator")
    priors = EmulatorPriors(settings.prior_shape, settings.prior_rate)
    optimizer = OptimizerConfig(settings.optimizer.restarts,
                                settings.optimizer.selection_threshold,
                                settings.optimizer.select_inputs,
                                settings.optimizer.max_iter, emu_seed)
    emulator = fit_emulator(ensemble, basis, priors, optimizer)
    stage("sampling")
    N = ensemble.n_steps
    cal_problem = CalibrationProblem(
        emulator, w_star, observation_prior(noise_variance, N, settings.a_star_c, True))
    dis_problem = DiscrepancyProblem(
        v_hat, ensemble.boundary, basis.H,
        observation_prior(noise_variance, N, settings.a_star_c, False), K=basis.K)
    dsched = settings.discrepancy_schedule or settings.schedule
    jac = -0.5 * float(np.sum(np.log(basis.norms2))) if settings.basis_jacobian else 0.0
    archive = run_replicated(cal_problem, dis_problem, settings.schedule.with_seed(cal_seed),
                             settings.replicates, dsched.with_seed(dis_seed), jac)
    stage("prediction")
    prediction = posterior_prediction(emulator, basis, archive)
    return CalibrationOutcome(ensemble, basis, emulator, y, float(noise_variance),
                              w_star, v_hat, archive, prediction)
