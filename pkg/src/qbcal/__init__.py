"""Calibration of time-series simulators with basis-weight GP emulators,
structured discrepancy analysis and evidence-based model comparison."""

__version__ = "0.1.0"

from .basis import (BasisPair, SimulationEnsemble, build_complement_basis,
                    build_simulation_basis, project_observation)
from .emulator import EmulatorModel, emulator_predict, fit_emulator
from .inference import AnnealingSchedule, PosteriorArchive, ais_run, hdi
from .analysis import (DiscrepancyReport, ModelComparison, bayes_factor,
                       build_discrepancy_report, compare_models, compute_r2, rmse)
from .pipeline import PipelineSettings, calibrate

__all__ = [
    "BasisPair", "SimulationEnsemble", "build_complement_basis", "build_simulation_basis",
    "project_observation", "EmulatorModel", "emulator_predict", "fit_emulator",
    "AnnealingSchedule", "PosteriorArchive", "ais_run", "hdi", "DiscrepancyReport",
    "ModelComparison", "bayes_factor", "build_discrepancy_report", "compare_models",
    "compute_r2", "rmse", "PipelineSettings", "calibrate",
]
