"""Emulating a thermal test box from a small simulation ensemble.

A Latin hypercube of 30 runs of the three-node box is compressed onto a
handful of basis vectors, a GP is fitted to each basis weight, and the
emulator is then asked to predict a run it has never seen.

    python3 demos/emulate_test_box.py
"""
import numpy as np

from qbcal import SimulationEnsemble, build_simulation_basis, emulator_predict, fit_emulator
from qbcal.basis import normalize
from qbcal.emulator import OptimizerConfig
from qbcal.thermalbox import (BoxVariantSpec, parameter_bounds, parameter_names,
                              run_ensemble, sample_design, simulate, synthetic_boundary)

VARIANT = "MultiLayer"

# Two days of quarter-hourly weather and heating pulses.
boundary = synthetic_boundary(192, 15, seed=1)
t0 = float(boundary.external_temp[0])

design = sample_design(len(parameter_names(VARIANT)), 30, seed=4)
Y, settings = run_ensemble(VARIANT, design, boundary, 15, t0)
lower, upper = parameter_bounds(VARIANT)
ensemble = SimulationEnsemble.from_original_units(Y, settings, lower, upper,
                                                  names=parameter_names(VARIANT))
print(f"ensemble: {ensemble.n_steps} steps x {ensemble.n_runs} runs, "
      f"{ensemble.n_params} parameters")

# Few basis vectors capture almost all of the between-run variance.
basis = build_simulation_basis(ensemble, variance_fraction=0.999)
print(f"basis: {basis.n_basis} vectors explain {basis.variance_explained:.5f} of the variance")

emulator = fit_emulator(ensemble, basis, config=OptimizerConfig(restarts=4, seed=0))
for q, gp in enumerate(emulator.per_weight):
    active = [ensemble.names[p] for p in gp.active]
    print(f"  weight {q}: active inputs {active or 'none (constant)'}")

# A held-out setting: the wall a little more insulating than the reference.
spec = BoxVariantSpec.reference(VARIANT, wall_ins_k=0.042, rc_split=0.7)
held_out = np.array([spec.parameters[n] for n in parameter_names(VARIANT)])
z = normalize(held_out, lower, upper)[0]
truth = simulate(spec, boundary, t0)
mean_w, var_w = emulator_predict(emulator, z, np.full(basis.n_basis, 1e9))
pred = basis.K @ mean_w
sd = np.sqrt(np.clip(np.diag(basis.K @ np.diag(var_w) @ basis.K.T), 0.0, None))
err = pred - truth
print(f"held-out run: RMS error {np.sqrt(np.mean(err ** 2)):.4f} degC, "
      f"{np.mean(np.abs(err) <= 3 * sd + 1e-3):.0%} of steps inside 3 sd")
