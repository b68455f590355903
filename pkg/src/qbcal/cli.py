"""Command-line front end.

    qbcal simulate  --config exp.yaml [--seed N] [--out DIR]
    qbcal calibrate --config exp.yaml [--seed N] [--out DIR]
    qbcal analyze   --config exp.yaml [--seed N] [--out DIR] [ARCHIVE ...]
    qbcal compare   --config exp.yaml [--seed N] [--out DIR] [ARCHIVE ...]

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import linalg

from . import __version__
from .analysis import (SAME_SIZE_RULE, ModelEntry, build_discrepancy_report, compare_models,
                       rmse)
from .basis import SimulationEnsemble
from .config import ConfigError, ExperimentConfig, load_config
from .inference import PosteriorArchive, hdi
from .io import (DataFormatError, array_sha256, canonical_json, file_sha256, load_archive,
                 read_table, save_archive, split_unit, write_table)
from .pipeline import calibrate
from .thermalbox import (BOUNDARY_NAMES, BOUNDARY_UNITS, PARAMETERS, BoxVariantSpec,
                         make_synthetic_observation, parameter_bounds, parameter_names,
                         run_ensemble, sample_design, simulate, synthetic_boundary)

log = logging.getLogger("qbcal")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
ARCHIVE_SUFFIX = ".qbz"
ADVISORY = ("Model iteration is the modeller's call: stop upgrading once the best "
            "retained model predicts with sufficient accuracy.")
TARGET_UNIT = "degC"


class StageError(Exception):
    def __init__(self, stage, exc, code):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.code = code


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataFormatError):
        return EXIT_DATA
    if isinstance(exc, (FloatingPointError, np.linalg.LinAlgError, linalg.LinAlgError,
                        RuntimeError, ArithmeticError)):
        return EXIT_NUMERICAL
    if isinstance(exc, ValueError):
        return EXIT_DATA
    return EXIT_NUMERICAL


class Run:
    """Bookkeeping for one command: lock, stage status and the manifest."""

    def __init__(self, command, config: ExperimentConfig, inputs):
        self.command = command
        self.config = config
        self.out = config.output_dir
        self.stages = {}
        self.artifacts = []
        self.input_hashes = {name: file_sha256(p) for name, p in sorted(inputs.items())}
        self.hash = _sha(canonical_json({"config": config.hashable(),
                                         "inputs": self.input_hashes,
                                         "command": command, "version": __version__}))
        self.started = _now()

    @contextlib.contextmanager
    def stage(self, name):
        self.stages[name] = "running"
        try:
            yield
        except (ConfigError, StageError):
            self.stages[name] = "failed"
            raise
        except Exception as exc:
            self.stages[name] = "failed"
            raise StageError(name, exc, _exit_code(exc)) from exc
        self.stages[name] = "ok"

    def record(self, path):
        self.artifacts.append(str(Path(path).relative_to(self.out)))

    def deterministic_manifest(self):
        return {"manifestHash": self.hash, "command": self.command, "seed": self.config.seed,
                "version": __version__, "inputs": self.input_hashes}

    def write_manifest(self, status):
        doc = dict(self.deterministic_manifest(), status=status, stages=self.stages,
                   artifacts=self.artifacts, started=self.started, finished=_now(),
                   config=self.config.hashable())
        path = self.out / f"manifest_{self.command}.json"
        path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")


def _sha(text):
    return hashlib.sha256(text.encode()).hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@contextlib.contextmanager
def output_lock(out: Path):
    try:
        out.mkdir(parents=True, exist_ok=True)
        fd = os.open(out / ".qbcal.lock", os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"output directory {out} is locked by another run "
                          "(remove .qbcal.lock if that run is dead)") from None
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(OSError):
            os.remove(out / ".qbcal.lock")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# -- readers ---------------------------------------------------------------

def read_boundary(path):
    headers, data, _ = read_table(path)
    names = [split_unit(h)[0] for h in headers]
    return names, data


def read_observation(path):
    headers, data, _ = read_table(path)
    if data.shape[1] != 1:
        raise DataFormatError(f"{path}: observation file must have exactly one data column")
    return data[:, 0]


def observation_noise_variance(config: ExperimentConfig):
    nv = config.data["noise_variance"]
    if nv is not None:
        return float(nv)
    sidecar = config.observation_path.with_suffix(".json")
    if not sidecar.is_file():
        raise ConfigError("noise variance unknown: set data.noise_variance or provide "
                          f"{sidecar.name} next to the observation file")
    try:
        value = float(json.loads(sidecar.read_text())["noiseVariance"])
    except (KeyError, ValueError, TypeError) as exc:
        raise DataFormatError(f"{sidecar}: cannot read noiseVariance ({exc})") from None
    if not value > 0:
        raise DataFormatError(f"{sidecar}: noiseVariance must be positive")
    return value


def read_model(model, boundary, boundary_names, x0_seed):
    try:
        meta = json.loads(model.parameters.read_text())
        names, lower, upper = meta["names"], meta["lower"], meta["upper"]
    except (OSError, ValueError, KeyError) as exc:
        raise DataFormatError(f"{model.parameters}: {exc}") from None
    _, Y, _ = read_table(model.ensemble)
    headers, D, _ = read_table(model.design)
    cols = [split_unit(h)[0] for h in headers]
    try:
        settings = D[:, [cols.index(n) for n in names]]
    except ValueError:
        raise DataFormatError(f"{model.design}: missing columns for {names}") from None
    if Y.shape[0] != boundary.shape[0]:
        raise DataFormatError(f"{model.ensemble}: {Y.shape[0]} rows but the boundary file "
                              f"has {boundary.shape[0]}")
    try:
        return SimulationEnsemble.from_original_units(Y, settings, lower, upper, boundary,
                                                      names, boundary_names, x0_seed)
    except ValueError as exc:
        raise DataFormatError(f"model {model.name}: {exc}") from None


def _x0_seed(config):
    s = config.data["x0_seed"]
    if s is not None:
        return int(s)
    return int(np.random.SeedSequence([config.seed, 7]).generate_state(1)[0])


# -- simulate --------------------------------------------------------------

def cmd_simulate(config: ExperimentConfig):
    syn = config.synthetic
    if syn is None:
        raise ConfigError("simulate needs a 'synthetic' section")
    out = config.output_dir
    with output_lock(out):
        run = Run("simulate", config, {})
        status = "failed"
        try:
            _simulate(run, config, syn, out)
            status = "ok"
        finally:
            run.write_manifest(status)
    return EXIT_OK


def _simulate(run, config, syn, out):
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    b_seed, y_seed, d_seed = (int(s.generate_state(1)[0]) for s in seeds)
    if syn["boundary_seed"] is not None:
        b_seed = int(syn["boundary_seed"])
    steps, minutes = int(syn["steps"]), int(syn["step_minutes"])
    with run.stage("boundary"):
        boundary = synthetic_boundary(steps, minutes, seed=b_seed,
                                      pulse_power=float(syn["pulse_power"]))
        path = out / "boundary.csv"
        write_table(path, [f"{n} [{u}]" for n, u in zip(BOUNDARY_NAMES, BOUNDARY_UNITS)],
                    boundary.as_matrix())
        run.record(path)
    with run.stage("observation"):
        truth = BoxVariantSpec.reference(syn["truth"], minutes,
                                         **{k: float(v) for k, v in
                                            syn["truth_parameters"].items()})
        t0 = float(boundary.external_temp[0])
        y, nv = make_synthetic_observation(truth, boundary, float(syn["noise_ratio"]),
                                           seed=y_seed, initial_temp=t0)
        clean = simulate(truth, boundary, t0)
        for name, series in (("observation.csv", y), ("truth.csv", clean)):
            write_table(out / name, [f"y [{TARGET_UNIT}]"], series[:, None])
            run.record(out / name)
        _write_json(out / "observation.json",
                    {"noiseVariance": nv, "noiseRatio": float(syn["noise_ratio"]),
                     "truth": {"variant": truth.variant.value,
                               "parameters": dict(sorted(truth.parameters.items()))},
                     "manifestHash": run.hash})
        run.record(out / "observation.json")
    for variant in syn["variants"]:
        with run.stage(f"ensemble:{variant}"):
            names = parameter_names(variant)
            lo, hi = parameter_bounds(variant)
            design = sample_design(len(names), int(syn["runs"]), seed=d_seed)
            Y, settings = run_ensemble(variant, design, boundary, minutes, t0)
            vdir = out / variant
            vdir.mkdir(exist_ok=True)
            M = Y.shape[1]
            write_table(vdir / "ensemble.csv", [f"run_{m + 1:03d}" for m in range(M)], Y,
                        index_name="t")
            units = [PARAMETERS[n][3] for n in names]
            write_table(vdir / "design.csv",
                        [f"{n} [{u}]" for n, u in zip(names, units)]
                        + [f"{n}_norm [-]" for n in names],
                        np.column_stack([settings, design]),
                        index=range(1, M + 1), index_name="run")
            _write_json(vdir / "parameters.json",
                        {"variant": variant, "names": list(names), "units": units,
                         "lower": lo.tolist(), "upper": hi.tolist(),
                         "manifestHash": run.hash})
            for f in ("ensemble.csv", "design.csv", "parameters.json"):
                run.record(vdir / f)
    log.info("simulate: wrote %d artifacts to %s", len(run.artifacts), out)


# -- calibrate -------------------------------------------------------------

def _data_inputs(config):
    return {"boundary": config.boundary_path, "observation": config.observation_path}


def cmd_calibrate(config: ExperimentConfig):
    config.check_inputs()
    inputs = _data_inputs(config)
    for m in config.models:
        inputs.update({f"{m.name}/ensemble": m.ensemble, f"{m.name}/design": m.design,
                       f"{m.name}/parameters": m.parameters})
    out = config.output_dir
    with output_lock(out):
        run = Run("calibrate", config, inputs)
        status = "failed"
        try:
            with run.stage("load"):
                bnames, B = read_boundary(config.boundary_path)
                y = read_observation(config.observation_path)
                if y.size != B.shape[0]:
                    raise DataFormatError("observation and boundary lengths differ")
                c = float(config.raw["priors"]["a_star_c"])
                if c < 2.0 / y.size:
                    raise ConfigError(f"priors.a_star_c = {c} is below 2/N = {2.0 / y.size:.4g}")
                nv = observation_noise_variance(config)
                x0_seed = _x0_seed(config)
                ensembles = [read_model(m, B, bnames, x0_seed) for m in config.models]
            settings = config.pipeline_settings()
            for model, ens in zip(config.models, ensembles):
                current = {"name": "basis"}

                def on_stage(name, model=model, current=current):
                    run.stages[f"{model.name}:{name}"] = "running"
                    if current["name"] != name:
                        run.stages[f"{model.name}:{current['name']}"] = "ok"
                    current["name"] = name

                with run.stage(f"{model.name}:calibrate"):
                    outcome = calibrate(ens, y, nv, settings, config.seed, on_stage)
                    run.stages[f"{model.name}:{current['name']}"] = "ok"
                with run.stage(f"{model.name}:write"):
                    _write_calibration(run, config, model.name, ens, outcome, y)
            status = "ok"
        finally:
            run.write_manifest(status)
    return EXIT_OK


def _write_calibration(run, config, name, ens, outcome, y):
    out = config.output_dir
    a = outcome.archive
    arrays = {
        "calibration_samples": a.calibration_samples,
        "calibration_log_weights": a.calibration_log_weights,
        "discrepancy_samples": a.discrepancy_samples,
        "discrepancy_log_weights": a.discrepancy_log_weights,
        "calibration_replicates": a.calibration_replicates,
        "discrepancy_replicates": a.discrepancy_replicates,
        "log_jacobian": np.array(a.log_jacobian),
        "K": outcome.basis.K, "H": outcome.basis.H,
        "w_star": outcome.w_star, "v_hat": outcome.v_hat,
        "boundary": ens.boundary, "observation": y, "prediction": outcome.prediction,
        "lower": ens.lower, "upper": ens.upper,
    }
    manifest = dict(run.deterministic_manifest(), model=name, nRuns=ens.n_runs,
                    nSteps=ens.n_steps, nBasis=outcome.basis.n_basis,
                    names=list(ens.names),
                    boundaryNames=["x0"] + list(ens.boundary_names),
                    noiseVariance=outcome.noise_variance,
                    observationHash=array_sha256(y),
                    emulatorWarnings=list(outcome.emulator.warnings))
    path = out / f"{name}{ARCHIVE_SUFFIX}"
    save_archive(path, arrays, manifest)
    run.record(path)
    summary = calibration_summary(name, outcome, ens, run.hash)
    _write_json(out / f"{name}_summary.json", summary)
    (out / f"{name}_summary.txt").write_text(summary_table(summary) + "\n")
    run.record(out / f"{name}_summary.json")
    run.record(out / f"{name}_summary.txt")


def calibration_summary(name, outcome, ens, manifest_hash):
    units = {n: PARAMETERS[n][3] if n in PARAMETERS else "-" for n in ens.names}
    params = [dict(row, unit=units.get(row["name"], "-"))
              for row in outcome.parameter_summary()]
    reps = outcome.archive.log10_replicates
    lo, hi = hdi(reps) if reps.size > 1 else (float(reps[0]), float(reps[0]))
    return {"model": name, "manifestHash": manifest_hash, "parameters": params,
            "log10Evidence": float(np.mean(reps)), "log10EvidenceHdi": [lo, hi],
            "log10EvidenceReplicates": reps.tolist(),
            "rmse": outcome.rmse, "rmseUnit": TARGET_UNIT, "nRuns": ens.n_runs,
            "nBasis": outcome.basis.n_basis}


def summary_table(summary):
    lines = [f"model {summary['model']}  (manifest {summary['manifestHash'][:12]})",
             f"{'parameter':<12} {'unit':<8} {'estimate':>14} {'95% HDI low':>14} "
             f"{'95% HDI high':>14}"]
    for p in summary["parameters"]:
        lines.append(f"{p['name']:<12} {p['unit']:<8} {p['estimate']:14.6g} "
                     f"{p['hdiLow']:14.6g} {p['hdiHigh']:14.6g}")
    lo, hi = summary["log10EvidenceHdi"]
    lines.append(f"log10 evidence [-]: {summary['log10Evidence']:.3f}  "
                 f"95% HDI [{lo:.3f}, {hi:.3f}]")
    lines.append(f"RMSE [{summary['rmseUnit']}]: {summary['rmse']:.4f}")
    return "\n".join(lines)


# -- analyze / compare -----------------------------------------------------

def _archive_paths(config, explicit):
    if explicit:
        return [Path(p) for p in explicit]
    if not config.models:
        raise ConfigError("no archives given and no models listed in the config")
    return [config.output_dir / f"{m.name}{ARCHIVE_SUFFIX}" for m in config.models]


def _load(path):
    if not Path(path).is_file():
        raise ConfigError(f"archive {path} does not exist")
    arrays, manifest = load_archive(path)
    archive = PosteriorArchive(
        arrays["calibration_samples"], arrays["calibration_log_weights"],
        arrays["discrepancy_samples"], arrays["discrepancy_log_weights"],
        arrays["calibration_replicates"], arrays["discrepancy_replicates"],
        float(arrays["log_jacobian"]))
    return arrays, manifest, archive


def _check_against_config(path, manifest, config):
    """The archive must come from the same boundary and observation files."""
    expected = {}
    for key, p in _data_inputs(config).items():
        if p is not None and p.is_file():
            expected[key] = file_sha256(p)
    recorded = manifest.get("inputs", {})
    for key, h in expected.items():
        if key in recorded and recorded[key] != h:
            raise ConfigError(f"{path}: archive was built from a different {key} file "
                              "than the one in the config (hash mismatch)")


def cmd_analyze(config: ExperimentConfig, archives=()):
    paths = _archive_paths(config, archives)
    out = config.output_dir
    with output_lock(out):
        run = Run("analyze", config, {p.name: p for p in paths if p.is_file()})
        status = "failed"
        try:
            for path in paths:
                arrays, manifest, archive = _load(path)
                _check_against_config(path, manifest, config)
                name = manifest.get("model", path.stem)
                with run.stage(f"{name}:analyze"):
                    report = build_discrepancy_report(
                        archive, arrays["v_hat"], arrays["boundary"], arrays["H"],
                        manifest["boundaryNames"], K=arrays["K"])
                doc = dict(report.to_dict(), model=name, manifestHash=run.hash,
                           archiveManifestHash=manifest["manifestHash"])
                _write_json(out / f"{name}_discrepancy.json", doc)
                text = f"model {name}: discrepancy attribution (R2 [-])\n" + report.table()
                (out / f"{name}_discrepancy.txt").write_text(text + "\n")
                print(text)
                run.record(out / f"{name}_discrepancy.json")
                run.record(out / f"{name}_discrepancy.txt")
            status = "ok"
        finally:
            run.write_manifest(status)
    return EXIT_OK


def cmd_compare(config: ExperimentConfig, archives=()):
    paths = _archive_paths(config, archives)
    if len(paths) < 2:
        raise ConfigError("compare needs at least two archives")
    loaded = [_load(p) for p in paths]
    sizes = {m["nRuns"] for _, m, _ in loaded}
    if len(sizes) > 1:
        raise ConfigError(f"{SAME_SIZE_RULE} (got M = {sorted(sizes)})")
    if len({m["nSteps"] for _, m, _ in loaded}) > 1:
        raise ConfigError("archives differ in the number of output steps N")
    if len({m["observationHash"] for _, m, _ in loaded}) > 1:
        raise ConfigError("archives were calibrated against different observations")
    out = config.output_dir
    with output_lock(out):
        run = Run("compare", config, {p.name: p for p in paths})
        status = "failed"
        try:
            with run.stage("compare"):
                entries = [ModelEntry(m.get("model", p.stem), a.log10_replicates,
                                      rmse(arr["prediction"], arr["observation"]),
                                      m["nRuns"])
                           for p, (arr, m, a) in zip(paths, loaded)]
                comparison = compare_models(entries)
            doc = dict(comparison.to_dict(), manifestHash=run.hash,
                       rmseUnit=TARGET_UNIT, advisory=ADVISORY)
            _write_json(out / "comparison.json", doc)
            text = comparison.table() + "\n\n" + ADVISORY
            (out / "comparison.txt").write_text(text + "\n")
            print(text)
            run.record(out / "comparison.json")
            run.record(out / "comparison.txt")
            status = "ok"
        finally:
            run.write_manifest(status)
    return EXIT_OK


# -- entry point -----------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="qbcal", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"qbcal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("simulate", "generate a synthetic experiment"),
                           ("calibrate", "calibrate every model in the config"),
                           ("analyze", "discrepancy attribution of calibrated models"),
                           ("compare", "Bayes-factor comparison of calibrated models")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("analyze", "compare"):
            p.add_argument("archives", nargs="*", help="archive files (default: from config)")
    return parser


COMMANDS = {"simulate": cmd_simulate, "calibrate": cmd_calibrate,
            "analyze": cmd_analyze, "compare": cmd_compare}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, seed=args.seed, out=args.out)
        fn = COMMANDS[args.command]
        if args.command in ("analyze", "compare"):
            return fn(config, args.archives)
        return fn(config)
    except StageError as exc:
        print(f"qbcal {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, DataFormatError) as exc:
        print(f"qbcal {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
