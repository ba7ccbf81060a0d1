"""Experiment runner: config validation, cell execution, logs, summaries and plot tables."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ocp import OcpConfig
from .sim import (
    CONTROLLERS,
    FILTER_WINDOWS,
    SIGMA_SIM_NORMAL,
    DisturbanceModel,
    SimulationAborted,
    n_steps_for,
    run_closed_loop,
    summarize,
)
from .track import TrackError, load_reference_csv, save_reference_csv, synthesize_track
from .vehicle import ACC, N_X, PSI_DOT, V_LON, VehicleParams

SCHEMA_VERSION = 1
SUMMARY_SCHEMA_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_ABORTED = 0, 1, 2
LOG_ENV = "UPH_SNMPC_LOG"
DEFAULT_TRACK = {"kind": "oval", "straight_len": 150.0, "radius": 40.0, "v_max": 12.0}
TOP_LEVEL_KEYS = {
    "schema_version", "controllers", "ocp", "ocp_variants", "disturbance", "filter_windows",
    "track", "vehicle", "duration", "seeds", "output_dir", "derived",
}
TUPLE_FIELDS = {"Q", "R", "Q_e", "sigma_w_snmpc", "disturbed_states"}
SYNTH_KEYS = {"kind", "straight_len", "radius", "v_max"}

log = logging.getLogger("uph_snmpc")


class ConfigError(ValueError):
    pass


def _ocp_from_dict(data: dict, base: OcpConfig | None = None) -> OcpConfig:
    names = {f.name for f in dataclasses.fields(OcpConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown ocp fields {unknown}")
    kwargs = {k: (tuple(v) if k in TUPLE_FIELDS and v is not None else v) for k, v in data.items()}
    try:
        return dataclasses.replace(base or OcpConfig(), **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ocp: {exc}") from None


def _ocp_to_dict(cfg: OcpConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    controllers: tuple
    ocp: OcpConfig
    variants: tuple  # ((name, OcpConfig), ...)
    sigma_sim: tuple
    filter_windows: tuple
    track: dict
    vehicle: VehicleParams
    duration: float
    seeds: tuple
    output_dir: str

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path = Path(".")) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(data) - TOP_LEVEL_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")

        controllers = tuple(data.get("controllers", CONTROLLERS))
        if not controllers or any(c not in CONTROLLERS for c in controllers) or len(set(controllers)) != len(controllers):
            raise ConfigError(f"controllers must be a non-empty list of distinct entries from {list(CONTROLLERS)}")

        ocp = _ocp_from_dict(data.get("ocp", {}))
        variants = []
        for i, spec in enumerate(data.get("ocp_variants") or [{"name": "base"}]):
            if not isinstance(spec, dict):
                raise ConfigError(f"ocp_variants[{i}] must be an object")
            spec = dict(spec)
            name = spec.pop("name", None)
            if not isinstance(name, str) or not name or "/" in name:
                raise ConfigError(f"ocp_variants[{i}] needs a plain string name")
            variants.append((name, _ocp_from_dict(spec, ocp)))
        if len({n for n, _ in variants}) != len(variants):
            raise ConfigError("ocp variant names must be unique")

        dist = dict(data.get("disturbance", {}))
        if set(dist) - {"sigma_sim"}:
            raise ConfigError(f"unknown disturbance keys {sorted(set(dist) - {'sigma_sim'})}")
        sigma_sim = tuple(float(s) for s in dist.get("sigma_sim", SIGMA_SIM_NORMAL))
        try:
            DisturbanceModel(sigma_sim, 0)
        except ValueError as exc:
            raise ConfigError(f"disturbance: {exc}") from None

        windows = tuple(data.get("filter_windows", FILTER_WINDOWS))
        if len(windows) != N_X or any(not isinstance(w, int) or w < 1 for w in windows):
            raise ConfigError(f"filter_windows needs {N_X} integers >= 1")

        vehicle = _load_vehicle(data.get("vehicle"), base_dir)
        track = _resolve_track_spec(data.get("track", DEFAULT_TRACK), base_dir)

        duration = data.get("duration", 120.0)
        if not isinstance(duration, (int, float)) or not duration > 0:
            raise ConfigError("duration must be a positive number of seconds")
        for name, v in variants:
            try:
                n_steps_for(float(duration), v.T_s)
            except ValueError as exc:
                raise ConfigError(f"variant {name}: {exc}") from None

        seeds = data.get("seeds", [0])
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seeds must be a non-empty list")
        if any(not isinstance(s, int) or isinstance(s, bool) or not 0 <= s < 2**64 for s in seeds):
            raise ConfigError("seeds must be integers in [0, 2^64)")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be distinct")

        output_dir = data.get("output_dir", "uph_snmpc_out")
        if not isinstance(output_dir, str) or not output_dir:
            raise ConfigError("output_dir must be a non-empty string")
        return cls(controllers, ocp, tuple(variants), sigma_sim, windows, track, vehicle,
                   float(duration), tuple(seeds), output_dir)

    def to_dict(self) -> dict:
        base = _ocp_to_dict(self.ocp)
        variants = []
        for name, v in self.variants:
            diff = {k: val for k, val in _ocp_to_dict(v).items() if val != base[k]}
            variants.append({"name": name, **diff})
        return {
            "schema_version": SCHEMA_VERSION,
            "controllers": list(self.controllers),
            "ocp": base,
            "ocp_variants": variants,
            "disturbance": {"sigma_sim": list(self.sigma_sim)},
            "filter_windows": list(self.filter_windows),
            "track": dict(self.track),
            "vehicle": self.vehicle.to_dict(),
            "duration": self.duration,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    def build_track(self):
        if "path" in self.track:
            return load_reference_csv(self.track["path"])
        t = self.track
        return synthesize_track(t["kind"], float(t["straight_len"]), float(t["radius"]), float(t["v_max"]), self.vehicle)

    def cells(self) -> list:
        return [(variant, ctrl, seed) for variant, _ in self.variants for ctrl in self.controllers for seed in self.seeds]


def _load_vehicle(spec, base_dir: Path) -> VehicleParams:
    try:
        if spec is None:
            return VehicleParams.default()
        if isinstance(spec, str):
            return VehicleParams.from_json(base_dir / spec)
        if isinstance(spec, dict):
            return VehicleParams.from_dict(spec)
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"vehicle: {exc}") from None
    raise ConfigError("vehicle must be null, a parameter-file path or an object")


def _resolve_track_spec(spec, base_dir: Path) -> dict:
    if not isinstance(spec, dict):
        raise ConfigError("track must be an object")
    if "path" in spec:
        if set(spec) != {"path"}:
            raise ConfigError("a track file spec takes only 'path'")
        return {"path": str((base_dir / spec["path"]).resolve())}
    if set(spec) != SYNTH_KEYS:
        raise ConfigError(f"a synthesized track needs exactly {sorted(SYNTH_KEYS)}")
    return dict(spec)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    cfg = ExperimentConfig.from_dict(data, path.parent)
    try:
        cfg.build_track()
    except (TrackError, OSError, ValueError) as exc:
        raise ConfigError(f"track: {exc}") from None
    return cfg


def default_config_dict() -> dict:
    cfg = ExperimentConfig.from_dict({"schema_version": SCHEMA_VERSION})
    out = cfg.to_dict()
    out["ocp"]["Q_e"] = list(cfg.ocp.terminal_weights)
    out["derived"] = {"kappa": cfg.ocp.kappa, "N_p": cfg.ocp.N_p, "N_u": cfg.ocp.N_u}
    return out


def cell_id(variant: str, controller: str, seed: int) -> str:
    return f"{variant}/{controller}/seed{seed}"


def _write_table(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (str, int)) else repr(float(v)) for v in row])


def write_plot_tables(simlog, directory: Path) -> None:
    """gg-diagram, velocity, lateral-deviation and solver-status tables for one cell."""
    X = np.asarray(simlog.true_x, dtype=float).reshape(-1, N_X)
    t = np.asarray(simlog.steps) * simlog.T_s
    ref_v = [r[4] for r in simlog.reference]
    a_lat = X[:, V_LON] * X[:, PSI_DOT]
    _write_table(directory / "gg.csv", ["t", "a_lon", "a_lat", "gg"], zip(t, X[:, ACC], a_lat, simlog.gg))
    _write_table(directory / "velocity.csv", ["t", "v_lon", "v_ref"], zip(t, X[:, V_LON], ref_v))
    _write_table(directory / "lateral_dev.csv", ["t", "lateral_dev"], zip(t, simlog.lateral_dev))
    _write_table(directory / "solver_status.csv", ["step", "t", "status", "qp_iterations"],
                 zip(simlog.steps, t, simlog.status, simlog.qp_iterations))


def run_cell(cfg: ExperimentConfig, track, variant: str, controller: str, seed: int, out_dir: Path) -> dict:
    ocp = dict(cfg.variants)[variant]
    directory = out_dir / "cells" / variant / controller / f"seed{seed}"
    directory.mkdir(parents=True, exist_ok=True)
    log.info("cell %s started", cell_id(variant, controller, seed))
    abort_reason = None
    try:
        simlog = run_closed_loop(controller, ocp, cfg.vehicle, track, DisturbanceModel(cfg.sigma_sim, seed),
                                 cfg.duration, filter_windows=cfg.filter_windows)
    except SimulationAborted as exc:
        simlog, abort_reason = exc.log, str(exc)
        log.warning("cell %s aborted: %s", cell_id(variant, controller, seed), abort_reason)
    simlog.to_csv(directory / "simlog.csv")
    simlog.timing_to_csv(directory / "timing.csv")
    write_plot_tables(simlog, directory)
    metrics = summarize(simlog) if len(simlog) else None
    log.info("cell %s finished", cell_id(variant, controller, seed))
    return {"id": cell_id(variant, controller, seed), "variant": variant, "controller": controller,
            "seed": seed, "aborted": abort_reason is not None, "abort_reason": abort_reason, "metrics": metrics}


def _run_cell_job(args):
    return run_cell(*args)


def paired_comparisons(cells: list) -> list:
    """NMPC vs SNMPC per (variant, seed); ratios are SNMPC over nominal."""
    by_key = {(c["variant"], c["controller"], c["seed"]): c for c in cells}
    out = []
    for (variant, ctrl, seed), nom in sorted(by_key.items(), key=lambda kv: (kv[0][0], kv[0][2], kv[0][1])):
        sto = by_key.get((variant, "snmpc", seed))
        if ctrl != "nominal" or sto is None or nom["metrics"] is None or sto["metrics"] is None:
            continue
        n, s = nom["metrics"], sto["metrics"]
        ratio = s["max_abs_lateral_dev"] / n["max_abs_lateral_dev"] if n["max_abs_lateral_dev"] > 0 else None
        out.append({
            "variant": variant,
            "seed": seed,
            "max_abs_lateral_dev": {"nominal": n["max_abs_lateral_dev"], "snmpc": s["max_abs_lateral_dev"],
                                    "delta": s["max_abs_lateral_dev"] - n["max_abs_lateral_dev"], "ratio": ratio},
            "gg_violation_fraction": {"nominal": n["gg_violation_fraction"], "snmpc": s["gg_violation_fraction"],
                                      "delta": s["gg_violation_fraction"] - n["gg_violation_fraction"]},
            "either_aborted": nom["aborted"] or sto["aborted"],
        })
    return out


def run_experiment(config_path, out=None, parallel=None) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        _emit_error("validation", str(exc))
        return EXIT_INVALID
    out_dir = Path(out if out is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    track = cfg.build_track()
    jobs = [(cfg, track, v, c, s, out_dir) for v, c, s in cfg.cells()]
    workers = max(1, min(parallel or os.cpu_count() or 1, len(jobs)))
    log.info("running %d cells on %d workers", len(jobs), workers)
    if workers == 1:
        results = [_run_cell_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_job, jobs))

    summary = {"schema_version": SUMMARY_SCHEMA_VERSION, "config": cfg.to_dict(), "cells": results,
               "paired": paired_comparisons(results)}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, allow_nan=False, default=_json_default) + "\n")
    aborted = [r["id"] for r in results if r["aborted"]]
    if aborted:
        _emit_error("aborted", f"{len(aborted)} cell(s) aborted", cells=aborted)
        return EXIT_ABORTED
    print(json.dumps({"status": "ok", "summary": str(out_dir / "summary.json")}))
    return EXIT_OK


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _emit_error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def synthesize_track_command(spec_path, out_path) -> int:
    try:
        spec = json.loads(Path(spec_path).read_text())
        if not isinstance(spec, dict):
            raise ConfigError("track spec must be a JSON object")
        vehicle = _load_vehicle(spec.pop("vehicle", None), Path(spec_path).parent)
        if set(spec) != SYNTH_KEYS:
            raise ConfigError(f"track spec needs exactly {sorted(SYNTH_KEYS)} (plus optional vehicle)")
        traj = synthesize_track(spec["kind"], float(spec["straight_len"]), float(spec["radius"]),
                                float(spec["v_max"]), vehicle)
    except (OSError, json.JSONDecodeError, ConfigError, TrackError, ValueError, TypeError) as exc:
        _emit_error("validation", str(exc))
        return EXIT_INVALID
    save_reference_csv(traj, out_path)
    print(json.dumps({"status": "ok", "nodes": int(len(traj.s)), "length_m": float(traj.s[-1])}))
    return EXIT_OK


def validate_command(config_path) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        _emit_error("validation", str(exc))
        return EXIT_INVALID
    print(json.dumps({"status": "valid", "cells": len(cfg.cells())}))
    return EXIT_OK


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(prog="uph-snmpc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run every (variant, controller, seed) cell of an experiment")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides output_dir)")
    p_run.add_argument("--parallel", type=int, default=None, help="worker processes (default: CPU count)")
    sub.add_parser("defaults", help="print the default experiment config")
    p_syn = sub.add_parser("synthesize-track", help="write a synthesized reference track CSV")
    p_syn.add_argument("spec")
    p_syn.add_argument("out")
    p_val = sub.add_parser("validate", help="check an experiment config without running it")
    p_val.add_argument("config")
    args = parser.parse_args(argv)

    if args.command == "run":
        if args.parallel is not None and args.parallel < 1:
            _emit_error("validation", "--parallel must be >= 1")
            return EXIT_INVALID
        return run_experiment(args.config, args.out, args.parallel)
    if args.command == "defaults":
        print(json.dumps(default_config_dict(), indent=2))
        return EXIT_OK
    if args.command == "synthesize-track":
        return synthesize_track_command(args.spec, args.out)
    return validate_command(args.config)


if __name__ == "__main__":
    sys.exit(main())
