"""Command-line entry point: train, compile, eval, sweep, inspect.

Angles on the command line and in config files are degrees; everything is
converted to radians at this boundary. Exit codes: 0 success, 2 bad
configuration or arguments, 3 unreadable or malformed input/output files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import neuralnet as nn
from . import pipeline as pl
from .errors import ConfigError, UnknownChannel
from .physics import GateSpec
from .risk import RiskConfig
from .uncertainty import CHANNELS, NoiseConfig, check_channel

log = logging.getLogger("pulsecompile")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
PULSE_SCHEMA = 1

NETWORK_KEYS = {
    "n_gates": "n_gates",
    "batch_size": "batch_size",
    "epochs": "epochs",
    "lr": "lr",
    "weight_decay": "weight_decay",
    "width": "width",
    "hidden_layers": "hidden_layers",
    "dropout": "dropout",
    "degmax_deg": "degmax",
    "validation_gates": "validation_gates",
    "validate_every": "validate_every",
}
# Training-loop defaults of the risk-aware stage; architecture is inherited.
ROBUST_DEFAULTS = {"epochs": 500, "batch_size": 128, "lr": 1e-3, "scenarios_per_example": 32}
ROBUST_LOOP_KEYS = ("n_gates", "epochs", "batch_size", "lr", "weight_decay", "dropout", "scenarios_per_example")
RISK_KEYS = ("kind", "alpha", "lambda_tv", "lambda_spec", "spec_cutoff_fraction")
SYSTEM_CONTROL_KEYS = {"amplitude_khz": "amplitude", "dt_ms": "dt", "t_slices": "t_slices"}
SYSTEM_KEYS = ("n_qubits", "v", "j", "coupling_model")

# Sweep grids used when --grid is omitted (human units; degrees for phase channels).
DEFAULT_GRIDS = {
    "alpha_g": (0.85, 1.15, 7),
    "phi0": (-10.0, 10.0, 9),
    "v_scale": (0.9, 1.1, 9),
    "j_scale": (0.5, 1.5, 9),
    "dt_scale": (0.9, 1.1, 9),
    "a_jit_std": (0.0, 0.1, 6),
    "phi_jit_std": (0.0, 10.0, 6),
    "dt_jit_std": (0.0, 0.05, 6),
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- config -------------------------------------------------------------------


def _unknown(block: str, d: dict, allowed) -> None:
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {block!r} block: {', '.join(extra)}")


def train_config_from_run_config(doc: dict, stage: str, seed: int, workers: int = 1) -> pl.TrainConfig:
    """Merge a run-config document (blocks system/network/robust/noise) into a TrainConfig."""
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    _unknown("top level", doc, ("system", "network", "robust", "noise"))
    system = dict(doc.get("system", {}))
    network = dict(doc.get("network", {}))
    robust = dict(doc.get("robust", {}))
    _unknown("system", system, SYSTEM_KEYS + tuple(SYSTEM_CONTROL_KEYS))
    _unknown("network", network, NETWORK_KEYS)
    _unknown("robust", robust, ROBUST_LOOP_KEYS + RISK_KEYS + ("coupling_model",))

    kw = {"stage": stage, "seed": seed, "workers": workers}
    for key, name in SYSTEM_CONTROL_KEYS.items():
        if key in system:
            kw[name] = system.pop(key)
    kw["system"] = pl.system_from_dict(system)
    for key, name in NETWORK_KEYS.items():
        if key in network:
            kw[name] = network[key]
    if stage == "robust":
        for key in ROBUST_LOOP_KEYS:
            if key in robust:
                kw[key] = robust[key]
            elif key in ROBUST_DEFAULTS:
                kw[key] = ROBUST_DEFAULTS[key]
    if "coupling_model" in robust:
        kw["robust_coupling"] = robust["coupling_model"]
    kw["risk"] = RiskConfig(**{k: robust[k] for k in RISK_KEYS if k in robust})
    kw["noise"] = NoiseConfig.from_dict(doc.get("noise", {}))
    try:
        return pl.TrainConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc


def load_model(path):
    """Return ``(params, TrainConfig, checkpoint dict)`` from a checkpoint written by ``train``."""
    doc = _read_json(path)
    try:
        params, _, _ = nn.params_from_dict(doc)
        cfg = pl.TrainConfig.from_dict(doc["meta"]["config"])
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CliError(f"malformed checkpoint {path}: {exc}", EXIT_IO) from exc
    return params, cfg, doc


# -- output helpers -----------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def pulse_document(params, cfg: pl.TrainConfig, g: GateSpec, seed) -> dict:
    pulse, fid = pl.compile_gate(params, g, cfg)
    gamma, theta, alpha = g.degrees()
    return {
        "schema_version": PULSE_SCHEMA,
        "gate": {"gamma_deg": gamma, "theta_deg": theta, "alpha_deg": alpha},
        "t_slices": pulse.t_slices,
        "dt_ms": pulse.dt,
        "amplitude_khz": pulse.amplitude,
        "phases_rad": pulse.phases.tolist(),
        "phases_deg": np.degrees(pulse.phases).tolist(),
        "nominal_fidelity": fid,
        "model_hash": params.digest()[:16],
        "seed": seed,
    }


def dumps_pulse(doc: dict) -> str:
    return json_text(doc)


def parse_grid(text: str) -> list:
    """``start:stop:count`` with both ends included."""
    try:
        start, stop, count = text.split(":")
        start, stop, count = float(start), float(stop), int(count)
    except ValueError as exc:
        raise ConfigError(f"grid must look like start:stop:count, got {text!r}") from exc
    if count < 1 or (count == 1 and start != stop):
        raise ConfigError("grid needs count >= 2 unless start == stop")
    if count == 1:
        return [start]
    return [start + (stop - start) * i / (count - 1) for i in range(count)]


def parse_models(text: str) -> dict:
    models = {}
    for item in text.split(","):
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ConfigError(f"--models entries must be name=path, got {item!r}")
        if name in models:
            raise ConfigError(f"duplicate model name {name!r}")
        models[name] = path
    return models


# -- commands -----------------------------------------------------------------


def cmd_train(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    cfg = train_config_from_run_config(doc, args.stage, args.seed, args.workers)
    if args.epochs is not None:
        cfg = pl.with_overrides(cfg, epochs=args.epochs)
    init = None
    if args.stage == "robust":
        if not args.init:
            raise ConfigError("robust training needs --init <nominal checkpoint>")
        init, _, _ = load_model(args.init)
        if init.layer_dims != cfg.layer_dims:
            raise ConfigError(f"--init network dims {init.layer_dims} do not match config {cfg.layer_dims}")
    elif args.init:
        init, _, _ = load_model(args.init)

    def progress(row):
        if "val_fidelity" in row:
            print(f"epoch {row['epoch']}: loss {row['loss']:.6f} val {row['val_fidelity']:.6f}", file=sys.stderr)

    trainer = pl.train_robust if args.stage == "robust" else pl.train_nominal
    result = trainer(cfg, init, progress=None if args.quiet else progress)

    meta = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "stage": cfg.stage,
        "init_model_hash": init.digest()[:16] if init is not None else None,
        "best_validation": result.best_validation,
        "final_loss": result.curve[-1]["loss"] if result.curve else None,
        "revision": f"pulsecompile-{__version__}",
    }
    out = Path(args.out)
    _write(out / "model.json", nn.dumps_checkpoint(result.params, result.state, cfg.seed, meta) + "\n")
    rows = [(r["epoch"], r["loss"], r.get("val_fidelity", "")) for r in result.curve]
    _write(out / "curve.csv", csv_text(("epoch", "loss", "val_fidelity"), rows))
    print(f"wrote {out / 'model.json'}")
    return EXIT_OK


def cmd_compile(args) -> int:
    params, cfg, doc = load_model(args.model)
    g = GateSpec.from_degrees(args.gamma, args.theta, args.alpha)
    pulse = pulse_document(params, cfg, g, doc.get("seed"))
    out = Path(args.out)
    _write(out / "pulse.json", dumps_pulse(pulse))
    rows = list(enumerate(pulse["phases_rad"], start=1))
    _write(out / "pulse.csv", csv_text(("slice_index", "phase_rad"), rows))
    print(f"nominal fidelity {pulse['nominal_fidelity']:.6f}; wrote {out / 'pulse.json'}")
    return EXIT_OK


def histogram_rows(fids, bins: int):
    counts, edges = np.histogram(np.asarray(fids), bins=bins, range=(0.0, 1.0))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def cmd_eval(args) -> int:
    params, cfg, _ = load_model(args.model)
    cfg = pl.with_overrides(cfg, workers=args.workers)
    report = pl.eval_grid(params, args.mesh_deg, args.degmax, cfg)
    out = Path(args.out)
    rows = [(*g.degrees(), float(f)) for g, f in zip(report.gates, report.fidelities)]
    _write(out / "eval_gates.csv", csv_text(("gamma_deg", "theta_deg", "alpha_deg", "fidelity"), rows))
    _write(out / "eval_summary.json", json_text({"summary": report.summary, **report.metadata}))
    _write(out / "eval_hist.csv", csv_text(("bin_lo", "bin_hi", "count"), histogram_rows(report.fidelities, args.bins)))
    s = report.summary
    print(f"mean {s['mean']:.6f} median {s['median']:.6f} min {s['min']:.6f} max {s['max']:.6f} over {s['count']} gates")
    return EXIT_OK


def cmd_sweep(args) -> int:
    paths = parse_models(args.models)
    channels = args.channel or list(CHANNELS)
    for ch in channels:
        check_channel(ch)
    if args.grid and len(channels) != 1:
        raise ConfigError("--grid applies to a single --channel")
    grids = {ch: parse_grid(args.grid) if args.grid else parse_grid("{}:{}:{}".format(*DEFAULT_GRIDS[ch])) for ch in channels}

    models, cfg = {}, None
    for name, path in paths.items():
        params, mcfg, _ = load_model(path)
        if cfg is None:
            cfg = mcfg
        elif (mcfg.t_slices, mcfg.amplitude, mcfg.dt, mcfg.system) != (cfg.t_slices, cfg.amplitude, cfg.dt, cfg.system):
            raise ConfigError(f"model {name!r} was trained for a different system or pulse format")
        models[name] = params
    cfg = pl.with_overrides(cfg, workers=args.workers)
    system = cfg.system.scaled(coupling_model=args.coupling) if args.coupling else None
    rows, summary = pl.sweep_study(models, channels, grids, cfg, args.gates, args.seed, args.repeats, system)

    out = Path(args.out)
    names = list(models)
    for ch in channels:
        table = []
        for value in grids[ch]:
            means = [r["mean"] for n in names for r in rows if r["model"] == n and r["channel"] == ch and r["value"] == value]
            table.append((value, *means))
        _write(out / f"sweep_{ch}.csv", csv_text(("value", *names), table))
    stats = ("mean", "median", "min", "max", "count")
    _write(
        out / "sweep_rows.csv",
        csv_text(("model", "channel", "value", *stats), [(r["model"], r["channel"], r["value"], *(r[k] for k in stats)) for r in rows]),
    )
    _write(
        out / "sweep_summary.csv",
        csv_text(("model", "channel", *stats), [(r["model"], r["channel"], *(r[k] for k in stats)) for r in summary]),
    )
    for r in summary:
        print(f"{r['model']:>12} {r['channel']:>12} mean {r['mean']:.4f} min {r['min']:.4f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    doc = _read_json(args.path)
    if "phases_rad" in doc:
        info = {k: doc.get(k) for k in ("schema_version", "gate", "t_slices", "dt_ms", "amplitude_khz", "nominal_fidelity", "model_hash", "seed")}
        info["kind"] = "pulse"
    else:
        params, _, _ = load_model(args.path)
        meta = doc.get("meta", {})
        opt = doc.get("optimizer_state") or {}
        info = {
            "kind": "checkpoint",
            "schema_version": doc.get("schema_version"),
            "layer_dims": list(params.layer_dims),
            "model_hash": params.digest()[:16],
            "seed": doc.get("seed"),
            "optimizer_step": opt.get("step"),
            "stage": meta.get("stage"),
            "config_hash": meta.get("config_hash"),
            "best_validation": meta.get("best_validation"),
            "final_loss": meta.get("final_loss"),
        }
    sys.stdout.write(json_text(info))
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pulsecompile", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)
    default_workers = os.cpu_count() or 1

    p = sub.add_parser("train", help="train a compiler network")
    p.add_argument("--config", help="run config JSON (blocks: system, network, robust, noise)")
    p.add_argument("--stage", choices=("nominal", "robust"), default="nominal")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--init", help="starting checkpoint (required for --stage robust)")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--workers", type=int, default=default_workers)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compile", help="emit the pulse for one gate (angles in degrees)")
    p.add_argument("gamma", type=float)
    p.add_argument("theta", type=float)
    p.add_argument("alpha", type=float)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("eval", help="fidelity over a regular angle mesh")
    p.add_argument("--model", required=True)
    p.add_argument("--mesh-deg", type=float, default=9.0)
    p.add_argument("--degmax", type=float, default=90.0)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--out", default=".")
    p.add_argument("--workers", type=int, default=default_workers)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="single-channel perturbation sweeps")
    p.add_argument("--models", required=True, help="comma-separated name=checkpoint pairs")
    p.add_argument("--channel", action="append", help=f"one of {', '.join(CHANNELS)}; repeatable (default: all)")
    p.add_argument("--grid", help="start:stop:count, inclusive (degrees for phase channels)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--gates", type=int, default=128, help="size of the random gate set")
    p.add_argument("--repeats", type=int, default=16, help="draws per gate for jitter channels")
    p.add_argument("--coupling", choices=("heisenberg", "zz"), help="drift model for the sweep (default: the model's own)")
    p.add_argument("--out", default=".")
    p.add_argument("--workers", type=int, default=default_workers)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect", help="print checkpoint or pulse-file metadata")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, UnknownChannel) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
