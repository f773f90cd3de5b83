"""Command-line front end.

    piaid sweep  --config profiles/fig6.yaml --out results/
    piaid cdf    --config fig8 --trials 500
    piaid window --config fig4
    piaid select --matrix costs.txt --alpha 2

``--config`` takes a YAML file or the name of a bundled profile. Outputs are
a CSV (first line ``# schema=...``) and a ``manifest.json`` in ``--out``.
Exit status is 0 on success, 2 for bad configuration or input and 1 for
failures during the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import harness, pia
from .netgen import SystemConfig

log = logging.getLogger("piaid")

WORKERS_ENV = "PIAID_WORKERS"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

_NUM = {"type": "number"}
_INT1 = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "K": _INT1,
                "M": _INT1,
                "N": _INT1,
                "D": _INT1,
                "area_width_m": _NUM,
                "area_height_m": _NUM,
                "gamma": _NUM,
                "sigma_omega_db": _NUM,
            },
        },
        "esn0_grid_db": {"type": "array", "items": _NUM, "minItems": 1},
        "schemes": {
            "type": "array",
            "items": {"enum": list(harness.SCHEMES)},
            "minItems": 1,
            "uniqueItems": True,
        },
        "trials": _INT1,
        "seed": {"type": "integer", "minimum": 0},
        "resample_on_ia_failure": {"type": "boolean"},
        "alpha": {"type": ["integer", "null"], "minimum": 0},
        "per_receiver_esn0": {"type": "boolean"},
        "ia": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": _INT1,
                "restarts": _INT1,
                "max_resamples": {"type": "integer", "minimum": 0},
            },
        },
        "baselines": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"leakage_iters": _INT1, "max_sinr_iters": _INT1},
        },
        "symbols_per_instance": _INT1,
        "batch_size": _INT1,
        "cdf_esn0_db": _NUM,
        "window": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p2_grid_db": {"type": "array", "items": _NUM, "minItems": 2},
                "esn0_db": _NUM,
            },
        },
        "workers": _INT1,
        "out": {"type": "string"},
    },
}


class ConfigError(ValueError):
    pass


def _resolve_config_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    stem = p.stem if p.suffix else name
    bundled = resources.files("piaid") / "profiles" / f"{stem}.yaml"
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"config {name!r} not found (and no bundled profile of that name)")


def load_config(name: str) -> dict:
    """Read and validate a YAML run configuration."""
    path = _resolve_config_path(name)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if doc is None:
        doc = {}
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from exc
    return doc


def build_spec(cfg: dict, seed: int | None = None, trials: int | None = None) -> harness.ExperimentSpec:
    ia_cfg = cfg.get("ia", {})
    base = cfg.get("baselines", {})
    kw = dict(
        system=SystemConfig(**cfg.get("system", {})),
        trials=trials if trials is not None else cfg.get("trials", 1000),
        seed=seed if seed is not None else cfg.get("seed", 0),
    )
    for key in (
        "esn0_grid_db",
        "schemes",
        "resample_on_ia_failure",
        "alpha",
        "per_receiver_esn0",
        "symbols_per_instance",
        "batch_size",
    ):
        if key in cfg:
            kw[key] = cfg[key]
    for src, dst in (("tol", "ia_tol"), ("max_iters", "ia_max_iters"), ("restarts", "ia_restarts"), ("max_resamples", "max_resamples")):
        if src in ia_cfg:
            kw[dst] = ia_cfg[src]
    for key in ("leakage_iters", "max_sinr_iters"):
        if key in base:
            kw[key] = base[key]
    try:
        spec = harness.ExperimentSpec(**kw)
        spec.resolved_alpha()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return spec


def _workers(args, cfg) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from exc
    return cfg.get("workers", 1)


def _outdir(args, cfg) -> Path:
    out = Path(args.out or cfg.get("out", "results"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, writer, *payload) -> None:
    with open(path, "w", newline="") as fh:
        writer(*payload, fh)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    spec = build_spec(cfg, args.seed, args.trials)
    out = _outdir(args, cfg)
    log.info("sweep: %d trials, %d schemes, grid %s", spec.trials, len(spec.schemes), list(spec.esn0_grid_db))
    report = harness.estimate_ser(spec, workers=_workers(args, cfg))
    _write(out / "ser.csv", harness.write_ser_csv, report)
    extra = {"resamples": report.resamples, "ia_failures": report.ia_failures, "sdp_unconverged": report.sdp_unconverged}
    (out / "manifest.json").write_text(harness.manifest("sweep", spec.to_dict(), {"csv": "ser.csv"}, extra))
    print(out / "ser.csv")
    return EXIT_OK


def cmd_cdf(args) -> int:
    cfg = load_config(args.config)
    spec = build_spec(cfg, args.seed, args.trials)
    out = _outdir(args, cfg)
    esn0 = float(cfg.get("cdf_esn0_db", 25.0))
    report = harness.ser_cdf(spec, esn0, workers=_workers(args, cfg))
    _write(out / "cdf.csv", harness.write_cdf_csv, report)
    d = spec.to_dict()
    d["cdf_esn0_db"] = esn0
    (out / "manifest.json").write_text(harness.manifest("cdf", d, {"csv": "cdf.csv"}))
    print(out / "cdf.csv")
    return EXIT_OK


def cmd_window(args) -> int:
    cfg = load_config(args.config)
    win = cfg.get("window", {})
    trials = args.trials if args.trials is not None else cfg.get("trials", 100_000)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    esn0 = float(win.get("esn0_db", 40.0))
    out = _outdir(args, cfg)
    p2, ser = harness.interference_window_curve(win.get("p2_grid_db"), trials, esn0, seed)
    _write(out / "window.csv", harness.write_window_csv, p2, ser)
    d = {"p2_grid_db": p2.tolist(), "trials": trials, "seed": seed, "esn0_db": esn0}
    (out / "manifest.json").write_text(harness.manifest("window", d, {"csv": "window.csv"}))
    print(out / "window.csv")
    return EXIT_OK


def _load_matrix(path: str):
    """Cost matrix and optional alpha from YAML/JSON (``costs``/``alpha``) or plain text."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"matrix file {path!r} not found")
    if p.suffix.lower() in (".yaml", ".yml", ".json"):
        doc = yaml.safe_load(p.read_text())
        if isinstance(doc, dict):
            if "costs" not in doc:
                raise ConfigError(f"{path}: expected a 'costs' entry")
            return np.asarray(doc["costs"], dtype=float), doc.get("alpha")
        return np.asarray(doc, dtype=float), None
    try:
        return np.loadtxt(p, ndmin=2, delimiter="," if p.suffix.lower() == ".csv" else None), None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def cmd_select(args) -> int:
    c, alpha = _load_matrix(args.matrix)
    if args.alpha is not None:
        alpha = args.alpha
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ConfigError(f"cost matrix must be square, got shape {c.shape}")
    K = c.shape[0]
    if alpha is None:
        raise ConfigError("alpha is required (--alpha or 'alpha' in the matrix file)")
    try:
        costs = pia.cost_matrix_from_array(c)
        sel = pia.select_pia_set(costs, int(alpha))
    except pia.InfeasibleDegree as exc:
        raise ConfigError(str(exc)) from exc
    doc = {
        "K": K,
        "alpha": int(alpha),
        # 1-based, matching the usual A_k / [r_k, t_i] notation
        "A": {str(k + 1): [i + 1 for i in row] for k, row in enumerate(sel.A)},
        "edges": [[k + 1, i + 1] for k, i in sel.edges()],
        "objective": pia.objective(costs, sel),
    }
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="piaid", description="PIA + interference detection simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="YAML config file or bundled profile name")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--trials", type=int, help="override the number of trials")
        p.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
        p.add_argument("--out", help="output directory")

    common(sub.add_parser("sweep", help="SER versus Es/N0 for each scheme"))
    common(sub.add_parser("cdf", help="per-stream SER samples at one Es/N0"))
    common(sub.add_parser("window", help="SER versus interference power, single interferer"))
    sel = sub.add_parser("select", help="optimal PIA set for a cost matrix, as JSON")
    sel.add_argument("--matrix", required=True, help="K x K cost matrix (text, CSV, YAML or JSON)")
    sel.add_argument("--alpha", type=int, help="aligned interferers per receiver")
    return parser


_COMMANDS = {"sweep": cmd_sweep, "cdf": cmd_cdf, "window": cmd_window, "select": cmd_select}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    for flag in ("trials", "workers"):
        v = getattr(args, flag, None)
        if v is not None and v < 1:
            print(f"piaid: error: --{flag} must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"piaid: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure during the run
        log.debug("run failed", exc_info=True)
        print(f"piaid: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
