"""Command-line front end.

Subcommands: ``solve``, ``verify``, ``compare``, ``check`` and ``oracle``.
Every flag can also be set through an environment variable named
``CSE_<FLAG>`` (upper case, dashes as underscores, e.g. ``CSE_GRID_POINTS``);
an explicit flag wins over the environment.

Exit codes: 0 success, 1 input error, 2 numerical failure, 3 verification
failure. Diagnostics go to standard error as one JSON object per line.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Optional

from . import __version__
from .bellman import ConvergenceError
from .comparative_statics import mean_preserving_spread, run_spread_experiment
from .config import ConfigFormatError, config_hash, config_to_dict, load_config
from .economy import CES, ConfigError, EconomyConfig, ensure_valid
from .equilibrium import (
    EquilibriumError,
    EquilibriumOptions,
    load_result,
    solve_equilibrium,
    verify_cse,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY = 3

ENV_PREFIX = "CSE_"
MANIFEST = "manifest.json"

# flag name -> (type, default)
FLAGS = {
    "config": (str, None),
    "out": (str, None),
    "equilibrium": (str, None),
    "tol": (float, None),
    "seed": (int, 0),
    "threads": (int, 1),
    "grid_points": (int, None),
    "spreads": (str, "0,0.1,0.2,0.3"),
    "samples": (int, 10),
    "lattice": (int, 200),
}


class InputError(Exception):
    """Bad arguments, unreadable files or an invalid configuration."""


def diag(level: str, event: str, **fields) -> None:
    rec = {"level": level, "event": event, **fields}
    print(json.dumps(rec, default=str), file=sys.stderr, flush=True)


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from ``CSE_*`` variables, then from defaults."""
    for name, (kind, default) in FLAGS.items():
        if getattr(args, name, None) is not None:
            continue
        raw = os.environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            try:
                setattr(args, name, kind(raw))
            except ValueError as exc:
                raise InputError(f"{ENV_PREFIX}{name.upper()}={raw!r}: {exc}") from exc
        else:
            setattr(args, name, default)
    if args.threads < 1:
        raise InputError("--threads must be at least 1")
    return args


def _load(args, required: bool = True) -> Optional[EconomyConfig]:
    if args.config is None:
        if required:
            raise InputError("no config given (--config or CSE_CONFIG)")
        return None
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise InputError(f"cannot read config {args.config}: {exc.strerror or exc}") from exc
    except ConfigFormatError as exc:
        raise InputError(f"malformed config {args.config}: {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise InputError(f"invalid config {args.config}: {exc}") from exc
    if args.grid_points is not None:
        cfg = replace(cfg, grid_points=args.grid_points)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        ensure_valid(cfg)
    _warn_to_diag(rec)
    return cfg


def _options(args) -> dict:
    keep = ("tol", "seed", "threads", "grid_points", "spreads", "samples", "lattice")
    return {k: getattr(args, k) for k in keep}


def _out_dir(args, fallback: str) -> Path:
    out = Path(args.out or fallback)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _dump(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    return path


def write_manifest(out: Path, args, command: str, files: list, started: float,
                   cfg: Optional[EconomyConfig] = None) -> Path:
    """Record what produced the outputs. Not itself part of the determinism contract."""
    if args.config is not None:
        digest = config_hash(args.config)
    else:
        blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
        digest = hashlib.sha256(blob).hexdigest()
    doc = {
        "config": str(args.config) if args.config else None,
        "config_sha256": digest,
        "version": __version__,
        "subcommand": command,
        "options": _options(args),
        "wall_time_s": time.perf_counter() - started,
        "files": sorted(Path(f).name for f in files),
    }
    return _dump(out / MANIFEST, doc)


_emitted: set = set()


def _warn_to_diag(records) -> None:
    for w in records:
        key = (type(w.message).__name__, str(w.message))
        if key not in _emitted:
            _emitted.add(key)
            diag("warning", key[0], message=key[1])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    started = time.perf_counter()
    cfg = _load(args)
    out = _out_dir(args, "out")
    opts = EquilibriumOptions(tol=args.tol)
    log_path = out / "evaluations.jsonl"
    try:
        with open(log_path, "w") as log, warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            result = solve_equilibrium(cfg, opts, log=log)
        _warn_to_diag(rec)
    except ConfigError as exc:
        for v in exc.violations:
            diag("error", "config_violation", field=v.field, message=v.message)
        return EXIT_INPUT
    except (EquilibriumError, ConvergenceError, RuntimeError) as exc:
        diag("error", "solver_failure", message=str(exc),
             details=getattr(exc, "details", None))
        return EXIT_NUMERICAL
    files = result.save(out) + [log_path]
    write_manifest(out, args, "solve", files, started, cfg)
    pn = result.prices_numeraire
    print(f"r = {result.prices_normalized.r!r}")
    print("p / p_1 = " + ", ".join(repr(float(x)) for x in pn.p))
    print(f"|zeta|_inf = {result.residual:.3e} (tol {result.tol:.1e})")
    return EXIT_OK if result.residual < result.tol else EXIT_NUMERICAL


def _equilibrium_dir(args) -> Path:
    target = args.equilibrium or args.out
    if target is None:
        raise InputError("no equilibrium given (--equilibrium or CSE_EQUILIBRIUM)")
    path = Path(target)
    if path.is_file():
        path = path.parent
    if not (path / "equilibrium.json").is_file():
        raise InputError(f"no equilibrium.json under {path}")
    return path


def cmd_verify(args) -> int:
    cfg = _load(args)
    folder = _equilibrium_dir(args)
    manifest_path = folder / MANIFEST
    if not manifest_path.is_file():
        raise InputError(f"missing manifest {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"unreadable manifest {manifest_path}: {exc}") from exc
    digest = config_hash(args.config)
    if manifest.get("config_sha256") != digest:
        diag("error", "config_hash_mismatch", expected=manifest.get("config_sha256"), got=digest)
        return EXIT_INPUT
    missing = [f for f in manifest.get("files", []) if not (folder / f).is_file()]
    if missing:
        diag("error", "missing_outputs", files=missing,
             message="outputs listed in the manifest are missing; rerun solve")
        return EXIT_INPUT
    try:
        result = load_result(folder, cfg)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot load stored equilibrium: {exc}") from exc
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = verify_cse(result, cfg, tol=args.tol)
    except (ConvergenceError, RuntimeError, ValueError) as exc:
        diag("error", "verification_failure", message=str(exc))
        return EXIT_VERIFY
    print(f"{'condition':<18} {'residual':>12} {'tol':>10}  status")
    for c in report.checks:
        print(f"{c.name:<18} {c.residual:>12.3e} {c.tol:>10.1e}  {'PASS' if c.passed else 'FAIL'}")
        if not c.passed:
            diag("error", "condition_failed", condition=c.name, residual=c.residual, tol=c.tol,
                 note=c.note)
    return EXIT_OK if report.passed else EXIT_VERIFY


def _parse_spreads(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise InputError(f"--spreads must be comma-separated numbers: {exc}") from exc


def cmd_compare(args) -> int:
    started = time.perf_counter()
    cfg = _load(args)
    out = _out_dir(args, "out")
    spreads = _parse_spreads(args.spreads)
    if not spreads:
        raise InputError("no spreads given")
    if any(p.utility.kind != CES for p in cfg.profiles()):
        diag("warning", "outside_hypothesis",
             message="the spread result is established for CES preferences only")
    valid, errors = [], {}
    for s in spreads:
        try:
            mean_preserving_spread(cfg.endowments, s)
            valid.append(s)
        except ValueError as exc:
            errors[s] = str(exc)
            diag("error", "spread_rejected", spread=s, message=str(exc))
    if not valid:
        return EXIT_INPUT
    try:
        report = run_spread_experiment(cfg, valid, options=EquilibriumOptions(tol=args.tol),
                                       threads=args.threads)
    except ConfigError as exc:
        for v in exc.violations:
            diag("error", "config_violation", field=v.field, message=v.message)
        return EXIT_INPUT
    except (EquilibriumError, ConvergenceError, RuntimeError) as exc:
        diag("error", "solver_failure", message=str(exc))
        return EXIT_NUMERICAL

    rows_path = out / "spreads.csv"
    with open(rows_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "r_star"] + [f"p{i + 1}_over_p1" for i in range(1, cfg.n)]
                   + ["icx_holds", "icx_violation", "cx_violation", "endowment_cx_violation",
                      "error"])
        k = 0
        for s in spreads:
            if s in errors:
                w.writerow([repr(s), "", *([""] * (cfg.n - 1)), "", "", "", "", errors[s]])
                continue
            ratios = [repr(float(x)) for x in report.price_ratios[k]]
            if k == 0:
                extra = ["", "", "", ""]
            else:
                icx, cx = report.icx[k - 1], report.cx_at_equilibrium[k - 1]
                extra = [str(icx.holds), repr(icx.max_violation), repr(cx.max_violation),
                         repr(report.endowment_cx[k - 1])]
            w.writerow([repr(s), repr(float(report.r_star[k])), *ratios, *extra, ""])
            k += 1
    doc = report.to_dict()
    doc["rejected"] = {repr(s): msg for s, msg in errors.items()}
    json_path = _dump(out / "comparative_statics.json", doc)
    write_manifest(out, args, "compare", [rows_path, json_path], started, cfg)
    print(f"r*: {', '.join(f'{r:.8f}' for r in report.r_star)}")
    print(f"r nonincreasing: {report.r_nonincreasing}  price ratio constant: "
          f"{report.ratio_constant}  I-CX dominance: {report.icx_holds}")
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_check(args) -> int:
    from .checks import run_battery

    started = time.perf_counter()
    cfg = _load(args)
    try:
        report = run_battery(cfg, samples=args.samples, seed=args.seed, threads=args.threads)
    except (ConvergenceError, RuntimeError) as exc:
        diag("error", "solver_failure", message=str(exc))
        return EXIT_NUMERICAL
    print(report.matrix())
    if args.out:
        out = _out_dir(args, "out")
        path = _dump(out / "check.json", report.to_dict())
        write_manifest(out, args, "check", [path], started, cfg)
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_oracle(args) -> int:
    from .oracle import OracleConfig, oracle_equilibrium, tiny_economy

    started = time.perf_counter()
    cfg = _load(args, required=False)
    if cfg is None:
        cfg = tiny_economy(args.grid_points or 60)
    if cfg.n != 2:
        raise InputError(f"the oracle handles two goods, config has {cfg.n}")
    if cfg.types:
        raise InputError("the oracle does not handle typed populations")
    out = _out_dir(args, "out")
    if args.lattice < 2:
        raise InputError("--lattice must be at least 2")
    lat = oracle_equilibrium(cfg, OracleConfig(price_lattice=args.lattice))
    field_path = out / "oracle_field.csv"
    lat.to_csv(field_path)
    doc = {"ratio": lat.best_ratio, "r": lat.best_r, "residual": lat.best_residual,
           "ratio_cell": lat.ratio_cell, "r_cell": lat.r_cell,
           "ratio_range": [float(lat.ratios[0]), float(lat.ratios[-1])],
           "r_range": [float(lat.rates[0]), float(lat.rates[-1])]}
    json_path = _dump(out / "oracle.json", doc)
    write_manifest(out, args, "oracle", [field_path, json_path], started, cfg)
    print(f"lattice minimizer: p2/p1 = {lat.best_ratio!r}, r = {lat.best_r!r}, "
          f"|zeta|_inf = {lat.best_residual:.3e}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "compare": cmd_compare,
    "check": cmd_check,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="economy configuration (JSON)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--tol", type=float, help="sup-norm tolerance on excess demand")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads (default 1)")
    common.add_argument("--grid-points", dest="grid_points", type=int,
                        help="override the wealth-grid size")

    parser = argparse.ArgumentParser(
        prog="multigood-cse",
        description="Stationary equilibria of multi-good incomplete-market economies.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve for the equilibrium")
    v = sub.add_parser("verify", parents=[common], help="re-derive the equilibrium conditions")
    v.add_argument("--equilibrium", help="equilibrium.json or its directory (default --out)")
    c = sub.add_parser("compare", parents=[common], help="mean-preserving spread experiment")
    c.add_argument("--spreads", help="comma-separated spread sizes (default 0,0.1,0.2,0.3)")
    k = sub.add_parser("check", parents=[common], help="property battery at random prices")
    k.add_argument("--samples", type=int, help="number of price draws (default 10)")
    o = sub.add_parser("oracle", parents=[common], help="brute-force lattice equilibrium")
    o.add_argument("--lattice", type=int, help="points per lattice axis (default 200)")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _emitted.clear()
    try:
        args = _resolve(args)
        return COMMANDS[args.command](args)
    except InputError as exc:
        diag("error", "input", message=str(exc))
        return EXIT_INPUT
    except ConfigError as exc:
        for v in exc.violations:
            diag("error", "config_violation", field=v.field, message=v.message)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
