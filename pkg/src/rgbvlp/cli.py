"""Command-line front end.

Subcommands: ``crlb-distance``, ``crlb-position``, ``mc-distance``,
``mc-position`` and ``validate``.  Each reads one YAML config (defaults when
``--config`` is omitted) and writes a CSV table plus a ``.meta.json`` sidecar
with the resolved configuration and the RNG algorithm.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import kappas
from .config import (
    DISTANCE_ESTIMATOR_NAMES,
    POSITION_ESTIMATOR_NAMES,
    ConfigError,
    build_energies,
    build_leds,
    build_receiver,
    build_waveforms,
    load_config,
    scene_factory,
)
from .geometry import gamma_matrix, gain_matrix, line_of_sight
from .simulator import RNG_ALGORITHM, SweepSpec, crlb_sweep, run_mc_distance, run_mc_position

CRLB_COLUMNS = ("variable", "value", "scenario", "crlb_rmse_m", "flags")
MC_COLUMNS = (
    "variable",
    "value",
    "scenario",
    "estimator",
    "crlb_rmse_m",
    "mc_rmse_m",
    "mc_stderr_m",
    "trials",
    "boundary_hits",
    "error_trials",
    "seed",
)


def _fmt(v):
    if isinstance(v, tuple):
        return ";".join(_fmt(x) for x in v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _row_values(row, columns):
    out = []
    for c in columns:
        v = getattr(row, c)
        out.append(";".join(v) if c == "flags" else _fmt(v))
    return out


def write_csv(rows, columns, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(_row_values(r, columns))


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    return obj


def write_meta(cfg, command, path):
    meta = {"command": command, "rgbvlp_version": __version__, "rng": RNG_ALGORITHM, "config": _jsonable(cfg)}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _resolve(args):
    cfg = load_config(args.config)
    sweep = cfg.sweep
    if args.seed is not None:
        sweep = dataclasses.replace(sweep, seed=args.seed)
    if args.trials is not None:
        sweep = dataclasses.replace(sweep, trials=args.trials)
    cfg = dataclasses.replace(cfg, sweep=sweep, output=str(args.out) if args.out else cfg.output)
    return cfg


def _spec(cfg):
    s = cfg.sweep
    return SweepSpec(s.variable, s.values, s.trials, s.seed)


def cmd_crlb_distance(cfg):
    return crlb_sweep(_spec(cfg), scene_factory(cfg, "distance"), cfg.sweep.scenarios), CRLB_COLUMNS


def cmd_crlb_position(cfg):
    return crlb_sweep(_spec(cfg), scene_factory(cfg, "position"), cfg.sweep.scenarios), CRLB_COLUMNS


def _estimators(cfg, allowed):
    chosen = cfg.sweep.estimators or allowed
    bad = [e for e in chosen if e not in allowed]
    if bad:
        raise ConfigError(f"sweep.estimators: {bad} not available here (choose from {list(allowed)})")
    return chosen


def cmd_mc_distance(cfg):
    est = _estimators(cfg, DISTANCE_ESTIMATOR_NAMES)
    return run_mc_distance(_spec(cfg), scene_factory(cfg, "distance"), est), MC_COLUMNS


def cmd_mc_position(cfg):
    est = _estimators(cfg, POSITION_ESTIMATOR_NAMES)
    return run_mc_position(_spec(cfg), scene_factory(cfg, "position"), est), MC_COLUMNS


def _matrix_text(M, fmt="{: .5e}"):
    return "\n".join("    " + " ".join(fmt.format(v) for v in row) for row in np.atleast_2d(M))


def cmd_validate(cfg, out=None):
    """Print the resolved scene without running anything."""
    out = sys.stdout if out is None else out
    rx = build_receiver(cfg)
    m = cfg.scene.lambertian_order
    print(f"config OK (rgbvlp {__version__})", file=out)
    print(f"sweep: {cfg.sweep.variable} over {len(cfg.sweep.values)} values, trials={cfg.sweep.trials}, seed={cfg.sweep.seed}", file=out)
    print(f"dt = {cfg.dt:.4e} s", file=out)
    print("gamma [PD j, color i] (axial distance model):", file=out)
    print(_matrix_text(gamma_matrix(rx, m, cfg.scene.height)), file=out)
    ws = build_waveforms(cfg, 1)
    ce = build_energies(ws, cfg.waveform.energies)
    print("cross energies of LED 1:", file=out)
    for name, M in (("E", ce.E), ("E'", ce.Ep), ("E''", ce.Epp)):
        print(f"  {name}:", file=out)
        print(_matrix_text(M), file=out)
    k = kappas(gamma_matrix(rx, m, cfg.scene.height), rx.noise_psd, ce)
    print(f"kappa = {k.kappa:.6e}, kappa' = {k.kappa_prime:.6e}, kappa'' = {k.kappa_dprime:.6e}", file=out)
    print("position scene:", file=out)
    for i, led in enumerate(build_leds(cfg)):
        los = bool(line_of_sight(rx.location, rx.orientation, led.location, led.orientation))
        h = gain_matrix(led, rx)
        print(
            f"  LED {i + 1}: at {led.location.tolist()}, n_t = {np.round(led.orientation, 5).tolist()}, "
            f"line of sight: {los}, h_rr = {h[0, 0]:.5e}",
            file=out,
        )
    return 0


COMMANDS = {
    "crlb-distance": cmd_crlb_distance,
    "crlb-position": cmd_crlb_position,
    "mc-distance": cmd_mc_distance,
    "mc-position": cmd_mc_position,
}


def build_parser():
    p = argparse.ArgumentParser(prog="rgbvlp", description="Bounds and ML estimators for RGB-LED visible light positioning.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["validate"]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None, help="YAML config (defaults when omitted)")
        sp.add_argument("--out", type=Path, default=None, help="output CSV path (overrides config 'output')")
        sp.add_argument("--seed", type=int, default=None, help="override sweep.seed")
        sp.add_argument("--trials", type=int, default=None, help="override sweep.trials")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        if args.command == "validate":
            return cmd_validate(cfg)
        rows, columns = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    write_csv(rows, columns, cfg.output)
    write_meta(cfg, args.command, cfg.output)
    print(f"wrote {len(rows)} rows to {cfg.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
