"""Command-line interface: ``ratchet simulate | analyze | recipe | fit``.

Configuration can come from an INI file with ``[experiment]``, ``[params]``
and ``[analysis]`` sections; command-line flags override file values.
The exit status is 0 only if every requested run succeeded.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .fitting import get_model, init_power_law, init_tanh_onset, linear_fit, nonlinear_fit
from .io import dumps_json, read_trajectory_csv, write_json
from .meanfield import RatchetParams
from .pipeline import (
    FULL_RUNTIME,
    RECIPE_NAMES,
    ConfigError,
    ExperimentConfig,
    estimate_d2,
    recipe,
    run_experiment,
)
from .zeroone import zero_one_test

PARAM_KEYS = {
    "hop_J": float, "drive_plus_E": float, "drive_minus_E": float, "drive_freq_omega": float,
    "sites_L": int, "hbar": float,
}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    out = []
    for tok in text.replace(",", " ").split():
        if ":" in tok:  # start:stop:step, inclusive stop
            a, b, *s = (int(v) for v in tok.split(":"))
            out.extend(range(a, b + 1, s[0] if s else 1))
        else:
            out.append(int(tok))
    return out


def _words(text: str) -> list[str]:
    return [w for w in text.replace(",", " ").split() if w]


def load_config(path: str | None) -> dict:
    """Flatten an INI file into keyword arguments for :class:`ExperimentConfig`."""
    if path is None:
        return {}
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(path):
        raise ConfigError("config", f"cannot read {path}")
    kw: dict = {}
    exp = cp["experiment"] if cp.has_section("experiment") else {}
    conv = {
        "model": _words, "g_values": _floats, "N_values": _ints, "duration": float,
        "observables": _words, "analysis": _words, "output_dir": str, "name": str,
        "n_samples": int, "dt_out": float,
    }
    for key, value in exp.items():
        if key not in conv:
            raise ConfigError(key, "unknown key in [experiment]")
        try:
            kw[key] = conv[key](value)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    if cp.has_section("analysis"):
        for key, value in cp["analysis"].items():
            if key in ("pair_budget", "seed"):
                kw[key] = int(float(value))
            elif key.startswith("corrdim_samples."):
                kw.setdefault("corrdim_samples", {})[key.split(".", 1)[1]] = int(float(value))
            else:
                raise ConfigError(key, "unknown key in [analysis]")
    if cp.has_section("params"):
        pk = {}
        for key, value in cp["params"].items():
            if key not in PARAM_KEYS:
                raise ConfigError(key, "unknown key in [params]")
            pk[key] = PARAM_KEYS[key](value)
        kw["params"] = RatchetParams(**pk)
    return kw


def _apply_overrides(kw: dict, args) -> dict:
    pairs = {
        "model": args.model and _words(args.model),
        "g_values": args.g and _floats(args.g),
        "N_values": args.N and _ints(args.N),
        "duration": args.duration,
        "observables": args.observables and _words(args.observables),
        "analysis": args.analysis and _words(args.analysis),
        "output_dir": args.output_dir,
        "n_samples": args.n_samples,
        "pair_budget": args.pair_budget,
        "seed": args.seed,
    }
    for k, v in pairs.items():
        if v is not None and v != []:
            kw[k] = v
    return kw


def _report(manifest) -> int:
    for r in manifest.runs:
        tag = "cached" if r.get("cached") else r["status"]
        line = f"{r['run']:<28} {tag:<7} {r.get('wall_time', 0):8.2f}s"
        if r["status"] != "ok":
            line += f"  {r.get('error', '')}"
        print(line)
    print(f"manifest: {manifest.path}")
    if manifest.failed:
        print(f"{len(manifest.failed)} run(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_simulate(args) -> int:
    kw = _apply_overrides(load_config(args.config), args)
    if "model" not in kw:
        raise ConfigError("model", "no model given (use --model or the config file)")
    cfg = ExperimentConfig(**kw).validate()
    return _report(run_experiment(cfg, args.workers))


def cmd_recipe(args) -> int:
    cfg = recipe(args.name, full=args.full, output_dir=args.output_dir or "output")
    overrides = _apply_overrides(load_config(args.config), args)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    cfg.__post_init__()
    cfg.validate()
    if args.dry_run:
        print(dumps_json(cfg.to_dict()), end="")
        if args.full:
            print(f"expected runtime: {FULL_RUNTIME[args.name]}")
        return 0
    return _report(run_experiment(cfg, args.workers))


def cmd_analyze(args) -> int:
    series = read_trajectory_csv(args.csv)
    columns = _words(args.column) if args.column else list(series)
    out: dict = {}
    for name in columns:
        if name not in series:
            raise ConfigError("column", f"{name!r} not in {args.csv}")
        s = series[name]
        res: dict = {}
        if args.zero_one:
            fs = s.sample_freq
            r = zero_one_test(s, fs, args.f_max, args.n_c)
            res["zero_one"] = r.to_dict()
        if args.corrdim:
            est, _ = estimate_d2(s, max_pairs=args.pair_budget, seed=args.seed)
            res["corrdim"] = est.to_dict()
        out[name] = res
    text = dumps_json(out)
    if args.out:
        write_json(args.out, out)
    else:
        print(text, end="")
    return 0


def cmd_fit(args) -> int:
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        x = np.array([float(r[args.x]) for r in rows])
        y = np.array([float(r[args.y]) for r in rows])
    except KeyError as exc:
        raise ConfigError("column", f"missing column {exc} in {args.csv}") from None
    if args.model == "linear":
        res = linear_fit(x, y)
    else:
        model = get_model(args.model)
        if args.init:
            init = _floats(args.init)
        elif args.model == "tanh_onset":
            init = init_tanh_onset(x, y)
        elif args.model == "shifted_power":
            a, d, _ = init_power_law(x, y)
            init = [a, 0.0, d]
        else:
            init = init_power_law(x, y)
        res = nonlinear_fit(model, x, y, init, max_iter=args.max_iter)
    d = res.to_dict()
    if args.out:
        write_json(args.out, d)
    print(dumps_json(d), end="")
    return 0 if res.converged else 1


def _sweep_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [experiment], [params], [analysis] sections")
    p.add_argument("--model", help="dnls, gp3, ls3 (comma separated)")
    p.add_argument("--g", help="interaction strengths, comma separated")
    p.add_argument("--N", help="particle numbers, e.g. '2:40:2' or '6,12,18'")
    p.add_argument("--duration", type=float, help="duration in Rabi periods")
    p.add_argument("--observables", help="current, density3, depletion, fidelity")
    p.add_argument("--analysis", help="zero_one, corrdim, fits")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--pair-budget", dest="pair_budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker processes (default: $RATCHET_WORKERS or 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ratchet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a configured sweep")
    _sweep_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("recipe", help="reproduce one figure or table")
    p.add_argument("name", choices=RECIPE_NAMES)
    p.add_argument("--full", action="store_true", help="full protocol instead of desk scale")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    _sweep_flags(p)
    p.set_defaults(func=cmd_recipe)

    p = sub.add_parser("analyze", help="0-1 test / correlation dimension of a trajectory CSV")
    p.add_argument("csv")
    p.add_argument("--column", help="columns to analyse (default: all)")
    p.add_argument("--zero-one", action="store_true")
    p.add_argument("--corrdim", action="store_true")
    p.add_argument("--f-max", dest="f_max", type=float, help="upper frequency for c (default: full range)")
    p.add_argument("--n-c", dest="n_c", type=int, default=100)
    p.add_argument("--pair-budget", dest="pair_budget", type=int, default=500_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fit", help="fit a scaling model to two CSV columns")
    p.add_argument("model", choices=("linear", "tanh_onset", "power_offset", "shifted_power"))
    p.add_argument("csv")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--init", help="initial parameters, comma separated")
    p.add_argument("--max-iter", dest="max_iter", type=int, default=500)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
