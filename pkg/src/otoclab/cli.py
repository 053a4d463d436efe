"""Command line driver: ``otoclab run|validate|fit|report``.

Data goes to disk only; progress and diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__, kernels
from .analysis import NoDissipationError, SingularFitError, bound_report, fit_ensembles
from .correlators import FixedModel, RealizationError, default_times, ensemble_run
from .hamiltonians import RydbergCouplingSpec, TfskParams, rydberg_couplings
from .io import (
    dumps_json,
    ensemble_filename,
    read_ensemble,
    read_fit,
    write_bound_report,
    write_ensemble,
    write_fit,
)
from .protocol import MAX_SITES_PER_COPY
from .spinspace import max_dim

THREADS_ENV = "OTOCLAB_THREADS"
OBSERVABLES = {
    "R": ("R",),
    "C": ("C",),
    "F": ("F",),
    "F2": ("F2", "F2_normalized"),
    "C2": ("C2", "C2_normalized"),
    "protocol": ("F2_protocol",),
}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REALIZATION = 3
EXIT_FIT = 4


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# config


def load_config(path):
    raw = yaml.safe_load(Path(path).read_text())
    if isinstance(raw, dict) and "config" in raw and "config_sha256" in raw:
        raw = raw["config"]  # a run manifest: replay its embedded config
    return raw


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _as_float(x):
    if _is_num(x):
        return float(x)
    if isinstance(x, str):
        try:
            return float(x)
        except ValueError:
            return None
    return None


def validate_config(raw):
    """Normalize a parsed config, raising ConfigError with field paths."""
    errs = []
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: config must be a mapping"])
    known = {"model", "betas", "time_grid", "n_realizations", "base_seed", "observables",
             "probes", "fit", "output_dir"}
    errs += [f"{k}: unknown field" for k in raw if k not in known]

    model = raw.get("model")
    cfg_model = {}
    n = None
    if not isinstance(model, dict):
        errs.append("model: required mapping")
    else:
        gamma = model.get("gamma", 1.35)
        if not _is_num(gamma):
            errs.append("model.gamma: must be a number")
        if "rydberg" in model:
            ryd = model["rydberg"]
            if not isinstance(ryd, dict):
                errs.append("model.rydberg: must be a mapping")
            else:
                pos = ryd.get("positions")
                if not isinstance(pos, list) or not pos or not all(_is_num(r) for r in pos):
                    errs.append("model.rydberg.positions: non-empty list of numbers required")
                elif len(set(pos)) != len(pos):
                    errs.append("model.rydberg.positions: positions must be distinct")
                else:
                    n = len(pos)
                if not _is_num(ryd.get("c6_eff")):
                    errs.append("model.rydberg.c6_eff: number required")
                if not _is_num(ryd.get("blockade_radius")) or ryd.get("blockade_radius", 0) <= 0:
                    errs.append("model.rydberg.blockade_radius: positive number required")
                cfg_model = {"rydberg": {"positions": [float(r) for r in pos or []],
                                         "c6_eff": ryd.get("c6_eff"),
                                         "blockade_radius": ryd.get("blockade_radius")},
                             "gamma": gamma}
            if "n" in model and n is not None and model["n"] != n:
                errs.append("model.n: must equal the number of Rydberg positions")
        else:
            n = model.get("n")
            j_scale = model.get("j_scale", 1.0)
            if not _is_int(n) or n < 2:
                errs.append("model.n: integer >= 2 required")
                n = None
            if not _is_num(j_scale) or j_scale < 0:
                errs.append("model.j_scale: non-negative number required")
            cfg_model = {"n": n, "j_scale": j_scale, "gamma": gamma}
        if n is not None and (1 << n) > max_dim():
            errs.append(f"model.n: 2^{n} exceeds the operator dimension cap {max_dim()}")

    betas = raw.get("betas")
    if not isinstance(betas, list) or not betas:
        errs.append("betas: non-empty list required")
        betas = []
    else:
        for i, b in enumerate(betas):
            if not _is_num(b) or b < 0:
                errs.append(f"betas[{i}]: finite number >= 0 required")
        if len(set(betas)) != len(betas):
            errs.append("betas: duplicate values")

    grid = raw.get("time_grid", {})
    cfg_grid = {}
    if not isinstance(grid, dict):
        errs.append("time_grid: must be a mapping")
    else:
        cfg_grid = {"kind": grid.get("kind", "log"), "t_min": grid.get("t_min", 0.05),
                    "t_max": grid.get("t_max", 100.0), "points": grid.get("points", 200),
                    "include_zero": grid.get("include_zero", True)}
        if cfg_grid["kind"] not in ("log", "linear"):
            errs.append("time_grid.kind: 'log' or 'linear'")
        if not _is_num(cfg_grid["t_min"]) or cfg_grid["t_min"] < 0:
            errs.append("time_grid.t_min: number >= 0 required")
        elif cfg_grid["kind"] == "log" and cfg_grid["t_min"] <= 0:
            errs.append("time_grid.t_min: must be > 0 for a log grid")
        if not _is_num(cfg_grid["t_max"]) or (
                _is_num(cfg_grid["t_min"]) and cfg_grid["t_max"] <= cfg_grid["t_min"]):
            errs.append("time_grid.t_max: number > t_min required")
        if not _is_int(cfg_grid["points"]) or cfg_grid["points"] < 1:
            errs.append("time_grid.points: positive integer required")
        if not isinstance(cfg_grid["include_zero"], bool):
            errs.append("time_grid.include_zero: boolean required")

    n_real = raw.get("n_realizations", 1)
    if not _is_int(n_real) or n_real < 1:
        errs.append("n_realizations: positive integer required")
    seed = raw.get("base_seed", 0)
    if not _is_int(seed) or seed < 0:
        errs.append("base_seed: non-negative integer required")

    obs = raw.get("observables", ["C"])
    if not isinstance(obs, list) or not obs:
        errs.append("observables: non-empty list required")
        obs = []
    for i, o in enumerate(obs):
        if o not in OBSERVABLES:
            errs.append(f"observables[{i}]: unknown observable {o!r}; choose from {sorted(OBSERVABLES)}")
    if "protocol" in obs and n is not None and n > MAX_SITES_PER_COPY:
        errs.append(f"observables: protocol needs model.n <= {MAX_SITES_PER_COPY}, got {n}")

    probes = raw.get("probes", {}) or {}
    cfg_probes = {}
    if not isinstance(probes, dict):
        errs.append("probes: must be a mapping")
    else:
        w_site = probes.get("w_site", 1)
        v_site = probes.get("v_site", n)
        r_site = probes.get("r_site", w_site)
        for name, site in (("w_site", w_site), ("v_site", v_site), ("r_site", r_site)):
            if n is not None and (not _is_int(site) or not 1 <= site <= n):
                errs.append(f"probes.{name}: integer site in 1..{n} required")
        if w_site == v_site:
            errs.append("probes: w_site and v_site must differ")
        cfg_probes = {"w_site": w_site, "v_site": v_site, "r_site": r_site}

    fit = raw.get("fit", {}) or {}
    cfg_fit = {}
    if not isinstance(fit, dict):
        errs.append("fit: must be a mapping")
    else:
        cfg_fit = {"enabled": fit.get("enabled", False), "threshold": fit.get("threshold", 0.05),
                   "plateau_fraction": fit.get("plateau_fraction", 0.9),
                   "weighted": fit.get("weighted", True), "windows": {}}
        if not isinstance(cfg_fit["enabled"], bool):
            errs.append("fit.enabled: boolean required")
        if not isinstance(cfg_fit["weighted"], bool):
            errs.append("fit.weighted: boolean required")
        if not _is_num(cfg_fit["threshold"]) or not 0 < cfg_fit["threshold"] < 1:
            errs.append("fit.threshold: number in (0, 1) required")
        if not _is_num(cfg_fit["plateau_fraction"]) or not 0 < cfg_fit["plateau_fraction"] <= 1:
            errs.append("fit.plateau_fraction: number in (0, 1] required")
        windows = fit.get("windows") or {}
        if not isinstance(windows, dict):
            errs.append("fit.windows: mapping beta -> [t_lo, t_hi] required")
        else:
            for key, win in windows.items():
                b = _as_float(key)  # a replayed manifest carries these keys as JSON strings
                if b is None or b not in betas:
                    errs.append(f"fit.windows.{key}: key must be one of betas")
                elif (not isinstance(win, list) or len(win) != 2 or not all(_is_num(x) for x in win)
                      or win[0] >= win[1]):
                    errs.append(f"fit.windows.{b}: [t_lo, t_hi] with t_lo < t_hi required")
                else:
                    cfg_fit["windows"][float(b)] = [float(win[0]), float(win[1])]
        if cfg_fit["enabled"] is True:
            if "C" not in obs:
                errs.append("fit.enabled: requires 'C' in observables")
            if any(_is_num(b) and b <= 0 for b in betas):
                errs.append("fit.enabled: every beta must be > 0 for the bound comparison")

    out_dir = raw.get("output_dir", "otoclab-out")
    if not isinstance(out_dir, str) or not out_dir:
        errs.append("output_dir: non-empty string required")

    if errs:
        raise ConfigError(errs)
    return {
        "model": cfg_model,
        "betas": [float(b) for b in betas],
        "time_grid": cfg_grid,
        "n_realizations": n_real,
        "base_seed": seed,
        "observables": list(obs),
        "probes": cfg_probes,
        "fit": cfg_fit,
        "output_dir": out_dir,
    }


def config_hash(cfg):
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _model(cfg):
    m = cfg["model"]
    if "rydberg" in m:
        r = m["rydberg"]
        spec = RydbergCouplingSpec(tuple(r["positions"]), r["c6_eff"], r["blockade_radius"])
        return FixedModel(rydberg_couplings(spec), m["gamma"])
    return TfskParams(n=m["n"], j_scale=m["j_scale"], gamma=m["gamma"])


def _times(cfg):
    g = cfg["time_grid"]
    return default_times(points=g["points"], t_min=g["t_min"], t_max=g["t_max"], kind=g["kind"],
                         include_zero=g["include_zero"])


def _kinds(cfg):
    kinds = []
    for o in cfg["observables"]:
        kinds += [k for k in OBSERVABLES[o] if k not in kinds]
    fit = cfg["fit"]
    if fit["enabled"] and "R" not in kinds and set(cfg["betas"]) - set(fit["windows"]):
        kinds.append("R")  # default fit windows start at the dissipation time
    return kinds


# ---------------------------------------------------------------------------
# command implementations


def _eprint(quiet, *args):
    if not quiet:
        print(*args, file=sys.stderr, flush=True)


def _progress_printer(quiet):
    def show(done, total, elapsed):
        if quiet:
            return
        eta = elapsed / done * (total - done)
        print(f"\rrealizations {done}/{total}  elapsed {elapsed:7.1f}s  eta {eta:7.1f}s",
              end="\n" if done == total else "", file=sys.stderr, flush=True)
    return show


def _versions():
    import scipy
    out = {"otoclab": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__, "kernel_backend": kernels.BACKEND}
    if kernels.numba is not None:
        out["numba"] = kernels.numba.__version__
    return out


def _fit_and_report(c_curves, r_curves, fit_cfg, out_dir):
    fit = fit_ensembles(c_curves, r_curves, threshold=fit_cfg["threshold"],
                        plateau_fraction=fit_cfg["plateau_fraction"],
                        windows=fit_cfg["windows"], weighted=fit_cfg["weighted"])
    write_fit(fit, out_dir / "fit.json")
    outputs = ["fit.json"]
    if fit.converged:
        write_bound_report(bound_report(fit), out_dir)
        outputs += ["bound_report.json", "bound.csv"]
    return fit, outputs


def cmd_run(args):
    start = time.perf_counter()
    try:
        cfg = validate_config(load_config(args.config))
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg["base_seed"] = args.seed
    if args.output_dir is not None:
        cfg["output_dir"] = args.output_dir
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    model, times, kinds = _model(cfg), _times(cfg), _kinds(cfg)
    seeds = [cfg["base_seed"], cfg["base_seed"] + cfg["n_realizations"] - 1]
    manifest = {
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seeds": seeds,
        "kinds": kinds,
        "versions": _versions(),
        "threads": args.threads,
        "units": {"time": "1/J", "temperature": "J", "hbar": 1, "k_B": 1},
    }
    _eprint(args.quiet, f"otoclab: {len(kinds)} kinds x {len(cfg['betas'])} betas, "
                        f"{cfg['n_realizations']} realizations, {len(times)} times")
    try:
        results = ensemble_run(model, kinds, cfg["betas"], times, cfg["n_realizations"],
                               cfg["base_seed"], threads=args.threads,
                               progress=_progress_printer(args.quiet), **cfg["probes"])
    except RealizationError as exc:
        manifest["failure"] = {"failed_seed": exc.seed, "error": repr(exc.cause)}
        (out_dir / "failure.json").write_text(dumps_json(manifest["failure"]))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REALIZATION

    outputs = []
    for (kind, beta), res in results.items():
        name = ensemble_filename(kind, beta)
        write_ensemble(res, out_dir / name)
        outputs.append(name)

    status = EXIT_OK
    if cfg["fit"]["enabled"]:
        c_curves = {b: results[("C", b)] for b in cfg["betas"]}
        r_curves = {b: results[("R", b)] for b in cfg["betas"] if ("R", b) in results}
        try:
            fit, fit_outputs = _fit_and_report(c_curves, r_curves, cfg["fit"], out_dir)
            outputs += fit_outputs
            manifest["fit_converged"] = fit.converged
            if not fit.converged:
                _eprint(args.quiet, f"warning: fit did not converge ({fit.message})")
        except (NoDissipationError, SingularFitError, ValueError) as exc:
            manifest["fit_error"] = str(exc)
            print(f"error: fit failed: {exc}", file=sys.stderr)
            status = EXIT_FIT

    manifest["outputs"] = sorted(outputs)
    manifest["wall_time_s"] = time.perf_counter() - start
    (out_dir / "manifest.json").write_text(dumps_json(manifest))
    _eprint(args.quiet, f"wrote {len(outputs)} files to {out_dir}")
    return status


def cmd_validate(args):
    try:
        validate_config(load_config(args.config))
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _eprint(args.quiet, f"{args.config}: ok")
    return EXIT_OK


def _parse_windows(items):
    out = {}
    for item in items or []:
        try:
            beta, span = item.split("=")
            lo, hi = span.split(":")
            out[float(beta)] = (float(lo), float(hi))
        except ValueError:
            raise SystemExit(f"bad --windows entry {item!r}; expected beta=t_lo:t_hi")
    return out


def cmd_fit(args):
    c_curves, r_curves = {}, {}
    for path in map(Path, args.csv):
        res = read_ensemble(path)
        if res.kind == "C":
            c_curves[res.beta] = res
        elif res.kind == "R":
            r_curves[res.beta] = res
    if not c_curves:
        print("error: no C curves among the inputs", file=sys.stderr)
        return EXIT_CONFIG
    windows = _parse_windows(args.windows)
    first_dir = Path(args.csv[0]).parent
    for beta in c_curves:
        sibling = first_dir / ensemble_filename("R", beta)
        if beta not in r_curves and beta not in windows and sibling.exists():
            r_curves[beta] = read_ensemble(sibling)
    missing = [b for b in c_curves if b not in r_curves and b not in windows]
    if missing:
        print(f"error: no R curve or --windows entry for beta={missing}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.output_dir) if args.output_dir else first_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    fit_cfg = {"threshold": args.threshold, "plateau_fraction": args.plateau_fraction,
               "windows": windows, "weighted": not args.unweighted}
    try:
        fit, outputs = _fit_and_report(c_curves, r_curves, fit_cfg, out_dir)
    except (NoDissipationError, SingularFitError, ValueError) as exc:
        print(f"error: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    _eprint(args.quiet, f"fit converged={fit.converged}; wrote {', '.join(outputs)} to {out_dir}")
    return EXIT_OK


def cmd_report(args):
    fit = read_fit(args.fit_json)
    try:
        report = bound_report(fit)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    out_dir = Path(args.output_dir) if args.output_dir else Path(args.fit_json).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    write_bound_report(report, out_dir)
    _eprint(args.quiet, f"{'T':>8} {'lambda':>10} {'bound':>10} {'2*delta*lam/T':>14}")
    for r in report.rows:
        flag = "  > bound" if r.exceeds_bound else ""
        _eprint(args.quiet, f"{r.temperature:8.4f} {r.lam:10.5f} {r.bound:10.5f} {r.ratio:14.4f}{flag}")
    return EXIT_OK


def _default_threads():
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help=f"worker threads over realizations (default: ${THREADS_ENV} or CPU count)")
    common.add_argument("--output-dir", default=None, help="override the output directory")
    common.add_argument("--seed", type=int, default=None, help="override base_seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress on stderr")

    parser = argparse.ArgumentParser(prog="otoclab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run an experiment config")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", parents=[common], help="check a config without running it")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("fit", parents=[common], help="re-fit C curves from CSV files")
    p.add_argument("csv", nargs="+")
    p.add_argument("--windows", nargs="*", metavar="BETA=LO:HI")
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--plateau-fraction", type=float, default=0.9)
    p.add_argument("--unweighted", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", parents=[common], help="bound table from a fit.json")
    p.add_argument("fit_json")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
