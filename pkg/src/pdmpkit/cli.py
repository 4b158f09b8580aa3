"""Batch runner: ``pdmpkit <command> [--config run.json] [--key value ...]``.

Settings resolve as defaults < config file < command-line flags.  Each run
writes ``<outdir>/<run-id>/`` holding ``config.json`` (fully resolved),
``manifest.json`` and the command's artifacts.  The run id is the command
name plus a hash of the resolved settings, so equal settings land in the
same directory and produce byte-identical artifacts.

Exit codes: 0 success, 2 configuration error, 3 model-domain error,
4 explosion abort.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import replace

import numpy as np

from . import density, drift, rankcheck, simulate
from ._fast import BACKEND
from .core import ExplosionError, PdmpError
from .grid import GridSpec
from .models import GeneExpressionParams, build_model, model_names, param_names

__version__ = "0.1.0"

EXIT_OK, EXIT_CONFIG, EXIT_DOMAIN, EXIT_EXPLOSION = 0, 2, 3, 4


class ConfigError(Exception):
    pass


COMMON = {"model": "gene", "params": {}, "seed": 0, "outdir": "runs", "x0": None,
          "rtol": None, "atol": None, "workers": 1}

COMMANDS = {
    "simulate": {"horizon": 100.0, "max_jumps": 10**6, "method": "inversion", "paths": 10},
    "estimate-chain": {"N": 10**5, "burn_in": None, "paths": 1, "grid": None},
    "estimate-flow": {"horizon": 10**4, "burn_in": 0.0, "dt": None, "paths": 1, "grid": None},
    "stationarity": {"N": 10**5, "burn_in": None, "grid": None, "samples": None},
    "stability": {"starts": None, "times": [5.0, 50.0], "paths": 10**4, "grid": None,
                  "max_jumps": 10**6},
    "drift": {"R": 20.0, "lyapunov": None, "r_min": 0.05, "r_max": 200.0, "shells": 30,
              "directions": 16, "occupation_steps": 10**4, "occupation_paths": 4},
    "rank": {"n": 2, "budget": 64, "tau_rank": rankcheck.TAU_RANK, "mode": "theta-and-s",
             "t": None},
    "r0v": {"N": 10**5, "burn_in": None, "grid": None, "M": 10**4},
}

DEFAULT_X0 = {"gene": [1.0, 1.0], "birth-death": [0.5, 0.0], "two-mode": [0.0, 0.0, 1.0],
              "kato": [1.0], "pure-death": [1.0], "heavy-tail": [0.0]}

DEFAULT_GRIDS = {
    "gene": {"lower": [0, 0], "upper": [8, 3], "bins": [20, 20]},
    "birth-death": {"lower": [0, 0], "upper": [1, 12], "bins": [10, 1], "discrete": [1]},
    "two-mode": {"lower": [-10, -10, 1], "upper": [10, 10, 2], "bins": [20, 20, 1],
                 "discrete": [2]},
    "kato": {"lower": [0], "upper": [60], "bins": [1], "discrete": [0]},
    "pure-death": {"lower": [0], "upper": [12], "bins": [48]},
    "heavy-tail": {"lower": [0], "upper": [50], "bins": [50]},
}


def schema(command):
    return {**COMMON, **COMMANDS[command], "command": command}


def _compatible(default, value):
    if default is None or value is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, (int, float)):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, type(default))


def resolve(command, file_cfg=None, overrides=None):
    """Merge defaults, a config mapping and overrides; reject unknown keys."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    base = schema(command)
    cfg = dict(base)
    for source in (file_cfg or {}, overrides or {}):
        for k, v in source.items():
            if k not in base:
                raise ConfigError(f"unknown key {k!r} for command {command!r}")
            if not _compatible(base[k], v):
                raise ConfigError(f"key {k!r} expects {type(base[k]).__name__}")
            cfg[k] = v
    if cfg["command"] != command:
        raise ConfigError(f"config is for command {cfg['command']!r}, not {command!r}")
    if cfg["model"] not in model_names():
        raise ConfigError(f"unknown model {cfg['model']!r}")
    unknown = set(cfg["params"]) - set(param_names(cfg["model"]))
    if unknown:
        raise ConfigError(f"unknown parameters for {cfg['model']}: {sorted(unknown)}")
    if cfg["x0"] is None:
        cfg["x0"] = DEFAULT_X0[cfg["model"]]
    if "grid" in cfg and cfg["grid"] is None:
        cfg["grid"] = DEFAULT_GRIDS[cfg["model"]]
    if command == "stability" and cfg["starts"] is None:
        x0 = cfg["x0"]
        cfg["starts"] = [x0, [10.0 * v if i not in _discrete(cfg) else v
                              for i, v in enumerate(x0)]]
    if command == "drift" and cfg["lyapunov"] is None:
        cfg["lyapunov"] = "gene" if cfg["model"] == "gene" else "sum"
    return cfg


def _discrete(cfg):
    return DEFAULT_GRIDS[cfg["model"]].get("discrete", [])


def run_id(cfg):
    body = {k: v for k, v in cfg.items() if k != "outdir"}
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:12]
    return f"{cfg['command']}-{digest}"


def _model(cfg):
    try:
        model = build_model(cfg["model"], **cfg["params"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model parameters: {exc}") from None
    if cfg["rtol"] is not None or cfg["atol"] is not None:
        flow = replace(model.flow, rtol=cfg["rtol"] or model.flow.rtol,
                       atol=cfg["atol"] or model.flow.atol)
        model = replace(model, flow=flow)
    return model


def _grid(cfg):
    try:
        return GridSpec.from_dict(cfg["grid"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid grid: {exc}") from None


def _subseeds(seed, n):
    """Integer child seeds, so every recorded seed stays plain JSON."""
    return [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(n)]


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# commands; each returns a dict of small JSON results and writes artifacts

def cmd_simulate(cfg, model, out):
    sc = simulate.SimulationConfig(horizon=float(cfg["horizon"]), max_jumps=int(cfg["max_jumps"]),
                                   method=cfg["method"])
    trajs = [simulate.simulate_path(model, cfg["x0"], sc, rng)
             for rng in simulate.streams(cfg["seed"], int(cfg["paths"]))]
    simulate.write_trajectories_csv(os.path.join(out, "trajectories.csv"), trajs, model)
    summary = [{"path_id": i, "jumps": t.n_jumps, "last_jump": t.end_time,
                "exploded": t.exploded, "cap_hit": t.cap_hit} for i, t in enumerate(trajs)]
    _dump(os.path.join(out, "summary.json"), summary)
    return {"paths": len(trajs), "exploded": sum(t.exploded for t in trajs)}


def _write_density(est, out, stem="density"):
    est.to_csv(os.path.join(out, f"{stem}.csv"))
    est.to_json(os.path.join(out, f"{stem}.json"))
    for a in range(est.grid.dimension):
        with open(os.path.join(out, f"{stem}_marginal_{a}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "mass"])
            m = est.marginal(a)
            for i, v in enumerate(m[:-1]):
                w.writerow([i, repr(float(v))])
            w.writerow(["out", repr(float(m[-1]))])


def cmd_estimate_chain(cfg, model, out):
    est = density.estimate_chain_density(model, cfg["x0"], int(cfg["N"]), _grid(cfg),
                                         cfg["burn_in"], cfg["seed"], int(cfg["paths"]))
    _write_density(est, out)
    return {"in_box_mass": est.in_box_mass}


def cmd_estimate_flow(cfg, model, out):
    est = density.estimate_flow_density(model, cfg["x0"], float(cfg["horizon"]), _grid(cfg),
                                        cfg["seed"], int(cfg["paths"]), cfg["dt"],
                                        float(cfg["burn_in"]))
    _write_density(est, out)
    return {"in_box_mass": est.in_box_mass}


def cmd_stationarity(cfg, model, out):
    ss = _subseeds(cfg["seed"], 2)
    est = density.estimate_chain_density(model, cfg["x0"], int(cfg["N"]), _grid(cfg),
                                         cfg["burn_in"], ss[0])
    res = density.stationarity_residual(model, est, np.random.default_rng(ss[1]), cfg["samples"])
    _write_density(est, out)
    _dump(os.path.join(out, "residual.json"), {"tv": res, "n_samples": est.n_samples})
    return {"tv": res}


def cmd_stability(cfg, model, out):
    curves = density.stability_probe(model, cfg["starts"], cfg["times"], _grid(cfg),
                                     int(cfg["paths"]), cfg["seed"], int(cfg["max_jumps"]),
                                     int(cfg["workers"]))
    curves.to_csv(os.path.join(out, "distances.csv"))
    _dump(os.path.join(out, "stability.json"), curves.to_dict())
    return {"final": curves.distances[:, -1].tolist()}


def _lyapunov(cfg, model):
    kind = cfg["lyapunov"]
    if kind == "gene":
        if model.kernel != "gene":
            raise ConfigError("the 'gene' Lyapunov function needs the gene model")
        return drift.gene_spec_V(GeneExpressionParams(**model.params))
    if kind == "sum":
        axes = list(model.space.continuous_axes)
        return lambda x: np.abs(np.asarray(x, dtype=float)[..., axes]).sum(axis=-1)
    raise ConfigError(f"unknown lyapunov {kind!r}; use 'gene' or 'sum'")


def cmd_drift(cfg, model, out):
    V = _lyapunov(cfg, model)
    d = model.dimension
    pts = drift.radial_shells(d, cfg["r_min"], cfg["r_max"], int(cfg["shells"]),
                              int(cfg["directions"]))
    spec = drift.DriftSpec(V, tuple([0.0] * d), tuple([1.0] * d), pts)
    radii = np.linspace(1.0, float(cfg["R"]), max(2, int(2 * cfg["R"])))
    rep = drift.search_box(model, spec, radii)
    result = rep.to_dict()
    if rep.verdict and cfg["occupation_steps"]:
        occ = drift.occupation_check(model, rep, cfg["x0"], int(cfg["occupation_steps"]),
                                     int(cfg["occupation_paths"]), cfg["seed"])
        result["occupation"] = occ.to_dict()
    _dump(os.path.join(out, "drift.json"), result)
    return {"c1": rep.c1, "verdict": rep.verdict}


def cmd_rank(cfg, model, out):
    rep = rankcheck.search_rank_certificate(
        model, cfg["x0"], int(cfg["n"]), int(cfg["budget"]), np.random.default_rng(cfg["seed"]),
        cfg["mode"], float(cfg["tau_rank"]), cfg["t"])
    _dump(os.path.join(out, "rank.json"), rep.to_dict())
    return {"verdict": rep.verdict, "status": rep.status}


def cmd_r0v(cfg, model, out):
    ss = _subseeds(cfg["seed"], 2)
    est = density.estimate_chain_density(model, cfg["x0"], int(cfg["N"]), _grid(cfg),
                                         cfg["burn_in"], ss[0])
    rep = density.check_r0v(model, est, int(cfg["M"]), np.random.default_rng(ss[1]))
    result = rep.to_dict()
    lo, hi = model.intensity.lower, model.intensity.upper
    if lo and hi:
        result["sandwich"] = [1.0 / hi, 1.0 / lo]
        result["in_sandwich"] = 1.0 / hi <= rep.estimate <= 1.0 / lo
    _dump(os.path.join(out, "r0v.json"), result)
    return {"estimate": rep.estimate, "stable": rep.stable}


HANDLERS = {"simulate": cmd_simulate, "estimate-chain": cmd_estimate_chain,
            "estimate-flow": cmd_estimate_flow, "stationarity": cmd_stationarity,
            "stability": cmd_stability, "drift": cmd_drift, "rank": cmd_rank, "r0v": cmd_r0v}


def run(cfg):
    """Execute a resolved config; returns ``(exit status, run directory)``."""
    out = os.path.join(cfg["outdir"], run_id(cfg))
    try:
        model = _model(cfg)
        os.makedirs(out, exist_ok=True)
        _dump(os.path.join(out, "config.json"), cfg)
        start = time.time()
        summary = HANDLERS[cfg["command"]](cfg, model, out)
        status = EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, out
    except ExplosionError as exc:
        print(f"explosion abort: {exc}", file=sys.stderr)
        return EXIT_EXPLOSION, out
    except (PdmpError, ValueError) as exc:
        print(f"model-domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN, out
    artifacts = sorted(f for f in os.listdir(out) if f != "manifest.json")
    _dump(os.path.join(out, "manifest.json"), {
        "run_id": run_id(cfg), "command": cfg["command"], "seed": cfg["seed"],
        "artifacts": artifacts, "summary": summary, "wall_time_s": time.time() - start,
        "versions": {"pdmpkit": __version__, "numpy": np.__version__,
                     "python": platform.python_version(), "backend": BACKEND}})
    print(out)
    return status, out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser():
    parser = argparse.ArgumentParser(prog="pdmpkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list-models", help="print the registered models and parameters")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with settings")
        for key in schema(name):
            if key == "command":
                continue
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=_parse_value,
                           default=argparse.SUPPRESS, help=f"default: {schema(name)[key]!r}")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "list-models":
        print(json.dumps({m: param_names(m) for m in model_names()}, indent=2))
        return EXIT_OK
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_cfg = {}
        if args.config:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
            if not isinstance(file_cfg, dict):
                raise ConfigError("config file must hold a JSON object")
        cfg = resolve(args.command, file_cfg, overrides)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)[0]


if __name__ == "__main__":
    sys.exit(main())
