"""Command-line front end.

Values resolve as built-in defaults < ``--config`` JSON < explicit flags. The
resolved configuration is written into every output file.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Sequence

from . import harness
from .dual import simulate_dual, write_dual_jsonl
from .limit import simulate_limit_replicates
from .model import DualState, InvalidParamsError, ParticleState, Params
from .particle import (
    SimulationError,
    simulate_particle,
    simulate_particle_replicates,
    write_events_jsonl,
    write_snapshots_csv,
)

PARAM_FLAGS = {
    "r": "split_rate_base",
    "p": "split_exponent",
    "theta": "theta",
    "sigma": "sigma",
    "K": "capital_K",
    "lam": "lambda",
    "zeta": "zeta",
}

DEFAULTS = {
    "simulate-particle": {"init": [20, 20], "t_end": 1.0, "obs": None, "n": 1, "events": None,
                          "params": {"zeta": 0.05}},
    "simulate-limit": {"init": [1.0, 1.0], "t_end": 1.0, "obs": None, "n": 1, "dt": None, "params": {}},
    "simulate-dual": {"q": 0.7, "marks": [0.5, 0.5], "t_end": 1.0, "obs": None, "dt": 1e-3, "params": {}},
    "check-duality": {"grid": "default", "n": None, "model": "particle"},
    "check-pointwise": {"n": 100},
    "check-yule": {"w": 1, "r": 1.0, "t": 1.0, "z": 0.5, "n": 100_000},
    "check-gamma": {"w": 1, "r": 1.0, "t": 8.0, "n": 10_000},
    "check-longterm": {"init": [1.0, 1.0], "ts": [2.0, 4.0, 6.0], "n": 5_000, "eps": 0.01, "dt": None,
                       "params": harness.LONGTERM_PARAMS.to_dict()},
    "check-generator": {"params": harness.GENERATOR_PARAMS.to_dict()},
    "check-moments": {"init": [1.0, 0.5], "t": 1.0, "n": 10_000},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(s: str) -> list[float]:
    try:
        v = json.loads(s) if s.strip().startswith("[") else [float(x) for x in s.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e
    return [float(x) for x in v]


def _ints(s: str) -> list[int]:
    vals = _floats(s)
    if any(v != int(v) or v < 0 for v in vals):
        raise argparse.ArgumentTypeError("particle counts must be nonnegative integers")
    return [int(v) for v in vals]


def _add_params(p: argparse.ArgumentParser, only: Sequence[str] = tuple(PARAM_FLAGS)) -> None:
    g = p.add_argument_group("model parameters")
    for flag in only:
        typ = int if flag == "p" else float
        g.add_argument(f"--{flag}", dest=f"param_{flag}", type=typ, default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="branch2", description="Two-level branching simulations and checks.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    S = argparse.SUPPRESS

    def common(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", default=None, help="JSON file; explicit flags override it")
        sp.add_argument("--seed", type=int, default=S, help="master seed (fallback: $BRANCH2_SEED, then 0)")
        sp.add_argument("--out", default=S, help="output path (default: stdout)")
        sp.add_argument("--threads", type=int, default=S)
        return sp

    sp = common("simulate-particle", "exact simulation of the individual-based model")
    sp.add_argument("--init", type=_ints, default=S, help="particle counts per cell")
    sp.add_argument("--t-end", dest="t_end", type=float, default=S)
    sp.add_argument("--obs", type=_floats, default=S)
    sp.add_argument("--n", type=int, default=S, help="replicates")
    sp.add_argument("--events", default=S, help="JSON-lines event log of replicate 0")
    _add_params(sp)

    sp = common("simulate-limit", "simulate the diffusion limit")
    sp.add_argument("--init", type=_floats, default=S, help="masses per cell")
    sp.add_argument("--t-end", dest="t_end", type=float, default=S)
    sp.add_argument("--obs", type=_floats, default=S)
    sp.add_argument("--n", type=int, default=S)
    sp.add_argument("--dt", type=float, default=S)
    _add_params(sp, ("r", "theta", "sigma", "K", "lam"))

    sp = common("simulate-dual", "simulate the dual process")
    sp.add_argument("--q", type=float, default=S)
    sp.add_argument("--marks", type=_floats, default=S)
    sp.add_argument("--t-end", dest="t_end", type=float, default=S)
    sp.add_argument("--obs", type=_floats, default=S)
    sp.add_argument("--dt", type=float, default=S)
    _add_params(sp, ("r", "theta", "sigma", "K", "lam"))

    sp = common("check-duality", "Monte-Carlo duality on the pinned grid")
    sp.add_argument("--grid", choices=["default"], default=S)
    sp.add_argument("--n", type=int, default=S, help="override replicates per grid cell")
    sp.add_argument("--model", choices=["particle", "limit"], default=S)

    sp = common("check-pointwise", "generator identity on random small states")
    sp.add_argument("--n", type=int, default=S)

    sp = common("check-yule", "Yule pgf and factorial moments")
    for name, typ in (("w", int), ("r", float), ("t", float), ("z", float), ("n", int)):
        sp.add_argument(f"--{name}", type=typ, default=S)

    sp = common("check-gamma", "Gamma law of the rescaled Yule count")
    for name, typ in (("w", int), ("r", float), ("t", float), ("n", int)):
        sp.add_argument(f"--{name}", type=typ, default=S)

    sp = common("check-longterm", "long-time behaviour of the limit model")
    sp.add_argument("--init", type=_floats, default=S)
    sp.add_argument("--ts", type=_floats, default=S)
    sp.add_argument("--n", type=int, default=S)
    sp.add_argument("--eps", type=float, default=S)
    sp.add_argument("--dt", type=float, default=S)
    _add_params(sp, ("r", "theta", "sigma", "K", "lam"))

    sp = common("check-generator", "particle vs limit generator gaps")
    _add_params(sp, ("r", "theta", "sigma", "K", "lam"))

    sp = common("check-moments", "empirical moments against the exponential bound")
    sp.add_argument("--init", type=_floats, default=S)
    sp.add_argument("--t", type=float, default=S)
    sp.add_argument("--n", type=int, default=S)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags into one validated RunConfig dict."""
    cmd = args.command
    cfg = json.loads(json.dumps(DEFAULTS[cmd]))
    cfg.update({"seed": None, "out": None, "threads": 1})
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, ValueError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
        if not isinstance(file_cfg, dict):
            raise UsageError("config must be a JSON object")
        file_cfg.pop("command", None)
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {sorted(unknown)}")
        if "params" in file_cfg:
            cfg["params"] = {**cfg.get("params", {}), **file_cfg.pop("params")}
        cfg.update(file_cfg)
    flags = vars(args)
    for key, val in flags.items():
        if key in ("command", "config"):
            continue
        if key.startswith("param_"):
            cfg.setdefault("params", {})[PARAM_FLAGS[key[6:]]] = val
        else:
            cfg[key] = val
    if cfg["seed"] is None:
        env = os.environ.get("BRANCH2_SEED")
        try:
            cfg["seed"] = int(env) if env is not None else 0
        except ValueError as e:
            raise UsageError(f"BRANCH2_SEED must be an integer, got {env!r}") from e
    if "params" in cfg:
        cfg["params"] = Params.from_dict(cfg["params"]).to_dict()
    cfg["command"] = cmd
    return cfg


def _emit_text(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_report(rep: harness.CheckReport, cfg: dict) -> int:
    d = rep.to_dict()
    d["run_config"] = cfg
    _emit_text(json.dumps(d, sort_keys=True, indent=2) + "\n", cfg["out"])
    print(rep.summary(), file=sys.stderr)
    return 0 if rep.passed else 1


def _write_csv(cfg, replicates, obs, value_name) -> None:
    write_snapshots_csv(cfg["out"] or sys.stdout, replicates, obs, value_name, run_config=cfg)


def _obs(cfg) -> list[float]:
    return sorted(cfg["obs"]) if cfg["obs"] else [cfg["t_end"]]


def dispatch(cfg: dict) -> int:
    cmd = cfg["command"]
    seed, threads = cfg["seed"], cfg["threads"]
    if cmd == "simulate-particle":
        p = Params.from_dict(cfg["params"])
        init = ParticleState(tuple(cfg["init"]))
        obs = _obs(cfg)
        reps = simulate_particle_replicates(init, p, cfg["t_end"], obs, cfg["n"], seed, threads)
        _write_csv(cfg, reps, obs, "particle_count")
        if cfg["events"]:
            traj = simulate_particle(init, p, cfg["t_end"], obs, seed)
            write_events_jsonl(cfg["events"], traj, run_config=cfg)
        return 0
    if cmd == "simulate-limit":
        p = Params.from_dict(cfg["params"])
        obs = _obs(cfg)
        reps = simulate_limit_replicates(cfg["init"], p, cfg["t_end"], cfg["dt"], obs, cfg["n"], seed, threads)
        _write_csv(cfg, reps, obs, "mass")
        return 0
    if cmd == "simulate-dual":
        p = Params.from_dict(cfg["params"])
        traj = simulate_dual(DualState(cfg["q"], tuple(cfg["marks"])), p, cfg["t_end"], cfg["dt"], seed,
                             cfg["obs"])
        write_dual_jsonl(cfg["out"] or sys.stdout, traj, run_config=cfg)
        return 0
    if cmd == "check-duality":
        grid = harness.DualityGrid(model=cfg["model"])
        if cfg["n"] is not None:
            grid = harness.DualityGrid(n=cfg["n"], model=cfg["model"])
        return _emit_report(harness.check_duality_grid(grid, seed, threads), cfg)
    if cmd == "check-pointwise":
        return _emit_report(harness.check_duality_pointwise(cfg["n"], seed), cfg)
    if cmd == "check-yule":
        return _emit_report(harness.check_yule(cfg["w"], cfg["r"], cfg["t"], cfg["z"], cfg["n"], seed,
                                               threads=threads), cfg)
    if cmd == "check-gamma":
        return _emit_report(harness.check_gamma_scaling(cfg["w"], cfg["r"], cfg["t"], cfg["n"], seed,
                                                        threads=threads), cfg)
    if cmd == "check-longterm":
        p = Params.from_dict(cfg["params"])
        return _emit_report(harness.check_longterm(cfg["init"], p, cfg["ts"], cfg["n"], cfg["eps"], seed,
                                                   cfg["dt"], threads=threads), cfg)
    if cmd == "check-generator":
        return _emit_report(harness.check_generator(Params.from_dict(cfg["params"])), cfg)
    if cmd == "check-moments":
        return _emit_report(harness.check_moments(nu0=cfg["init"], t=cfg["t"], n=cfg["n"], seed=seed,
                                                  threads=threads), cfg)
    raise UsageError(f"unknown command {cmd}")


def run(argv: Sequence[str] | None = None) -> int:
    """0 on success, 1 when a check fails, 2 on usage or input errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
        cfg = resolve(args)
        return dispatch(cfg)
    except (UsageError, InvalidParamsError, ValueError) as e:
        print(f"branch2: error: {e}", file=sys.stderr)
        return 2
    except SimulationError as e:
        print(f"branch2: simulation aborted: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
