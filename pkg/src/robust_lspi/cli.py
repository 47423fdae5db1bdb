"""Command-line entry point: ``robust-lspi <command> ...``."""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import bench
from .config import load_config
from .errors import ConfigError, RobustLSPIError
from .rlspi import read_weights
from .rmdp import TabularRmdp, robust_policy_iteration, robust_value_iteration


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robust-lspi", description="Robust least-squares policy iteration experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, help="base seed (replication i uses seed + i)")
        sp.add_argument("--reps", type=int, help="number of replications")
        sp.add_argument("--out-dir", help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads (default: $ROBUST_LSPI_THREADS or 1)")

    common(sub.add_parser("run", help="train and evaluate across the configured sweep"))
    sp = sub.add_parser("sweep", help="run with the sweep given on the command line")
    common(sp)
    sp.add_argument("--knob", required=True)
    sp.add_argument("--values", required=True, help="comma-separated values")
    sub.add_parser("validate", help="check a config and print it with defaults").add_argument("config")
    sub.add_parser("oracle", help="exact robust value/policy iteration on a model JSON").add_argument("model")
    sp = sub.add_parser("eval", help="score saved weights on an environment config")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--env", required=True, help="experiment config describing the environment")
    sp.add_argument("--seed", type=int, default=None, help="seed the weights were trained with")
    sp.add_argument("--iteration", type=int, default=None, help="iteration to load (default: last)")
    return p


def _run(args, sweep=None) -> int:
    cfg = load_config(args.config)
    if sweep is not None:
        cfg = bench.with_overrides(cfg, sweep=sweep)
    cfg = bench.with_overrides(cfg, base_seed=args.seed, replications=args.reps, output=args.out_dir)
    if cfg.replications < 1:
        raise ConfigError("--reps must be at least 1")
    threads = args.threads if args.threads is not None else bench.threads_from_env()
    out = Path(cfg.output)
    try:
        result = bench.run_experiment(cfg, out, max(1, threads))
    except Exception:
        out.mkdir(parents=True, exist_ok=True)
        (out / "run.log").write_text(traceback.format_exc())
        print(f"run failed; see {out / 'run.log'}", file=sys.stderr)
        return 1
    for v, mean, std, n in result.aggregate():
        print(f"{result.knob}={v!r}: mean={mean!r} std={std!r} n={n}")
    return 0


def _parse_values(raw: str) -> list:
    try:
        return [float(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"--values must be comma-separated numbers: {exc}") from exc


def _oracle(path) -> int:
    try:
        model = TabularRmdp.load(path)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"{path}: cannot load model ({exc})") from exc
    V, pi = robust_value_iteration(model, tol=1e-10)
    _, pi_pi = robust_policy_iteration(model, tol=1e-12)
    print("value: " + " ".join(repr(float(x)) for x in V))
    print("policy: " + " ".join(str(int(a)) for a in pi))
    print("policy_iteration_agrees: " + str(bool(np.array_equal(pi, pi_pi))).lower())
    return 0


def _eval(args) -> int:
    cfg = load_config(args.env)
    weights = read_weights(args.weights)
    k = max(weights) if args.iteration is None else args.iteration
    if k not in weights:
        raise ConfigError(f"{args.weights}: no iteration {k}")
    seed = cfg.base_seed if args.seed is None else args.seed
    print(repr(bench.evaluate_weights(cfg, weights[k], seed)))
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
            return 0
        if args.command == "run":
            return _run(args)
        if args.command == "sweep":
            return _run(args, {"knob": args.knob, "values": _parse_values(args.values)})
        if args.command == "oracle":
            return _oracle(args.model)
        if args.command == "eval":
            return _eval(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RobustLSPIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
