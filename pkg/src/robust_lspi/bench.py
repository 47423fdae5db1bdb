"""Perturbation sweeps: train once per replication, score across knob values."""
from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .envs import ContinuousEnv, TabularEnv, build_chain, chain_kernel, chain_slip_sets, perturb
from .features import StackedActions, feature_from_descriptor
from .learner import PowerLaw
from .rlspi import (
    PolicyIterationConfig,
    UncertaintyBinding,
    greedy_policy,
    greedy_table,
    lspi_run,
    monte_carlo_return,
    rlspi_run,
    write_artifacts,
)
from .rmdp import nonrobust_value, robust_value_iteration


@dataclass
class SweepResult:
    knob: str
    values: list
    rows: list  # (value, seed, metric)
    training: dict  # seed -> list of per-iteration metric dicts

    def aggregate(self) -> list:
        out = []
        for v in self.values:
            m = np.array([r[2] for r in self.rows if r[0] == v])
            out.append((v, float(m.mean()), float(m.std()), len(m)))
        return out


def threads_from_env(default: int = 1) -> int:
    raw = os.environ.get("ROBUST_LSPI_THREADS")
    return max(1, int(raw)) if raw else default


def _setup(cfg: ExperimentConfig):
    spec = cfg.env_spec()
    base = feature_from_descriptor(cfg.features)
    unc = cfg.uncertainty
    if cfg.tabular:
        sets = chain_slip_sets(spec, unc["slips"]) if unc["kind"] == "slip_sets" else None
        model = build_chain(spec, sets)
        env = TabularEnv(model)
    else:
        model = None
        env = ContinuousEnv(spec)
    fmap = StackedActions(base, env.n_actions)
    return spec, env, model, fmap


def _binding(cfg: ExperimentConfig) -> UncertaintyBinding:
    unc = cfg.uncertainty
    if unc["kind"] == "sphere":
        return UncertaintyBinding("shared", float(unc["radius"]), unc["radius_rule"], bool(unc["sum_zero"]))
    if unc["kind"] == "slip_sets":
        return UncertaintyBinding("model")
    return UncertaintyBinding("none")


def policy_config(cfg: ExperimentConfig, fmap, seed: int) -> PolicyIterationConfig:
    return PolicyIterationConfig(
        features=fmap,
        K=cfg.K,
        eps0=cfg.eps0,
        inner_max_steps=cfg.inner_max_steps,
        inner_min_steps=cfg.inner_min_steps if cfg.inner_min_steps is not None else cfg.t * cfg.h,
        n_trajectories=cfg.t,
        horizon=cfg.h,
        alpha=cfg.alpha,
        lam=cfg.lam,
        schedule=PowerLaw(),
        ridge=cfg.ridge,
        uncertainty=_binding(cfg),
        exploration=cfg.exploration,
        n_eval_episodes=cfg.eval_episodes,
        seed=seed,
    )


def train(cfg: ExperimentConfig, seed: int):
    """Returns ``(policy object, run result or None)``.

    The policy is an action table for the chain and a weight vector otherwise.
    """
    spec, env, model, fmap = _setup(cfg)
    if cfg.algorithm in ("exact-robust-pi", "exact-pi"):
        target = model if cfg.algorithm == "exact-robust-pi" else build_chain(spec)
        return robust_value_iteration(target, tol=1e-10)[1], None
    pcfg = policy_config(cfg, fmap, seed)
    run = rlspi_run if cfg.algorithm == "rlspi" else lspi_run
    result = run(pcfg, env)
    final = result.final
    return (final.policy if cfg.tabular else final.weights), result


def score(cfg: ExperimentConfig, policy, knob: str, value, seed: int, index: int) -> float:
    """Metric of a trained policy on the environment perturbed to ``knob = value``.

    Chain: mean over start states of the exact value on the perturbed kernel.
    Continuous: mean episodic return over ``eval_episodes`` seeded episodes.
    """
    spec = perturb(cfg.env_spec(), knob, value)
    if cfg.tabular:
        model = build_chain(spec)
        return float(nonrobust_value(model, chain_kernel(spec.n_states, spec.slip), policy).mean())
    fmap = StackedActions(feature_from_descriptor(cfg.features), spec.n_actions)
    w = np.asarray(policy, dtype=float)
    ev_seed = int(np.random.SeedSequence([seed, index]).generate_state(1)[0])
    mc = monte_carlo_return(ContinuousEnv(spec), lambda x: greedy_policy(w, fmap, x), cfg.eval_episodes, ev_seed, spec.horizon)
    return mc["mean"]


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> SweepResult:
    """Train every replication, score it on every sweep value, and write CSVs.

    Replication ``i`` uses seed ``base_seed + i``.  Replications are the units
    of parallel work; each is single-threaded and outputs are sorted before
    writing, so files do not depend on ``threads``.
    """
    knob, values = cfg.sweep["knob"], list(cfg.sweep["values"])
    seeds = [cfg.base_seed + i for i in range(cfg.replications)]

    def cell(seed):
        policy, result = train(cfg, seed)
        rows = [(v, seed, score(cfg, policy, knob, v, seed, j)) for j, v in enumerate(values)]
        return seed, policy, result, rows

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(cell, seeds))
    else:
        done = [cell(s) for s in seeds]
    done.sort(key=lambda x: x[0])
    order = {v: j for j, v in enumerate(values)}
    rows = sorted((r for d in done for r in d[3]), key=lambda r: (order[r[0]], r[1]))
    training = {d[0]: ([] if d[2] is None else [rec.metrics | {"inner_steps": rec.inner_steps, "converged": rec.converged} for rec in d[2].records]) for d in done}
    sweep = SweepResult(knob, values, rows, training)
    if out_dir is not None:
        write_outputs(cfg, sweep, done, Path(out_dir))
    return sweep


def write_outputs(cfg: ExperimentConfig, sweep: SweepResult, done, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        fh.write("knob,value,seed,metric\n")
        for v, seed, m in sweep.rows:
            fh.write(f"{sweep.knob},{float(v)!r},{seed},{float(m)!r}\n")
    with open(out / "aggregate.csv", "w", newline="") as fh:
        fh.write("knob,value,mean,std,n\n")
        for v, mean, std, n in sweep.aggregate():
            fh.write(f"{sweep.knob},{float(v)!r},{mean!r},{std!r},{n}\n")
    with open(out / "train_metrics.csv", "w", newline="") as fh:
        fh.write("seed,iteration,score,inner_steps,converged\n")
        for seed in sorted(sweep.training):
            for k, rec in enumerate(sweep.training[seed]):
                fh.write(f"{seed},{k},{float(rec['score'])!r},{rec['inner_steps']},{int(rec['converged'])}\n")
    for seed, policy, result, _ in done:
        if result is not None:
            write_artifacts(result, out / f"seed_{seed}")
        else:
            (out / f"seed_{seed}").mkdir(exist_ok=True)
            (out / f"seed_{seed}" / "policy.json").write_text(json.dumps([int(a) for a in policy]) + "\n")
    resolved = {k: v for k, v in cfg.to_dict().items() if k != "output"}
    (out / "config.json").write_text(json.dumps(resolved, indent=1, sort_keys=True) + "\n")
    stale = out / "run.log"
    if stale.exists():
        stale.unlink()


def evaluate_weights(cfg: ExperimentConfig, w, seed: int) -> float:
    """Training-time final metric of a weight vector (see ``rlspi_run``)."""
    spec, env, model, fmap = _setup(cfg)
    pcfg = policy_config(cfg, fmap, seed)
    if cfg.tabular:
        from .rlspi import _TabularScorer

        return _TabularScorer(model)(greedy_table(w, fmap, spec.n_states))["score"]
    from .rlspi import evaluation_seed

    w = np.asarray(w, dtype=float)
    return monte_carlo_return(env, lambda x: greedy_policy(w, fmap, x), pcfg.n_eval_episodes, evaluation_seed(seed), spec.horizon)["mean"]


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return dataclasses.replace(cfg, **{k: v for k, v in kw.items() if v is not None})
