"""Robust least-squares policy iteration on state-action features.

Each outer iteration collects fresh trajectories under the current policy
(epsilon-greedy for exploration, uniform random at the start), evaluates it
with the online learner on Q-features, and moves to the greedy policy.  The
non-robust baseline is the same loop with degenerate sets.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .envs import rollout, simulate_tabular
from .errors import ConfigError, DomainError, UnsupportedVariantError
from .features import FeatureMap, RbfGrid, StackedActions
from .learner import PowerLaw, SampleBlock, SetEvaluator, learner_init, run_to_convergence
from .linear_fa import d_norm
from .rmdp import TabularRmdp, as_policy, robust_policy_evaluation_exact, robust_value_iteration
from .uncertainty import CenteredSphere, Degenerate


@dataclass(frozen=True)
class UncertaintyBinding:
    """How the learner's uncertainty sets are chosen.

    ``mode``:
      * ``"none"``: degenerate sets (non-robust evaluation);
      * ``"shared"``: one centered sphere for every pair, evaluated on the
        state-action design over ``value points``;
      * ``"model"``: the finite model's own per-pair sets (tabular only).

    For ``"shared"``, ``radius_rule="absolute"`` uses ``radius`` as the sphere
    radius; ``"frobenius_scaled"`` uses ``sqrt(radius / ||Phi' Phi||_F)``.
    A resolved radius of 0 is the degenerate set.
    """

    mode: str = "none"
    radius: float = 0.0
    radius_rule: str = "absolute"
    sum_zero: bool = False
    strict_compat: bool = False

    def __post_init__(self):
        if self.mode not in ("none", "shared", "model"):
            raise ConfigError(f"unknown uncertainty mode {self.mode!r}")
        if self.radius_rule not in ("absolute", "frobenius_scaled"):
            raise ConfigError(f"unknown radius rule {self.radius_rule!r}")
        if self.radius < 0:
            raise ConfigError("radius must be nonnegative")


@dataclass(frozen=True)
class PolicyIterationConfig:
    features: FeatureMap
    K: int = 20
    eps0: float = 0.1
    inner_max_steps: int = 100_000
    inner_min_steps: int = 1
    n_trajectories: int = 20
    horizon: int = 50
    alpha: float = 0.9
    lam: float = 0.0
    schedule: PowerLaw = field(default_factory=PowerLaw)
    ridge: float | None = None
    uncertainty: UncertaintyBinding = field(default_factory=UncertaintyBinding)
    exploration: float = 0.05
    warm_start: bool = False
    n_eval_episodes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or not self.eps0 > 0 or self.horizon < 1 or self.n_trajectories < 1:
            raise ConfigError("need K >= 1, eps0 > 0, horizon >= 1 and n_trajectories >= 1")
        if not isinstance(self.features, StackedActions):
            raise ConfigError("policy iteration needs state-action (stacked) features")
        if not 0.0 <= self.exploration <= 1.0:
            raise ConfigError("exploration must lie in [0, 1]")


@dataclass
class IterationRecord:
    iteration: int
    weights: np.ndarray
    policy: np.ndarray | None
    inner_steps: int
    converged: bool
    stop: str
    metrics: dict

    def to_json(self) -> str:
        return json.dumps({
            "iteration": self.iteration,
            "weights": [float(x) for x in self.weights],
            "policy": None if self.policy is None else [int(a) for a in self.policy],
            "inner_steps": self.inner_steps,
            "converged": self.converged,
            "stop": self.stop,
            "metrics": self.metrics,
        })


@dataclass
class RunResult:
    records: list
    best: int

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]


def greedy_policy(w, phi_sa: StackedActions, state) -> int:
    """``argmax_a phi(s, a)' w`` with ties going to the lowest action."""
    return int(np.argmax(phi_sa.all_actions(state) @ np.asarray(w)))


def greedy_table(w, phi_sa: StackedActions, n_states: int) -> np.ndarray:
    return np.array([greedy_policy(w, phi_sa, s) for s in range(n_states)], dtype=np.int64)


def value_points(env, fmap: StackedActions) -> np.ndarray:
    """States on which shared sets evaluate the value function."""
    if getattr(env, "tabular", False):
        return np.arange(env.n_states)
    base = fmap.base
    if isinstance(base, RbfGrid):
        return base.centers
    low, high = np.asarray(env.spec.state_low), np.asarray(env.spec.state_high)
    grid = np.meshgrid(*[np.linspace(l, h, 5) for l, h in zip(low, high)], indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def design_matrix(fmap: StackedActions, points) -> np.ndarray:
    return np.vstack([fmap.all_actions(x) for x in points])


def resolve_sphere_radius(binding: UncertaintyBinding, design) -> float:
    if binding.radius_rule == "frobenius_scaled":
        if binding.radius == 0:
            return 0.0
        return float(np.sqrt(binding.radius / np.linalg.norm(design.T @ design, "fro")))
    return float(binding.radius)


class _Problem:
    """Per-run wiring between env, features and uncertainty sets."""

    def __init__(self, config: PolicyIterationConfig, env):
        self.config = config
        self.env = env
        self.fmap = config.features
        self.A = env.n_actions
        if self.fmap.n_actions != self.A:
            raise ConfigError(f"features stack {self.fmap.n_actions} actions, environment has {self.A}")
        self.tabular = bool(getattr(env, "tabular", False))
        self.binding = config.uncertainty
        if self.binding.mode == "model" and not self.tabular:
            raise UnsupportedVariantError("model-bound sets need a finite environment")
        if self.tabular:
            self.sa_table = design_matrix(self.fmap, range(env.n_states))
        self.shared_radius = 0.0
        if self.binding.mode == "shared":
            self.points = value_points(env, self.fmap)
            self.design = design_matrix(self.fmap, self.points)
            self.shared_radius = resolve_sphere_radius(self.binding, self.design)

    def evaluator(self, policy):
        L = self.fmap.dim
        mode = self.binding.mode
        if mode == "shared" and self.shared_radius > 0:
            u = CenteredSphere(self.shared_radius, None, self.binding.sum_zero)
            return SetEvaluator([u], self.design, self.binding.strict_compat), 1
        if mode == "model":
            model = self.env.model
            S = model.n_states
            if policy is None:
                phi_v = self.sa_table.reshape(S, self.A, L).mean(axis=1)
            else:
                phi_v = self.sa_table[np.arange(S) * self.A + policy]
            return SetEvaluator(model.binding.sets, phi_v), model.binding.n_sets
        return SetEvaluator([Degenerate()], np.zeros((1, L))), 1

    def collect(self, policy_fn, policy_table, rng) -> SampleBlock:
        c = self.config
        if self.tabular:
            model = self.env.model
            s, a, s2, start = simulate_tabular(model, policy_table, c.n_trajectories, c.horizon, rng, c.exploration)
            nxt = rng.integers(self.A, size=len(s2)) if policy_table is None else policy_table[s2]
            set_id = model.binding.index[s, a] if self.binding.mode == "model" else np.zeros(len(s), dtype=np.int64)
            return SampleBlock(self.sa_table, s * self.A + a, s2 * self.A + nxt, model.reward[s, a], set_id, start, s, a, s2)
        rows, rows_next, rewards, starts, acts = [], [], [], [], []
        for k in range(c.n_trajectories):
            episode_seed = int(rng.integers(2**63 - 1))
            act_rng = np.random.default_rng(int(rng.integers(2**63 - 1)))

            def behave(x, r, act_rng=act_rng):
                if policy_fn is None or act_rng.random() < c.exploration:
                    return int(act_rng.integers(self.A))
                return policy_fn(x)

            ro = rollout(self.env, behave, episode_seed, c.horizon)
            for i in range(len(ro)):
                rows.append(self.fmap(ro.states[i], ro.actions[i]))
                terminal = ro.terminal and i == len(ro) - 1
                if terminal:
                    rows_next.append(None)
                else:
                    a2 = int(act_rng.integers(self.A)) if policy_fn is None else policy_fn(ro.next_states[i])
                    rows_next.append(self.fmap(ro.next_states[i], a2))
                rewards.append(ro.rewards[i])
                starts.append(i == 0)
                acts.append(ro.actions[i])
        n = len(rows)
        table = np.vstack(rows + [r for r in rows_next if r is not None])
        idx_next = np.full(n, -1, dtype=np.int64)
        j = n
        for i, r in enumerate(rows_next):
            if r is not None:
                idx_next[i] = j
                j += 1
        return SampleBlock(table, np.arange(n), idx_next, np.array(rewards), np.zeros(n, dtype=np.int64), np.array(starts), None, np.array(acts))


def rlspi_run(config: PolicyIterationConfig, env, eval_model: TabularRmdp | None = None) -> RunResult:
    """Run ``config.K`` outer iterations; returns every record plus the best index.

    Tabular environments are scored by the exact robust value of each greedy
    policy under ``eval_model`` (default: the environment's own model);
    continuous ones by the mean episodic return of the greedy policy.
    """
    prob = _Problem(config, env)
    rng = np.random.default_rng(config.seed)
    eval_rng_seed = evaluation_seed(config.seed)
    L = config.features.dim
    policy_table = None
    policy_fn = None
    w = np.zeros(L)
    records = []
    if prob.tabular:
        scorer = _TabularScorer(eval_model if eval_model is not None else env.model)
    for k in range(config.K):
        block = prob.collect(policy_fn, policy_table, rng)
        evaluator, n_sets = prob.evaluator(policy_table)
        state = learner_init(L, w if config.warm_start else None, config.lam, config.alpha, config.schedule,
                             config.ridge, n_sets)
        res = run_to_convergence(state, block, evaluator, config.eps0, config.inner_max_steps, config.inner_min_steps)
        w = res.w
        if prob.tabular:
            policy_table = greedy_table(w, config.features, env.n_states)
            metrics = scorer(policy_table)
        else:
            policy_fn = _greedy_closure(w, config.features)
            mc = monte_carlo_return(env, policy_fn, config.n_eval_episodes, eval_rng_seed, env.horizon)
            metrics = {"score": mc["mean"], "mean_return": mc["mean"], "std_return": mc["std"]}
        records.append(IterationRecord(k, w.copy(), None if policy_table is None else policy_table.copy(),
                                       res.steps, res.converged, res.diagnostics["stop"], metrics))
    best = max(range(len(records)), key=lambda i: (records[i].metrics["score"], -i))
    return RunResult(records, best)


def evaluation_seed(seed: int) -> int:
    """Seed of the scoring rollouts of a run with ``seed``; independent of training draws."""
    return int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])


def lspi_run(config: PolicyIterationConfig, env, eval_model: TabularRmdp | None = None) -> RunResult:
    """The non-robust baseline: ``rlspi_run`` with degenerate sets."""
    return rlspi_run(replace(config, uncertainty=UncertaintyBinding("none")), env, eval_model)


def _greedy_closure(w, fmap):
    w = np.array(w, dtype=float)
    return lambda x: greedy_policy(w, fmap, x)


class _TabularScorer:
    def __init__(self, model: TabularRmdp):
        self.model = model
        self.V_star = robust_value_iteration(model, tol=1e-10)[0]

    def __call__(self, policy):
        ev = evaluate_policy_robust(self.model, policy, "exact-tabular", V_star=self.V_star)
        return {"score": ev["mean_value"], "mean_value": ev["mean_value"], "gap_sup": ev["gap_sup"]}


def evaluate_policy_robust(target, policy, mode: str = "exact-tabular", *, d=None, V_star=None,
                           n_episodes: int = 1000, seed: int = 0, horizon: int = 200, discount: float = 1.0) -> dict:
    """Score a policy exactly (finite model) or by Monte Carlo rollouts.

    ``exact-tabular``: ``target`` is a ``TabularRmdp`` and ``policy`` an
    action table; returns the robust value, its mean over states, and the gap
    to the optimal robust value in sup and d-weighted norms (uniform ``d`` by
    default).  ``monte-carlo``: ``target`` is an environment and ``policy`` a
    callable or an action table; returns mean and std of ``discount``-ed
    episode returns.
    """
    if mode == "exact-tabular":
        if not isinstance(target, TabularRmdp):
            raise UnsupportedVariantError("exact evaluation needs a finite model")
        policy = as_policy(np.asarray(policy), target.n_states, target.n_actions)
        V = robust_policy_evaluation_exact(target, policy, tol=1e-12)
        if V_star is None:
            V_star = robust_value_iteration(target, tol=1e-12)[0]
        d = np.full(target.n_states, 1.0 / target.n_states) if d is None else d
        gap = V_star - V
        return {"V": V, "mean_value": float(V.mean()), "gap_sup": float(np.max(np.abs(gap))), "gap_d": d_norm(gap, d)}
    if mode == "monte-carlo":
        fn = policy if callable(policy) else (lambda s, table=np.asarray(policy): int(table[s]))
        return monte_carlo_return(target, fn, n_episodes, seed, horizon, discount)
    raise DomainError(f"unknown evaluation mode {mode!r}")


def monte_carlo_return(env, policy_fn, n_episodes: int, seed: int, horizon: int, discount: float = 1.0) -> dict:
    seeds = np.random.SeedSequence(seed).generate_state(n_episodes, dtype=np.uint64)
    returns = np.empty(n_episodes)
    for i, s in enumerate(seeds):
        ro = rollout(env, lambda x, r: policy_fn(x), int(s), horizon)
        returns[i] = float(np.sum(np.asarray(ro.rewards) * discount ** np.arange(len(ro))))
    return {"mean": float(returns.mean()), "std": float(returns.std()), "n": n_episodes, "returns": returns}


def write_artifacts(result: RunResult, out_dir) -> None:
    """``records.jsonl`` (one record per line) and ``weights.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.jsonl", "w") as fh:
        for rec in result.records:
            fh.write(rec.to_json() + "\n")
    with open(out / "weights.csv", "w") as fh:
        fh.write("iteration,index,value\n")
        for rec in result.records:
            for i, v in enumerate(rec.weights):
                fh.write(f"{rec.iteration},{i},{float(v)!r}\n")


def read_weights(path) -> dict:
    """``{iteration: weight vector}`` from a weights CSV."""
    rows: dict = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "iteration,index,value":
            raise ConfigError(f"{path}: unexpected weights header {header!r}")
        for line in fh:
            k, i, v = line.strip().split(",")
            rows.setdefault(int(k), {})[int(i)] = float(v)
    return {k: np.array([vals[i] for i in range(len(vals))]) for k, vals in rows.items()}


def q_form_model(rmdp: TabularRmdp, policy) -> TabularRmdp:
    """Single-action model on state-action pairs whose value is ``Q_pi``.

    Pair ``(s, a)`` moves to ``(s', pi(s'))`` with probability ``P0[s, a, s']``
    and carries the set of ``(s, a)`` lifted to pair coordinates.
    """
    from .uncertainty import FiniteVertices

    S, A = rmdp.n_states, rmdp.n_actions
    policy = as_policy(policy, S, A)
    cols = np.arange(S) * A + policy
    n = S * A
    kernel = np.zeros((n, 1, n))
    kernel[:, 0, cols] = rmdp.kernel.reshape(n, S)
    sets = []
    for s in range(S):
        for a in range(A):
            u = rmdp.binding.set_for(s, a)
            if isinstance(u, Degenerate):
                sets.append([Degenerate(n)])
            elif isinstance(u, FiniteVertices):
                lifted = np.zeros((len(u.vertices), n))
                lifted[:, cols] = u.vertices
                sets.append([FiniteVertices(lifted)])
            else:
                raise UnsupportedVariantError("Q-form lifting supports finite and degenerate sets")
    return TabularRmdp(rmdp.reward.reshape(n, 1), kernel, rmdp.discount, sets)
