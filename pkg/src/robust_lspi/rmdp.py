"""Finite robust MDPs and exact robust dynamic programming.

The model is ``P = P0 + U`` with a rectangular uncertainty set: every
state-action pair carries its own perturbation set ``U[s, a]``.  All routines
here are exact (up to the stated tolerances) and serve as ground truth for the
learning code.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, NonConvergenceError, SolverError
from .uncertainty import (
    Degenerate,
    FiniteVertices,
    SimplexSphere,
    UncertaintySet,
    set_from_descriptor,
)

_ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SetBinding:
    """Rectangular binding of uncertainty sets to state-action pairs.

    ``sets`` holds the distinct sets; ``index[s, a]`` is the identifier of the
    set attached to ``(s, a)``.
    """

    sets: tuple
    index: np.ndarray

    def __post_init__(self):
        index = np.asarray(self.index, dtype=np.int64)
        if index.ndim != 2:
            raise DomainError("set index must be an (S, A) array")
        if index.min() < 0 or index.max() >= len(self.sets):
            raise DomainError("set index refers to a missing set")
        index.setflags(write=False)
        object.__setattr__(self, "index", index)

    @property
    def n_sets(self) -> int:
        return len(self.sets)

    def set_for(self, s: int, a: int) -> UncertaintySet:
        return self.sets[self.index[s, a]]

    def _values(self, ids, V):
        return {k: self.sets[k].support(V)[0] for k in np.unique(ids)}

    def sigma_all(self, V) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        vals = self._values(self.index, V)
        return np.vectorize(vals.__getitem__, otypes=[float])(self.index)

    def sigma_policy(self, policy, V) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        ids = self.index[np.arange(len(policy)), policy]
        vals = self._values(ids, V)
        return np.array([vals[k] for k in ids], dtype=float)


def bind_sets(spec, n_states: int, n_actions: int) -> SetBinding:
    """Normalize a set specification into a ``SetBinding``.

    ``spec`` may be a ``SetBinding``, one set shared by all pairs, a callable
    ``(s, a) -> set``, or a nested ``[S][A]`` sequence of sets.  Pairs holding
    the same object share an identifier.
    """
    if isinstance(spec, SetBinding):
        if spec.index.shape != (n_states, n_actions):
            raise DomainError(f"binding has shape {spec.index.shape}, expected {(n_states, n_actions)}")
        return spec
    if spec is None:
        spec = Degenerate(n_states)
    if isinstance(spec, UncertaintySet):
        return SetBinding((spec,), np.zeros((n_states, n_actions), dtype=np.int64))
    get = spec if callable(spec) else (lambda s, a: spec[s][a])
    sets: list = []
    ids: dict = {}
    index = np.empty((n_states, n_actions), dtype=np.int64)
    for s in range(n_states):
        for a in range(n_actions):
            u = get(s, a)
            if not isinstance(u, UncertaintySet):
                raise DomainError(f"pair ({s}, {a}) is not bound to an uncertainty set")
            if id(u) not in ids:
                ids[id(u)] = len(sets)
                sets.append(u)
            index[s, a] = ids[id(u)]
    return SetBinding(tuple(sets), index)


@dataclass(frozen=True, eq=False)
class TabularRmdp:
    reward: np.ndarray
    kernel: np.ndarray
    discount: float
    binding: SetBinding

    def __post_init__(self):
        reward = np.array(self.reward, dtype=float)
        kernel = np.array(self.kernel, dtype=float)
        if reward.ndim != 2 or kernel.shape != reward.shape + (reward.shape[0],):
            raise DomainError(f"reward {reward.shape} and kernel {kernel.shape} shapes disagree")
        if not 0.0 < self.discount < 1.0:
            raise DomainError(f"discount must lie in (0, 1), got {self.discount}")
        check_stochastic(kernel)
        if not np.all(np.isfinite(reward)):
            raise DomainError("reward has non-finite entries")
        binding = bind_sets(self.binding, *reward.shape)
        _check_binding(binding, kernel)
        reward.setflags(write=False)
        kernel.setflags(write=False)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "binding", binding)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def alpha(self) -> float:
        return self.discount

    def policy_kernel(self, policy, kernel=None) -> np.ndarray:
        P = self.kernel if kernel is None else kernel
        return P[np.arange(self.n_states), policy]

    def policy_reward(self, policy) -> np.ndarray:
        return self.reward[np.arange(self.n_states), policy]

    def with_sets(self, spec) -> "TabularRmdp":
        return TabularRmdp(self.reward, self.kernel, self.discount, bind_sets(spec, self.n_states, self.n_actions))

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": self.discount,
            "reward": self.reward.ravel().tolist(),
            "kernel": self.kernel.ravel().tolist(),
            "sets": [
                self.binding.set_for(s, a).descriptor()
                for s in range(self.n_states)
                for a in range(self.n_actions)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularRmdp":
        S, A = int(doc["n_states"]), int(doc["n_actions"])
        reward = np.asarray(doc["reward"], dtype=float).reshape(S, A)
        kernel = np.asarray(doc["kernel"], dtype=float).reshape(S, A, S)
        descs = doc.get("sets") or [{"kind": "degenerate"}] * (S * A)
        if len(descs) != S * A:
            raise DomainError(f"expected {S * A} set descriptors, got {len(descs)}")
        sets: list = []
        index = np.empty((S, A), dtype=np.int64)
        for k, desc in enumerate(descs):
            s, a = divmod(k, A)
            u = set_from_descriptor(desc, nominal=kernel[s, a])
            for j, prev in enumerate(sets):
                if prev == u:
                    index[s, a] = j
                    break
            else:
                index[s, a] = len(sets)
                sets.append(u)
        return cls(reward, kernel, float(doc["discount"]), SetBinding(tuple(sets), index))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "TabularRmdp":
        return cls.from_dict(json.loads(Path(path).read_text()))


def check_stochastic(kernel, tol: float = _ROW_TOL) -> None:
    kernel = np.asarray(kernel)
    if np.any(kernel < -tol):
        raise DomainError("transition kernel has negative entries")
    err = np.abs(kernel.sum(axis=-1) - 1.0)
    if np.any(err > tol):
        where = np.unravel_index(int(np.argmax(err)), err.shape)
        raise DomainError(f"kernel row {tuple(int(i) for i in where)} sums to {1.0 - err[where]:+.3e} off 1")


def _check_binding(binding: SetBinding, kernel) -> None:
    S = kernel.shape[0]
    for k, u in enumerate(binding.sets):
        if u.dim is not None and u.dim != S:
            raise DomainError(f"set {k} has dimension {u.dim}, model has {S} states")
    for s, a in np.ndindex(binding.index.shape):
        u = binding.set_for(s, a)
        if isinstance(u, FiniteVertices) and not u.valid_for(kernel[s, a]):
            raise DomainError(f"a vertex bound to ({s}, {a}) leaves the probability simplex")
        if isinstance(u, SimplexSphere) and np.max(np.abs(u.nominal - kernel[s, a])) > _ROW_TOL:
            raise DomainError(f"simplex-sphere nominal row differs from the kernel at ({s}, {a})")


def as_policy(policy, n_states: int, n_actions: int) -> np.ndarray:
    pol = np.asarray(policy)
    if pol.shape != (n_states,) or not np.issubdtype(pol.dtype, np.integer):
        raise DomainError(f"policy must be {n_states} integer actions")
    if pol.min() < 0 or pol.max() >= n_actions:
        raise DomainError(f"policy actions must lie in [0, {n_actions})")
    return pol


def nonrobust_value(rmdp: TabularRmdp, kernel, policy) -> np.ndarray:
    """Solve ``(I - alpha P_pi) V = r_pi`` for a fixed kernel."""
    policy = as_policy(policy, rmdp.n_states, rmdp.n_actions)
    kernel = np.asarray(kernel, dtype=float)
    check_stochastic(kernel)
    P = rmdp.policy_kernel(policy, kernel)
    M = np.eye(rmdp.n_states) - rmdp.discount * P
    try:
        V = np.linalg.solve(M, rmdp.policy_reward(policy))
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"policy evaluation system is singular: {exc}") from exc
    if not np.all(np.isfinite(V)):
        raise SolverError("policy evaluation produced non-finite values")
    return V


def robust_bellman_policy(rmdp: TabularRmdp, policy, V, binding: SetBinding | None = None) -> np.ndarray:
    """One application of the robust policy backup ``r + a P0 V + a sigma(V)``."""
    policy = as_policy(policy, rmdp.n_states, rmdp.n_actions)
    V = np.asarray(V, dtype=float)
    if V.shape != (rmdp.n_states,):
        raise DomainError(f"value vector must have length {rmdp.n_states}")
    binding = rmdp.binding if binding is None else binding
    a = rmdp.discount
    return rmdp.policy_reward(policy) + a * (rmdp.policy_kernel(policy) @ V) + a * binding.sigma_policy(policy, V)


def robust_q_backup(rmdp: TabularRmdp, V) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    a = rmdp.discount
    return rmdp.reward + a * (rmdp.kernel @ V) + a * rmdp.binding.sigma_all(V)


def robust_bellman_optimal(rmdp: TabularRmdp, V) -> tuple[np.ndarray, np.ndarray]:
    """Greedy robust backup; ties go to the lowest action index."""
    Q = robust_q_backup(rmdp, V)
    policy = np.argmax(Q, axis=1)
    return Q[np.arange(rmdp.n_states), policy], policy


def _fixed_point(step, n, tol, max_iters, what):
    if not tol > 0:
        raise DomainError("tol must be positive")
    V = np.zeros(n)
    residual = np.inf
    for k in range(max_iters):
        TV = step(V)
        residual = float(np.max(np.abs(TV - V)))
        if residual <= tol:
            return V, k
        V = TV
    raise NonConvergenceError(f"{what} did not reach tol={tol}", residual, max_iters)


def robust_value_iteration(rmdp: TabularRmdp, tol: float = 1e-10, max_iters: int = 100_000):
    """Iterate the optimal robust backup from ``V = 0``.

    Returns ``(V, policy)`` with ``||T V - V||_inf <= tol`` and the greedy
    policy at ``V``.
    """
    V, _ = _fixed_point(lambda v: robust_bellman_optimal(rmdp, v)[0], rmdp.n_states, tol, max_iters, "robust value iteration")
    return V, robust_bellman_optimal(rmdp, V)[1]


def robust_policy_evaluation_exact(rmdp: TabularRmdp, policy, tol: float = 1e-10, max_iters: int = 100_000) -> np.ndarray:
    policy = as_policy(policy, rmdp.n_states, rmdp.n_actions)
    V, _ = _fixed_point(lambda v: robust_bellman_policy(rmdp, policy, v), rmdp.n_states, tol, max_iters, "robust policy evaluation")
    return V


def robust_q_values(rmdp: TabularRmdp, policy, tol: float = 1e-12) -> np.ndarray:
    """Robust Q-table of ``policy``: one robust backup of its robust value."""
    return robust_q_backup(rmdp, robust_policy_evaluation_exact(rmdp, policy, tol))


def robust_policy_iteration(rmdp: TabularRmdp, tol: float = 1e-10, max_iters: int = 1000):
    """Howard-style iteration with exact robust evaluation; ties keep the old action."""
    policy = np.zeros(rmdp.n_states, dtype=np.int64)
    for _ in range(max_iters):
        V = robust_policy_evaluation_exact(rmdp, policy, tol)
        Q = robust_q_backup(rmdp, V)
        best = np.argmax(Q, axis=1)
        keep = Q[np.arange(rmdp.n_states), policy] >= Q[np.arange(rmdp.n_states), best] - 10 * tol
        new = np.where(keep, policy, best)
        if np.array_equal(new, policy):
            return V, policy
        policy = new
    raise NonConvergenceError("robust policy iteration did not stabilize", float("nan"), max_iters)


def robust_td_lambda_apply(rmdp: TabularRmdp, policy, V, lam: float) -> np.ndarray:
    """Geometric mixture ``(1 - lam) sum_m lam^m T^{m+1} V`` of robust backups.

    The series stops at the first ``m`` with
    ``lam^(m+1) (2 ||V||_inf + max|r| / (1 - alpha)) < 1e-12``; the remaining
    weight ``lam^(m+1)`` is put on the last computed iterate so the weights
    still sum to one and fixed points are preserved exactly.
    """
    if not 0.0 <= lam < 1.0:
        raise DomainError(f"lambda must lie in [0, 1), got {lam}")
    if lam == 0.0:
        return robust_bellman_policy(rmdp, policy, V)
    V = np.asarray(V, dtype=float)
    scale = 2.0 * float(np.max(np.abs(V))) + float(np.max(np.abs(rmdp.reward))) / (1.0 - rmdp.discount)
    out = np.zeros_like(V)
    cur = V
    weight = 1.0 - lam
    m = 0
    while True:
        cur = robust_bellman_policy(rmdp, policy, cur)
        out += weight * cur
        tail = lam ** (m + 1)
        if tail * scale < 1e-12:
            return out + tail * cur
        weight *= lam
        m += 1
