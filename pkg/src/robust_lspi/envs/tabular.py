"""Random tabular robust MDPs and a sampling wrapper for finite models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import DomainError
from ..rmdp import TabularRmdp
from ..uncertainty import FiniteVertices


def dirichlet_vertices(rng, row, n_vertices=3, scale=0.1, shrink=1.0):
    """Vertices ``scale * (q - row)`` with ``q`` drawn on the support of ``row``.

    ``row + u`` is a convex combination of two probability vectors, so it
    stays in the simplex.
    """
    support = np.flatnonzero(row > 0)
    verts = np.zeros((n_vertices, row.shape[0]))
    for k in range(n_vertices):
        q = np.zeros_like(row)
        q[support] = rng.dirichlet(np.ones(len(support)))
        verts[k] = scale * shrink * (q - row)
        verts[k, support[np.argmax(np.abs(verts[k, support]))]] -= verts[k].sum()
    return FiniteVertices(verts)


def random_tabular_rmdp(
    n_states: int,
    n_actions: int,
    branching: int | None = None,
    seed: int = 0,
    set_builder=None,
    discount: float = 0.9,
) -> TabularRmdp:
    """Seeded random RMDP with finite-vertex sets.

    ``branching`` successors per row (all states when ``None``), rewards
    uniform on [0, 1].  ``set_builder(rng, row, shrink)`` returns the set for
    one pair; a set that pushes a row out of the simplex is rebuilt with the
    shrink factor halved, up to 100 times.
    """
    branching = n_states if branching is None else int(branching)
    if not 1 <= branching <= n_states:
        raise DomainError(f"branching must lie in [1, {n_states}], got {branching}")
    rng = np.random.default_rng(seed)
    builder = dirichlet_vertices if set_builder is None else set_builder
    kernel = np.zeros((n_states, n_actions, n_states))
    sets = [[None] * n_actions for _ in range(n_states)]
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=branching, replace=False)
            kernel[s, a, succ] = rng.dirichlet(np.ones(branching))
            kernel[s, a] /= kernel[s, a].sum()
            for attempt in range(100):
                u = builder(rng, kernel[s, a], shrink=0.5**attempt)
                if not isinstance(u, FiniteVertices) or u.valid_for(kernel[s, a]):
                    break
            else:
                raise DomainError(f"could not build a valid vertex set for ({s}, {a})")
            sets[s][a] = u
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularRmdp(reward, kernel, discount, sets)


@dataclass(frozen=True)
class TabularEnv:
    """Sampling view of a finite model; episodes start uniformly at random."""

    model: TabularRmdp

    @property
    def n_actions(self) -> int:
        return self.model.n_actions

    @property
    def n_states(self) -> int:
        return self.model.n_states

    tabular = True

    def reset(self, rng) -> int:
        return int(rng.integers(self.model.n_states))

    def step(self, state: int, action: int, rng):
        cum = np.cumsum(self.model.kernel[state, action])
        nxt = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        return min(nxt, self.model.n_states - 1), float(self.model.reward[state, action]), False


@njit(cache=True)
def _simulate(cum, greedy, eps, n_traj, horizon, u_start, u_explore, u_action, u_next):
    S, A = cum.shape[0], cum.shape[1]
    n = n_traj * horizon
    s_out = np.empty(n, dtype=np.int64)
    a_out = np.empty(n, dtype=np.int64)
    s2_out = np.empty(n, dtype=np.int64)
    start = np.zeros(n, dtype=np.bool_)
    i = 0
    for k in range(n_traj):
        s = min(int(u_start[k] * S), S - 1)
        for h in range(horizon):
            if greedy[0] < 0 or u_explore[i] < eps:
                a = min(int(u_action[i] * A), A - 1)
            else:
                a = greedy[s]
            row = cum[s, a]
            x = u_next[i] * row[S - 1]
            nxt = 0
            while nxt < S - 1 and row[nxt] <= x:
                nxt += 1
            s_out[i] = s
            a_out[i] = a
            s2_out[i] = nxt
            start[i] = h == 0
            s = nxt
            i += 1
    return s_out, a_out, s2_out, start


def simulate_tabular(model: TabularRmdp, greedy, n_traj: int, horizon: int, rng, eps: float = 0.0):
    """Trajectories from uniform random starts under an epsilon-greedy policy.

    ``greedy=None`` means uniform random actions.  Returns
    ``(s, a, s_next, episode_start)`` arrays of length ``n_traj * horizon``.
    All randomness is drawn from ``rng`` up front, so results depend only on
    its state.
    """
    n = n_traj * horizon
    u_start = rng.random(n_traj)
    u_explore = rng.random(n)
    u_action = rng.random(n)
    u_next = rng.random(n)
    g = np.full(1, -1, dtype=np.int64) if greedy is None else np.asarray(greedy, dtype=np.int64)
    cum = np.cumsum(model.kernel, axis=2)
    return _simulate(cum, g, float(eps), int(n_traj), int(horizon), u_start, u_explore, u_action, u_next)
