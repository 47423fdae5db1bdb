"""Chain walk: actions move left/right and slip to the opposite side."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from ..rmdp import TabularRmdp
from ..uncertainty import FiniteVertices

LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class ChainSpec:
    n_states: int = 10
    slip: float = 0.1
    reward_states: tuple = (0, 9)
    discount: float = 0.9

    def __post_init__(self):
        if self.n_states < 2:
            raise DomainError("a chain needs at least two states")
        if not 0.0 <= self.slip <= 0.5:
            raise DomainError(f"slip must lie in [0, 0.5], got {self.slip}")
        object.__setattr__(self, "reward_states", tuple(int(s) for s in self.reward_states))
        if any(not 0 <= s < self.n_states for s in self.reward_states):
            raise DomainError(f"reward states {self.reward_states} fall outside the chain")


def chain_kernel(n_states: int, slip: float) -> np.ndarray:
    """(S, 2, S) kernel; moves past either end clamp to the end state."""
    P = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        left, right = max(s - 1, 0), min(s + 1, n_states - 1)
        P[s, LEFT, left] += 1.0 - slip
        P[s, LEFT, right] += slip
        P[s, RIGHT, right] += 1.0 - slip
        P[s, RIGHT, left] += slip
    return P


def chain_reward(spec: ChainSpec) -> np.ndarray:
    r = np.zeros((spec.n_states, 2))
    r[list(spec.reward_states), :] = 1.0
    return r


def build_chain(spec: ChainSpec = ChainSpec(), sets=None) -> TabularRmdp:
    """Chain model; ``sets`` is any specification accepted by ``bind_sets``."""
    return TabularRmdp(chain_reward(spec), chain_kernel(spec.n_states, spec.slip), spec.discount, sets)


def kernel_difference_sets(nominal: np.ndarray, kernels) -> list:
    """Per-pair finite sets ``{P'[s, a] - P0[s, a]}`` over alternative kernels.

    The result is a nested ``[S][A]`` list usable as a set binding.  Every
    vertex keeps the row a probability vector by construction.
    """
    nominal = np.asarray(nominal, dtype=float)
    stack = np.stack([np.asarray(k, dtype=float) for k in kernels])
    S, A, _ = nominal.shape
    out = []
    for s in range(S):
        row = []
        for a in range(A):
            diffs = stack[:, s, a, :] - nominal[s, a]
            # exact zero sum: push the rounding residue onto the largest entry
            diffs[np.arange(len(diffs)), np.argmax(np.abs(diffs), axis=1)] -= diffs.sum(axis=1)
            row.append(FiniteVertices(np.unique(diffs, axis=0)))
        out.append(row)
    return out


def chain_slip_sets(spec: ChainSpec, slips) -> list:
    """Finite sets whose vertices are the kernels at the listed slip values."""
    nominal = chain_kernel(spec.n_states, spec.slip)
    return kernel_difference_sets(nominal, [chain_kernel(spec.n_states, p) for p in slips])
