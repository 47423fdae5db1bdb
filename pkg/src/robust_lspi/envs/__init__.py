"""Environments: the chain walk, random finite RMDPs, and continuous control tasks."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .chain import ChainSpec, build_chain, chain_kernel, chain_slip_sets, kernel_difference_sets
from .continuous import CartPoleSpec, ContinuousEnv, MountainCarSpec, continuous_reset, continuous_step
from .tabular import TabularEnv, dirichlet_vertices, random_tabular_rmdp, simulate_tabular

KNOBS = {
    ChainSpec: ("slip",),
    CartPoleSpec: ("force_mag", "gravity", "length", "action_noise"),
    MountainCarSpec: ("max_speed", "power", "action_noise"),
}
_ALIASES = {"p": "action_noise", "action-noise": "action_noise"}


def perturb(spec, knob: str, value):
    """Copy of ``spec`` with one perturbation knob set to ``value``."""
    name = _ALIASES.get(knob, knob)
    valid = KNOBS.get(type(spec))
    if valid is None:
        raise ConfigError(f"{type(spec).__name__} has no perturbation knobs")
    if name not in valid:
        raise ConfigError(f"unknown knob {knob!r} for {type(spec).__name__}; valid knobs: {', '.join(valid)}")
    return dataclasses.replace(spec, **{name: value})


@dataclass
class Rollout:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    next_states: list = field(default_factory=list)
    seed: int | None = None
    terminal: bool = False

    def __len__(self):
        return len(self.actions)


def rollout(env, policy, seed: int, horizon: int, start=None) -> Rollout:
    """Run ``policy(state, rng) -> action`` for at most ``horizon`` steps."""
    rng = np.random.default_rng(seed)
    out = Rollout(seed=seed)
    s = env.reset(rng) if start is None else start
    for _ in range(horizon):
        a = int(policy(s, rng))
        s2, r, done = env.step(s, a, rng)
        out.states.append(s)
        out.actions.append(a)
        out.rewards.append(r)
        out.next_states.append(s2)
        s = s2
        if done:
            out.terminal = True
            break
    return out


__all__ = [
    "CartPoleSpec",
    "ChainSpec",
    "ContinuousEnv",
    "KNOBS",
    "MountainCarSpec",
    "Rollout",
    "TabularEnv",
    "build_chain",
    "chain_kernel",
    "chain_slip_sets",
    "continuous_reset",
    "continuous_step",
    "dirichlet_vertices",
    "kernel_difference_sets",
    "perturb",
    "random_tabular_rmdp",
    "rollout",
    "simulate_tabular",
]
