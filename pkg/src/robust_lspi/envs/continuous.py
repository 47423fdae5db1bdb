"""Cart-pole and mountain-car dynamics with perturbation knobs.

Both follow the usual benchmark equations: cart-pole integrates with explicit
Euler at ``tau = 0.02``; mountain-car applies one velocity/position update per
step with a discrete throttle in {-1, 0, +1} scaled by ``power``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, NumericError


@dataclass(frozen=True)
class CartPoleSpec:
    force_mag: float = 10.0
    gravity: float = 9.8
    length: float = 0.5
    masscart: float = 1.0
    masspole: float = 0.1
    tau: float = 0.02
    horizon: int = 200
    action_noise: float = 0.0

    n_actions = 2
    state_low = (-2.4, -3.0, -0.2095, -3.5)
    state_high = (2.4, 3.0, 0.2095, 3.5)
    x_threshold = 2.4
    theta_threshold = 12 * 2 * math.pi / 360

    def __post_init__(self):
        _check_positive(self, ("force_mag", "gravity", "length", "masscart", "masspole", "tau"))
        _check_common(self)


@dataclass(frozen=True)
class MountainCarSpec:
    max_speed: float = 0.07
    power: float = 15e-4
    hill_gravity: float = 0.0025
    horizon: int = 1000
    action_noise: float = 0.0

    n_actions = 3
    min_position = -1.2
    max_position = 0.6
    goal_position = 0.45
    state_low = (-1.2, -0.07)
    state_high = (0.6, 0.07)

    def __post_init__(self):
        _check_positive(self, ("max_speed", "power", "hill_gravity"))
        _check_common(self)


def _check_positive(spec, names):
    for name in names:
        if not getattr(spec, name) > 0:
            raise DomainError(f"{name} must be positive, got {getattr(spec, name)}")


def _check_common(spec):
    if not 0.0 <= spec.action_noise <= 1.0:
        raise DomainError(f"action_noise must lie in [0, 1], got {spec.action_noise}")
    if spec.horizon < 1:
        raise DomainError("horizon must be at least 1")


def _cartpole(spec: CartPoleSpec, state, action):
    x, x_dot, theta, theta_dot = state
    force = spec.force_mag if action == 1 else -spec.force_mag
    total_mass = spec.masscart + spec.masspole
    polemass_length = spec.masspole * spec.length
    cos, sin = math.cos(theta), math.sin(theta)
    temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass
    theta_acc = (spec.gravity * sin - cos * temp) / (
        spec.length * (4.0 / 3.0 - spec.masspole * cos * cos / total_mass)
    )
    x_acc = temp - polemass_length * theta_acc * cos / total_mass
    nxt = (
        x + spec.tau * x_dot,
        x_dot + spec.tau * x_acc,
        theta + spec.tau * theta_dot,
        theta_dot + spec.tau * theta_acc,
    )
    done = abs(nxt[0]) > spec.x_threshold or abs(nxt[2]) > spec.theta_threshold
    return nxt, 1.0, done


def _mountain_car(spec: MountainCarSpec, state, action):
    position, velocity = state
    velocity += (action - 1) * spec.power - spec.hill_gravity * math.cos(3.0 * position)
    velocity = min(max(velocity, -spec.max_speed), spec.max_speed)
    position += velocity
    position = min(max(position, spec.min_position), spec.max_position)
    if position == spec.min_position and velocity < 0:
        velocity = 0.0
    done = position >= spec.goal_position
    return (position, velocity), 0.0 if done else -1.0, done


def continuous_step(spec, state, action: int, rng=None):
    """One step of the spec's dynamics, with action noise applied first.

    Returns ``(next_state, reward, done)`` where ``next_state`` is a numpy
    array.  The random draws are consumed only when ``action_noise > 0``.
    """
    if spec.action_noise > 0.0:
        if rng.random() < spec.action_noise:
            action = int(rng.integers(spec.n_actions))
    if not 0 <= action < spec.n_actions:
        raise DomainError(f"action {action} outside [0, {spec.n_actions})")
    state = tuple(float(v) for v in state)
    if isinstance(spec, CartPoleSpec):
        nxt, reward, done = _cartpole(spec, state, action)
    elif isinstance(spec, MountainCarSpec):
        nxt, reward, done = _mountain_car(spec, state, action)
    else:
        raise DomainError(f"unknown continuous spec {type(spec).__name__}")
    nxt = np.array(nxt)
    if not np.all(np.isfinite(nxt)):
        raise NumericError(f"non-finite successor from state {state} under action {action}")
    return nxt, reward, done


def continuous_reset(spec, rng) -> np.ndarray:
    if isinstance(spec, CartPoleSpec):
        return rng.uniform(-0.05, 0.05, size=4)
    return np.array([rng.uniform(-0.6, -0.4), 0.0])


@dataclass(frozen=True)
class ContinuousEnv:
    """Episode interface over a continuous spec."""

    spec: CartPoleSpec | MountainCarSpec

    tabular = False

    @property
    def n_actions(self) -> int:
        return self.spec.n_actions

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def reset(self, rng):
        return continuous_reset(self.spec, rng)

    def step(self, state, action, rng):
        return continuous_step(self.spec, state, action, rng)
