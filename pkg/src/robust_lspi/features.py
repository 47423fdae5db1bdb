"""Feature maps over states and state-action pairs, and validated feature matrices."""
from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, RankError

RANK_RTOL = 1e-10


class FeatureMap:
    dim: int

    def __call__(self, x, a=None) -> np.ndarray:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


class Tabular(FeatureMap):
    """One-hot indicator over ``n`` discrete inputs."""

    def __init__(self, n: int):
        if n < 1:
            raise DomainError("tabular features need n >= 1")
        self.n = int(n)
        self.dim = self.n

    def __call__(self, x, a=None):
        i = int(x)
        if not 0 <= i < self.n or i != x:
            raise DomainError(f"index {x} outside [0, {self.n})")
        out = np.zeros(self.n)
        out[i] = 1.0
        return out

    def descriptor(self):
        return {"kind": "tabular", "n": self.n}


class Polynomial(FeatureMap):
    """All monomials of total degree <= ``degree`` in inputs rescaled to [-1, 1].

    ``low``/``high`` give the input box; the constant monomial comes first.
    """

    def __init__(self, degree: int, low, high):
        self.degree = int(degree)
        self.low = np.atleast_1d(np.asarray(low, dtype=float))
        self.high = np.atleast_1d(np.asarray(high, dtype=float))
        if self.degree < 0 or self.low.shape != self.high.shape or np.any(self.high <= self.low):
            raise DomainError("polynomial features need degree >= 0 and low < high")
        k = self.low.shape[0]
        self.exponents = np.array(
            [e for deg in range(self.degree + 1) for e in _exponents(k, deg)], dtype=np.int64
        ).reshape(-1, k)
        self.dim = len(self.exponents)

    def __call__(self, x, a=None):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = 2.0 * (x - self.low) / (self.high - self.low) - 1.0
        return np.prod(y[None, :] ** self.exponents, axis=1)

    def descriptor(self):
        return {"kind": "polynomial", "degree": self.degree, "low": self.low.tolist(), "high": self.high.tolist()}


def _exponents(k, deg):
    # exponent tuples of total degree ``deg`` in ``k`` variables, lexicographically descending
    for combo in itertools.combinations_with_replacement(range(k), deg):
        e = [0] * k
        for i in combo:
            e[i] += 1
        yield e


class RbfGrid(FeatureMap):
    """Gaussian bumps ``exp(-sum_i (x_i - mu_i)^2 / sigma_i)`` on a uniform grid.

    ``counts[i]`` centers per dimension span ``[low_i, high_i]``; ``margin``
    pushes the outer centers past the box by that fraction of the spacing.
    Widths default to ``(high - low)^2 / counts^3``.
    """

    def __init__(self, low, high, counts, width=None, margin: float = 0.0):
        self.low = np.atleast_1d(np.asarray(low, dtype=float))
        self.high = np.atleast_1d(np.asarray(high, dtype=float))
        self.counts = np.atleast_1d(np.asarray(counts, dtype=np.int64))
        if not (self.low.shape == self.high.shape == self.counts.shape):
            raise DomainError("low, high and counts must have one entry per dimension")
        if np.any(self.high <= self.low) or np.any(self.counts < 1):
            raise DomainError("RBF grid needs low < high and counts >= 1")
        self.margin = float(margin)
        if width is None:
            self.width = (self.high - self.low) ** 2 / self.counts.astype(float) ** 3
        else:
            self.width = np.broadcast_to(np.asarray(width, dtype=float), self.low.shape).copy()
        if np.any(self.width <= 0):
            raise DomainError("RBF widths must be positive")
        axes = []
        for lo, hi, n in zip(self.low, self.high, self.counts):
            if n == 1:
                axes.append(np.array([(lo + hi) / 2.0]))
            else:
                step = (hi - lo) / (n - 1)
                axes.append(np.linspace(lo - self.margin * step, hi + self.margin * step, n))
        self.axes = axes
        self.centers = np.array(list(itertools.product(*axes)))
        self.dim = len(self.centers)

    def __call__(self, x, a=None):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != self.low.shape:
            raise DomainError(f"expected an input of length {len(self.low)}")
        return np.exp(-(((x[None, :] - self.centers) ** 2) / self.width).sum(axis=1))

    def descriptor(self):
        return {
            "kind": "rbf",
            "low": self.low.tolist(),
            "high": self.high.tolist(),
            "counts": self.counts.tolist(),
            "width": self.width.tolist(),
            "margin": self.margin,
        }


class StackedActions(FeatureMap):
    """``(1[a=0] psi(s), ..., 1[a=A-1] psi(s))`` for a base state map ``psi``."""

    def __init__(self, base: FeatureMap, n_actions: int):
        if n_actions < 1:
            raise DomainError("need at least one action")
        self.base = base
        self.n_actions = int(n_actions)
        self.dim = base.dim * self.n_actions

    def __call__(self, x, a=None):
        if a is None or not 0 <= int(a) < self.n_actions:
            raise DomainError(f"action {a} outside [0, {self.n_actions})")
        out = np.zeros(self.dim)
        k = self.base.dim
        out[int(a) * k:(int(a) + 1) * k] = self.base(x)
        return out

    def all_actions(self, x) -> np.ndarray:
        """(A, dim) matrix whose row ``a`` is ``phi(x, a)``."""
        psi = self.base(x)
        k = self.base.dim
        out = np.zeros((self.n_actions, self.dim))
        for a in range(self.n_actions):
            out[a, a * k:(a + 1) * k] = psi
        return out

    def descriptor(self):
        return {"kind": "stacked", "base": self.base.descriptor(), "n_actions": self.n_actions}


def feature_eval(fmap: FeatureMap, x, a=None) -> np.ndarray:
    return fmap(x, a)


def feature_from_descriptor(desc: dict) -> FeatureMap:
    kind = desc.get("kind")
    try:
        if kind == "tabular":
            return Tabular(desc["n"])
        if kind == "polynomial":
            return Polynomial(desc["degree"], desc["low"], desc["high"])
        if kind == "rbf":
            return RbfGrid(desc["low"], desc["high"], desc["counts"], desc.get("width"), desc.get("margin", 0.0))
        if kind == "stacked":
            return StackedActions(feature_from_descriptor(desc["base"]), desc["n_actions"])
    except KeyError as exc:
        raise ConfigError(f"feature descriptor {kind!r} is missing field {exc}") from exc
    raise ConfigError(f"unknown feature kind {kind!r}")


def state_matrix(fmap: FeatureMap, n_states: int) -> np.ndarray:
    """Rows ``phi(s)`` for ``s = 0..S-1``."""
    return np.array([fmap(s) for s in range(n_states)])


def state_action_matrix(fmap: FeatureMap, n_states: int, n_actions: int) -> np.ndarray:
    """Rows ``phi(s, a)`` in row-major ``(s, a)`` order."""
    return np.array([fmap(s, a) for s in range(n_states) for a in range(n_actions)])


def rbf_overlap_percent(width: float, centers=(-0.5, 0.5), domain=(-1.0, 1.0), n_points: int = 10_000) -> float:
    """Shared area of two 1-D bumps as a percentage of one bump's area.

    Areas are Riemann sums on ``n_points`` evenly spaced points of ``domain``.
    """
    x = np.linspace(domain[0], domain[1], n_points)
    f = np.exp(-((x - centers[0]) ** 2) / width)
    g = np.exp(-((x - centers[1]) ** 2) / width)
    return 100.0 * float(np.minimum(f, g).sum() / f.sum())


class FeatureMatrix:
    """A full-column-rank feature matrix with its Gram matrices.

    ``d`` (optional) is a distribution over rows; when given,
    ``weighted_gram = Phi' diag(d) Phi``.
    """

    def __init__(self, phi, d=None):
        phi = np.array(phi, dtype=float)
        if phi.ndim != 2:
            raise DomainError("feature matrix must be 2-D")
        if not np.all(np.isfinite(phi)):
            raise DomainError("feature matrix has non-finite entries")
        sv = np.linalg.svd(phi, compute_uv=False)
        rank = int(np.sum(sv > RANK_RTOL * sv[0])) if sv.size and sv[0] > 0 else 0
        if rank < phi.shape[1]:
            raise RankError(f"feature matrix has rank {rank} < {phi.shape[1]} columns")
        phi.setflags(write=False)
        self.phi = phi
        self.gram = phi.T @ phi
        self.d = None
        self.weighted_gram = None
        if d is not None:
            self.bind(d)

    @property
    def shape(self):
        return self.phi.shape

    @property
    def n_features(self) -> int:
        return self.phi.shape[1]

    def bind(self, d) -> "FeatureMatrix":
        d = np.asarray(getattr(d, "d", d), dtype=float)
        if d.shape != (self.phi.shape[0],):
            raise DomainError(f"distribution of length {d.shape} against {self.phi.shape[0]} rows")
        self.d = d
        self.weighted_gram = self.phi.T @ (d[:, None] * self.phi)
        return self

    def to_csv(self, path) -> None:
        header = ",".join(f"f{j}" for j in range(self.phi.shape[1]))
        np.savetxt(Path(path), self.phi, delimiter=",", fmt="%.17g", header=header, comments="")
