"""Uncertainty sets over transition-kernel perturbations and their support functions.

Every set here is a set of perturbation vectors ``u`` (one entry per successor
state).  The quantity the rest of the package consumes is the support-function
infimum ``sigma_B(v) = inf{u @ v : u in B}``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NumericError, UnsupportedVariantError

_ZERO_SUM_TOL = 1e-12


class UncertaintySet:
    """Base class.  Subclasses implement ``support`` and ``descriptor``."""

    dim: int | None = None

    def support(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    def _check_dim(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.ndim != 1:
            raise DomainError(f"expected a vector, got shape {v.shape}")
        if self.dim is not None and v.shape[0] != self.dim:
            raise DomainError(f"vector of length {v.shape[0]} against a set of dimension {self.dim}")
        return v

    def __eq__(self, other):
        return type(self) is type(other) and self.descriptor() == other.descriptor()

    def __hash__(self):
        return hash(repr(self.descriptor()))


@dataclass(frozen=True, eq=False)
class Degenerate(UncertaintySet):
    """The singleton ``{0}``: no perturbation, recovers the nominal model."""

    dim: int | None = None

    def support(self, v):
        v = self._check_dim(v)
        return 0.0, np.zeros_like(v)

    def contains(self, x, tol=1e-9):
        return bool(np.all(np.abs(x) <= tol))

    def descriptor(self):
        d = {"kind": "degenerate"}
        if self.dim is not None:
            d["dim"] = self.dim
        return d


class FiniteVertices(UncertaintySet):
    """A finite list of zero-sum perturbation vectors (rows of ``vertices``)."""

    def __init__(self, vertices):
        vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
        if vertices.size == 0:
            raise DomainError("FiniteVertices needs at least one vertex")
        sums = np.abs(vertices.sum(axis=1))
        if np.any(sums > _ZERO_SUM_TOL):
            bad = int(np.argmax(sums))
            raise DomainError(f"vertex {bad} sums to {vertices[bad].sum():.3e}, not 0")
        vertices.setflags(write=False)
        self.vertices = vertices
        self.dim = vertices.shape[1]

    def __repr__(self):
        return f"FiniteVertices(n={len(self.vertices)}, dim={self.dim})"

    def support(self, v):
        v = self._check_dim(v)
        scores = self.vertices @ v
        k = int(np.argmin(scores))
        return float(scores[k]), self.vertices[k].copy()

    def contains(self, x, tol=1e-9):
        return bool(np.any(np.max(np.abs(self.vertices - x), axis=1) <= tol))

    def valid_for(self, nominal, tol=1e-12) -> bool:
        """True when ``nominal + u`` is a probability vector for every vertex."""
        rows = np.asarray(nominal)[None, :] + self.vertices
        return bool(np.all(rows >= -tol) and np.all(np.abs(rows.sum(axis=1) - 1.0) <= tol))

    def descriptor(self):
        return {"kind": "finite", "vertices": self.vertices.tolist()}


@dataclass(frozen=True, eq=False)
class CenteredSphere(UncertaintySet):
    """``{x : ||x||_2 <= radius}``, optionally intersected with ``sum(x) = 0``.

    This is the model-free set: it does not know the nominal row, so
    ``p0 + x`` need not be a probability vector.
    """

    radius: float
    dim: int | None = None
    sum_zero: bool = True

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"sphere radius must be positive, got {self.radius}")

    def support(self, v):
        v = self._check_dim(v)
        c = v - v.mean() if self.sum_zero else v
        n = float(np.linalg.norm(c))
        if n == 0.0:
            return 0.0, np.zeros_like(v)
        return -self.radius * n, -self.radius * c / n

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        ok = np.linalg.norm(x) <= self.radius + tol
        if self.sum_zero:
            ok = ok and abs(x.sum()) <= tol
        return bool(ok)

    def gram_factor(self, n: int) -> np.ndarray:
        """Matrix ``M`` with ``sigma(v) = -radius * sqrt(v @ M @ v)``."""
        if self.sum_zero:
            return np.eye(n) - np.full((n, n), 1.0 / n)
        return np.eye(n)

    def descriptor(self):
        d = {"kind": "centered_sphere", "radius": float(self.radius), "sum_zero": bool(self.sum_zero)}
        if self.dim is not None:
            d["dim"] = self.dim
        return d


class SimplexSphere(UncertaintySet):
    """Sphere of radius ``radius`` intersected with the perturbations that keep
    ``nominal + x`` a probability vector."""

    def __init__(self, radius: float, nominal):
        if not radius > 0:
            raise DomainError(f"sphere radius must be positive, got {radius}")
        nominal = np.asarray(nominal, dtype=float)
        if np.any(nominal < -1e-12) or abs(nominal.sum() - 1.0) > 1e-12:
            raise DomainError("nominal row must be a probability vector")
        nominal = np.clip(nominal, 0.0, 1.0)
        nominal.setflags(write=False)
        self.radius = float(radius)
        self.nominal = nominal
        self.dim = nominal.shape[0]
        self.lower = -nominal
        self.upper = 1.0 - nominal

    def __repr__(self):
        return f"SimplexSphere(radius={self.radius}, dim={self.dim})"

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(
            np.linalg.norm(x) <= self.radius + tol
            and abs(x.sum()) <= tol
            and np.all(x >= self.lower - tol)
            and np.all(x <= self.upper + tol)
        )

    def descriptor(self):
        return {"kind": "simplex_sphere", "radius": self.radius, "nominal": self.nominal.tolist()}

    def support(self, v):
        v = self._check_dim(v)
        x = self._solve(v)
        return float(x @ v), x

    def _clip(self, v, t, mu):
        return np.clip(-t * (v + mu), self.lower, self.upper)

    def _balance(self, v, t):
        # sum(clip(-t (v + mu))) is nonincreasing in mu; find its zero
        if t <= 0.0:
            return np.zeros_like(v)
        g = lambda mu: float(self._clip(v, t, mu).sum())
        lo, hi = -v.max() - 1.0 / t, -v.min() + 1.0 / t
        while g(lo) < 0:
            lo -= 2.0 * (hi - lo)
        while g(hi) > 0:
            hi += 2.0 * (hi - lo)
        mu = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        x = self._clip(v, t, mu)
        return _fix_sum(x, self.lower, self.upper)

    def _solve(self, v):
        # KKT: x_i = clip(-(v_i + mu) t, lower_i, upper_i) with t = 1/nu the ball
        # multiplier inverse and mu the hyperplane multiplier.
        centred = v - v.mean()
        if np.linalg.norm(centred) <= 1e-15 * max(1.0, np.abs(v).max()):
            return np.zeros_like(v)
        # ball inactive: the LP optimum moves all mass to the worst successor
        j = int(np.argmin(v))
        lp = self.lower.copy()
        lp[j] += 1.0
        if np.linalg.norm(lp) <= self.radius:
            return lp
        norm_at = lambda t: float(np.linalg.norm(self._balance(v, t)))
        t_lo, t_hi = 0.0, 1.0 / np.linalg.norm(centred) * self.radius
        for _ in range(200):
            if norm_at(t_hi) >= self.radius:
                break
            t_lo, t_hi = t_hi, 2.0 * t_hi
        else:
            # tied minima: the LP optimum spread over the ties fits in the ball
            return self._balance(v, t_hi)
        t = brentq(lambda s: norm_at(s) - self.radius, t_lo, t_hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
        x = self._balance(v, t)
        n = np.linalg.norm(x)
        if n > self.radius:
            # shrinking toward 0 stays inside the box and the hyperplane
            x = x * (self.radius / n)
        return x


def _fix_sum(x, lower, upper):
    """Remove residual rounding from ``sum(x)`` using coordinates with slack."""
    excess = x.sum()
    if excess == 0.0:
        return x
    x = x.copy()
    slack = (x - lower) if excess > 0 else (upper - x)
    free = slack > 1e-15
    if np.any(free):
        x[free] -= excess * slack[free] / slack[free].sum()
    return x


def support_inf(uset: UncertaintySet, v) -> tuple[float, np.ndarray]:
    """Return ``(inf_{u in uset} u @ v, minimizer)``."""
    return uset.support(v)


def support_inf_gram(gram, w, r: float, strict_compat: bool = False) -> float:
    """Closed-form support value of a sphere evaluated through a Gram matrix.

    Returns ``-sqrt(r * w' gram w)``, the infimum of ``u @ (Phi w)`` over
    ``{||u|| <= sqrt(r)}`` when ``gram = Phi' Phi``.  With ``strict_compat`` the
    positive root is returned instead, for comparison against code that uses
    that sign convention.
    """
    w = np.asarray(w, dtype=float)
    q = float(w @ np.asarray(gram) @ w)
    scale = max(1.0, float(np.abs(gram).max()) * float(w @ w))
    if q < -1e-10 * scale:
        raise NumericError(f"negative quadratic form {q:.3e}: gram matrix is not PSD")
    value = float(np.sqrt(max(r * q, 0.0)))
    return value if strict_compat else -value


def _vertex_set(uset: UncertaintySet, dim: int) -> np.ndarray:
    if isinstance(uset, FiniteVertices):
        return uset.vertices
    if isinstance(uset, Degenerate):
        return np.zeros((1, dim))
    raise UnsupportedVariantError(f"{type(uset).__name__} has no finite vertex representation")


def _difference(a: np.ndarray, b: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Rows of ``a`` that do not appear in ``b``."""
    keep = [not np.any(np.max(np.abs(b - row), axis=1) <= tol) for row in a]
    return a[np.asarray(keep, dtype=bool)]


def set_distance_rho(exact: UncertaintySet, approx: UncertaintySet, d) -> float:
    """Worst normalized d-norm distance between two finite perturbation sets.

    ``max(max_{x in approx, y in exact \\ approx} ||x - y||_d,
    max_{x in exact, y in approx \\ exact} ||x - y||_d) / min(d)``; an empty
    set difference contributes 0, so identical sets give 0.
    """
    d = np.asarray(d, dtype=float)
    dim = d.shape[0]
    U = _vertex_set(exact, dim)
    W = _vertex_set(approx, dim)
    if U.shape[1] != dim or W.shape[1] != dim:
        raise DomainError("set dimension does not match the weight vector")
    d_min = float(d.min())
    best = 0.0
    for xs, ys in ((W, _difference(U, W)), (U, _difference(W, U))):
        if len(ys) == 0:
            continue
        diff = xs[:, None, :] - ys[None, :, :]
        best = max(best, float(np.sqrt(np.max(np.einsum("ijk,k,ijk->ij", diff, d, diff)))))
    return best / d_min


@dataclass(frozen=True)
class ContractionInputs:
    alpha: float
    beta: float
    rho: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if not (0 < self.alpha < 1 and 0 < self.beta < 1):
            raise DomainError(f"alpha and beta must lie in (0, 1), got {self.alpha}, {self.beta}")
        if self.rho < 0:
            raise DomainError(f"rho must be nonnegative, got {self.rho}")
        if not 0 <= self.lam < 1:
            raise DomainError(f"lambda must lie in [0, 1), got {self.lam}")


class Contraction(NamedTuple):
    value: float
    contracts: bool


def contraction_coefficient(inputs: ContractionInputs) -> Contraction:
    a, b, r, lam = inputs.alpha, inputs.beta, inputs.rho, inputs.lam
    c = (b * (2.0 - lam) + r * a) / (1.0 - b * lam)
    return Contraction(c, c < 1.0)


def set_from_descriptor(desc: dict, nominal=None) -> UncertaintySet:
    """Build a set from its JSON descriptor (see ``UncertaintySet.descriptor``)."""
    kind = desc.get("kind")
    if kind == "degenerate":
        return Degenerate(desc.get("dim"))
    if kind == "finite":
        return FiniteVertices(desc["vertices"])
    if kind == "centered_sphere":
        return CenteredSphere(float(desc["radius"]), desc.get("dim"), bool(desc.get("sum_zero", True)))
    if kind == "simplex_sphere":
        row = desc.get("nominal", nominal)
        if row is None:
            raise DomainError("simplex_sphere descriptor needs a nominal row")
        return SimplexSphere(float(desc["radius"]), row)
    raise UnsupportedVariantError(f"unknown uncertainty-set kind {kind!r}")
