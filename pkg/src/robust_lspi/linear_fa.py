"""Model-based linear approximation of robust policy evaluation.

Everything here uses the nominal model, so it is exact and serves as the
reference for the sample-based learner: stationary distributions, the
d-weighted projection, the approximate robust TD(lambda) operator in closed
form, and the projected fixed point ``Phi w = Pi T~ Phi w``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.sparse.csgraph import connected_components

from .errors import (
    AssumptionViolation,
    DomainError,
    NonContractionError,
    NonConvergenceError,
    RankError,
    SolverError,
    UnsupportedVariantError,
)
from .features import FeatureMatrix
from .rmdp import SetBinding, TabularRmdp, as_policy, bind_sets
from .uncertainty import (
    ContractionInputs,
    Degenerate,
    FiniteVertices,
    contraction_coefficient,
    set_distance_rho,
)

POSITIVE_MASS = 1e-9
DIVERGENCE = 1e12


@dataclass(frozen=True)
class SteadyDistribution:
    d: np.ndarray
    d_min: float

    def __len__(self):
        return len(self.d)


def steady_state(P, method: str = "solve", tol: float = 1e-12, max_iters: int = 1_000_000) -> SteadyDistribution:
    """Stationary distribution of an irreducible row-stochastic matrix.

    ``method="solve"`` solves ``d' (P - I) = 0, sum(d) = 1`` directly;
    ``method="power"`` iterates the lazy chain ``(I + P) / 2`` from the
    uniform vector until successive iterates differ by less than ``tol`` in
    L1.  A reducible chain raises ``AssumptionViolation`` naming a state that
    cannot carry stationary mass.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n):
        raise DomainError("transition matrix must be square")
    if np.any(P < -1e-12) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
        raise DomainError("transition matrix must be row-stochastic")
    n_comp, labels = connected_components(P > 0, directed=True, connection="strong")
    if n_comp > 1:
        # a closed class holds all stationary mass; anything outside it has none
        closed = [c for c in range(n_comp) if not np.any(P[np.ix_(labels == c, labels != c)] > 0)]
        outside = np.flatnonzero(labels != closed[0])
        raise AssumptionViolation(
            f"chain is not irreducible ({n_comp} communicating classes); state {int(outside[0])} gets no stationary mass"
        )
    if method == "solve":
        M = P.T - np.eye(n)
        M[-1, :] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        try:
            d = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"stationary system is singular: {exc}") from exc
    elif method == "power":
        lazy = 0.5 * (np.eye(n) + P)
        d = np.full(n, 1.0 / n)
        for _ in range(max_iters):
            nxt = d @ lazy
            if np.abs(nxt - d).sum() < tol:
                d = nxt
                break
            d = nxt
        else:
            raise NonConvergenceError("power iteration for the stationary distribution", float(np.abs(nxt - d).sum()), max_iters)
    else:
        raise DomainError(f"unknown method {method!r}")
    d = d / d.sum()
    low = int(np.argmin(d))
    if d[low] <= POSITIVE_MASS:
        raise AssumptionViolation(f"state {low} has stationary mass {d[low]:.3e}")
    return SteadyDistribution(d, float(d[low]))


def d_norm(V, d) -> float:
    V = np.asarray(V, dtype=float)
    return float(np.sqrt(np.sum(_dvec(d) * V * V)))


def _dvec(d) -> np.ndarray:
    return np.asarray(getattr(d, "d", d), dtype=float)


def _weighted_factor(fm: FeatureMatrix, d):
    d = _dvec(d)
    G = fm.phi.T @ (d[:, None] * fm.phi)
    try:
        return cho_factor(G), d
    except LinAlgError as exc:
        raise RankError("weighted Gram matrix is singular") from exc


def project(fm: FeatureMatrix, d, V) -> np.ndarray:
    """d-weighted least-squares projection of ``V`` onto the span of ``Phi``."""
    factor, d = _weighted_factor(fm, d)
    V = np.asarray(V, dtype=float)
    if V.shape[0] != fm.phi.shape[0]:
        raise DomainError("value vector and feature matrix disagree in length")
    return fm.phi @ cho_solve(factor, fm.phi.T @ (d * V))


def _resolvent(rmdp: TabularRmdp, policy, lam: float):
    P = rmdp.policy_kernel(policy)
    return P, np.eye(rmdp.n_states) - rmdp.discount * lam * P


def _solve(M, X):
    try:
        Y = np.linalg.solve(M, X)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"resolvent system is singular: {exc}") from exc
    if not np.all(np.isfinite(Y)):
        raise SolverError("resolvent solve produced non-finite values")
    return Y


def approx_robust_td_apply(rmdp: TabularRmdp, policy, sets_hat, V, lam: float) -> np.ndarray:
    """Approximate robust TD(lambda) operator in closed form.

    ``M (r + a sigma_hat(V)) + a (1 - lam) P M V`` with ``M = (I - a lam P)^-1``;
    the uncertainty term is evaluated once at ``V`` instead of inside each
    multi-step composition.
    """
    if not 0.0 <= lam < 1.0:
        raise DomainError(f"lambda must lie in [0, 1), got {lam}")
    policy = as_policy(policy, rmdp.n_states, rmdp.n_actions)
    binding = bind_sets(sets_hat if sets_hat is not None else rmdp.binding, rmdp.n_states, rmdp.n_actions)
    V = np.asarray(V, dtype=float)
    a = rmdp.discount
    P, M = _resolvent(rmdp, policy, lam)
    rhs = np.column_stack([rmdp.policy_reward(policy) + a * binding.sigma_policy(policy, V), V])
    X = _solve(M, rhs)
    return X[:, 0] + a * (1.0 - lam) * (P @ X[:, 1])


@dataclass(frozen=True)
class ProjectedSystem:
    """Matrices of the projected equation ``A w + C(w) + b = 0``.

    ``C(w) = K @ sigma_hat(Phi w)`` with ``K = a Phi' D M``.
    """

    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    K: np.ndarray
    phi: np.ndarray
    d: np.ndarray
    policy: np.ndarray
    binding: SetBinding

    def C(self, w) -> np.ndarray:
        return self.K @ self.binding.sigma_policy(self.policy, self.phi @ w)


def projected_system(rmdp: TabularRmdp, policy, sets_hat, fm: FeatureMatrix, d, lam: float) -> ProjectedSystem:
    if not 0.0 <= lam < 1.0:
        raise DomainError(f"lambda must lie in [0, 1), got {lam}")
    policy = as_policy(policy, rmdp.n_states, rmdp.n_actions)
    binding = bind_sets(sets_hat if sets_hat is not None else rmdp.binding, rmdp.n_states, rmdp.n_actions)
    d = _dvec(d)
    phi = fm.phi
    if phi.shape[0] != rmdp.n_states:
        raise DomainError("feature matrix rows must match the number of states")
    a = rmdp.discount
    P, M = _resolvent(rmdp, policy, lam)
    PhiD = phi.T * d
    MX = _solve(M, np.column_stack([phi, rmdp.policy_reward(policy)]))
    M_phi, M_r = MX[:, :-1], MX[:, -1]
    A = PhiD @ (a * (P @ M_phi) - M_phi)
    B = PhiD @ phi
    b = PhiD @ M_r
    # K = a Phi' D M, i.e. a (M' D Phi)'
    K = a * _solve(M.T, PhiD.T).T
    return ProjectedSystem(A, B, b, K, phi, d, policy, binding)


def lstd_solution(system: ProjectedSystem) -> np.ndarray:
    """Non-robust solution ``-A^{-1} b`` of the projected equation."""
    return _solve(system.A, -system.b)


def exact_projected_fixed_point(
    rmdp: TabularRmdp,
    policy,
    sets_hat,
    fm: FeatureMatrix,
    d,
    lam: float,
    tol: float = 1e-12,
    max_iters: int = 200_000,
    contraction: ContractionInputs | None = None,
    force: bool = False,
    w0=None,
):
    """Iterate ``w <- w + B^-1 (A w + C(w) + b)`` to its fixed point.

    ``contraction`` (optional) is checked first; a coefficient >= 1 raises
    ``NonContractionError`` unless ``force`` is set.  A run whose iterates blow
    past 1e12 is retried once with step scale 0.5.
    """
    if contraction is not None and not force and not contraction_coefficient(contraction).contracts:
        raise NonContractionError(f"contraction coefficient {contraction_coefficient(contraction).value:.4f} >= 1")
    system = projected_system(rmdp, policy, sets_hat, fm, d, lam)
    try:
        factor = cho_factor(system.B)
    except LinAlgError as exc:
        raise RankError("B = Phi' D Phi is singular") from exc
    start = np.zeros(fm.n_features) if w0 is None else np.asarray(w0, dtype=float)
    last = None
    for scale in (1.0, 0.5):
        w = start.copy()
        for k in range(max_iters):
            step = scale * cho_solve(factor, system.A @ w + system.C(w) + system.b)
            w = w + step
            if not np.all(np.isfinite(w)) or np.linalg.norm(w) > DIVERGENCE:
                last = k
                break
            if d_norm(fm.phi @ step, system.d) <= tol:
                return w
        else:
            raise NonConvergenceError("projected fixed-point iteration", d_norm(fm.phi @ step, system.d), max_iters)
    raise NonContractionError(f"projected iteration diverged (iteration {last}) even with step scale 0.5")


def projected_operator(rmdp: TabularRmdp, policy, sets_hat, fm: FeatureMatrix, d, lam: float):
    """Callable ``V -> Pi T~(lambda) V``."""
    return lambda V: project(fm, d, approx_robust_td_apply(rmdp, policy, sets_hat, V, lam))


class ExplorationCheck(NamedTuple):
    feasible: bool
    beta: float


def _vertices(u, n):
    if isinstance(u, FiniteVertices):
        return u.vertices
    if isinstance(u, Degenerate):
        return np.zeros((1, n))
    raise UnsupportedVariantError(f"exploration check needs finite sets, got {type(u).__name__}")


def verify_exploration_assumption(rmdp: TabularRmdp, policy, policy_e) -> ExplorationCheck:
    """Smallest ``beta`` with ``a (P0 + u)[s, pi(s)] <= beta P0[s, pi_e(s)]`` entrywise.

    The maximum runs over states, successors and vertices of each bound set.
    A positive numerator over a zero denominator makes the check infeasible
    with ``beta = inf``.
    """
    S = rmdp.n_states
    policy = as_policy(policy, S, rmdp.n_actions)
    policy_e = as_policy(policy_e, S, rmdp.n_actions)
    beta = 0.0
    for s in range(S):
        rows = rmdp.kernel[s, policy[s]] + _vertices(rmdp.binding.set_for(s, policy[s]), S)
        num = rmdp.discount * np.clip(rows, 0.0, None)
        den = rmdp.kernel[s, policy_e[s]]
        pos = num > 1e-15
        if np.any(pos & (den[None, :] <= 0.0)):
            return ExplorationCheck(False, float("inf"))
        if np.any(pos):
            beta = max(beta, float(np.max(num[pos] / np.broadcast_to(den, num.shape)[pos])))
    return ExplorationCheck(beta < 1.0, beta)


def binding_rho(exact: TabularRmdp | SetBinding, approx, d) -> float:
    """``max_{s,a} rho(U[s, a], U_hat[s, a])`` over finite sets."""
    ex = exact.binding if isinstance(exact, TabularRmdp) else exact
    S, A = ex.index.shape
    ap = bind_sets(approx, S, A)
    d = _dvec(d)
    return max(set_distance_rho(ex.set_for(s, a), ap.set_for(s, a), d) for s in range(S) for a in range(A))


def error_bound(V_pi, fm: FeatureMatrix, d, inputs: ContractionInputs) -> float:
    """Right-hand side of the approximation error bound for ``||V_pi - Phi w_pi||_d``.

    ``(||V - Pi V||_d + beta rho ||V||_d / (1 - beta lam)) / (1 - c)``;
    infinite when ``c >= 1``.
    """
    c = contraction_coefficient(inputs)
    if not c.contracts:
        return float("inf")
    V_pi = np.asarray(V_pi, dtype=float)
    resid = d_norm(V_pi - project(fm, d, V_pi), d)
    mismatch = inputs.beta * inputs.rho * d_norm(V_pi, d) / (1.0 - inputs.beta * inputs.lam)
    return (resid + mismatch) / (1.0 - c.value)
