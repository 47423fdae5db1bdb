"""Online robust least-squares policy evaluation, RLSPE(lambda).

The learner keeps running sums of the least-squares statistics

    A = sum_t z_t (a phi'_t - phi_t)',  B = sum_t phi_t phi_t',  b = sum_t z_t r_t

and, per uncertainty set ``u``, the sum of eligibility traces of the steps
whose state-action pair is bound to ``u``.  The robust correction at any
weight vector is then ``a * sum_u trace_u * sigma_u(w)``, so the trajectory
never has to be stored.  All averages share the 1/(t+1) factor, which cancels
in the update

    w <- w + gamma_t (B + delta I)^-1 (A w + b + C(w)).

``(B + delta I)^-1`` is maintained by rank-one updates and refreshed by a
full inverse every ``REFRESH`` steps.  The per-step work runs in a numba
kernel; ``observe``/``learner_step`` call the same compiled code as
``run_to_convergence``, so both routes give bit-identical iterates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np
from numba import njit

from .errors import ConfigError, DomainError, NumericError, UnsupportedVariantError
from .uncertainty import CenteredSphere, Degenerate, FiniteVertices, UncertaintySet

REFRESH = 1024
_DEGENERATE, _SPHERE, _FINITE = 0, 1, 2


@dataclass(frozen=True)
class PowerLaw:
    """``gamma_t = gamma0 / (t0 + t)^kappa``."""

    gamma0: float = 1.0
    t0: float = 10.0
    kappa: float = 0.75

    def __post_init__(self):
        if not 0.5 < self.kappa <= 1.0:
            raise DomainError(f"kappa must lie in (0.5, 1], got {self.kappa}")
        if self.gamma0 < 0 or self.t0 <= 0:
            raise DomainError("need gamma0 >= 0 and t0 > 0")

    def __call__(self, t) -> float:
        return self.gamma0 / (self.t0 + t) ** self.kappa


class SetEvaluator:
    """Evaluates ``sigma_u(Phi_v w)`` for every set ``u`` directly from ``w``.

    ``value_features`` is the matrix ``Phi_v`` whose rows give the value
    vector the sets act on.  Spheres become ``-radius * sqrt(w' G w)`` with a
    precomputed ``G``; finite sets become a minimum over the rows of
    ``vertices @ Phi_v``.  ``strict_compat`` flips the sphere sign to the
    positive square root.
    """

    def __init__(self, sets, value_features, strict_compat: bool = False):
        sets = tuple(sets)
        phi_v = np.asarray(value_features, dtype=float)
        if phi_v.ndim != 2:
            raise DomainError("value features must be a matrix")
        n, L = phi_v.shape
        self.sets = sets
        self.value_features = phi_v
        self.strict_compat = bool(strict_compat)
        self.kinds = np.zeros(len(sets), dtype=np.int64)
        self.radius = np.zeros(len(sets))
        self.grams = np.zeros((len(sets), L, L))
        rows, ptr = [], [0]
        for k, u in enumerate(sets):
            if not isinstance(u, UncertaintySet):
                raise ConfigError(f"set {k} is not an uncertainty set")
            if u.dim is not None and u.dim != n:
                raise DomainError(f"set {k} has dimension {u.dim}, value features have {n} rows")
            if isinstance(u, Degenerate):
                self.kinds[k] = _DEGENERATE
            elif isinstance(u, CenteredSphere):
                self.kinds[k] = _SPHERE
                self.radius[k] = u.radius
                self.grams[k] = phi_v.T @ u.gram_factor(n) @ phi_v
            elif isinstance(u, FiniteVertices):
                self.kinds[k] = _FINITE
                rows.append(u.vertices @ phi_v)
            else:
                raise UnsupportedVariantError(
                    f"{type(u).__name__} needs the nominal model; use finite or centered-sphere sets in the learner"
                )
            ptr.append(ptr[-1] + (len(rows[-1]) if self.kinds[k] == _FINITE else 0))
        self.fin_rows = np.vstack(rows) if rows else np.zeros((0, L))
        self.fin_ptr = np.asarray(ptr, dtype=np.int64)
        self.sign = 1.0 if strict_compat else -1.0

    @property
    def n_sets(self) -> int:
        return len(self.sets)

    @property
    def n_features(self) -> int:
        return self.value_features.shape[1]

    def sigma_all(self, w) -> np.ndarray:
        out = np.zeros(self.n_sets)
        _sigma(np.asarray(w, dtype=float), self.kinds, self.radius, self.grams, self.fin_rows, self.fin_ptr, self.sign, out)
        return out

    def sigma(self, k: int, w) -> float:
        return float(self.sigma_all(w)[k])

    def _arrays(self):
        return self.kinds, self.radius, self.grams, self.fin_rows, self.fin_ptr, self.sign


def degenerate_evaluator(L: int, n_sets: int = 1) -> SetEvaluator:
    return SetEvaluator([Degenerate()] * n_sets, np.zeros((1, L)))


@dataclass
class TransitionSample:
    phi_now: np.ndarray
    reward: float
    phi_next: np.ndarray
    set_id: int = 0
    episode_start: bool = False
    s: object = None
    a: object = None
    s_next: object = None


@dataclass
class SampleBlock:
    """A batch of transitions stored as row indices into a feature table.

    Row ``i`` uses ``table[idx[i]]`` as the current feature and
    ``table[idx_next[i]]`` as the successor feature (``-1`` means zero, for
    terminal successors).
    """

    table: np.ndarray
    idx: np.ndarray
    idx_next: np.ndarray
    reward: np.ndarray
    set_id: np.ndarray
    episode_start: np.ndarray
    s: np.ndarray | None = None
    a: np.ndarray | None = None
    s_next: np.ndarray | None = None

    def __post_init__(self):
        self.table = np.ascontiguousarray(self.table, dtype=float)
        self.idx = np.ascontiguousarray(self.idx, dtype=np.int64)
        self.idx_next = np.ascontiguousarray(self.idx_next, dtype=np.int64)
        self.reward = np.ascontiguousarray(self.reward, dtype=float)
        self.set_id = np.ascontiguousarray(self.set_id, dtype=np.int64)
        self.episode_start = np.ascontiguousarray(self.episode_start, dtype=np.bool_)
        n = len(self.idx)
        if not (len(self.idx_next) == len(self.reward) == len(self.set_id) == len(self.episode_start) == n):
            raise DomainError("sample block columns have different lengths")
        if n and (self.idx.min() < 0 or max(self.idx.max(), self.idx_next.max()) >= len(self.table)):
            raise DomainError("sample block refers to rows outside its feature table")

    def __len__(self):
        return len(self.idx)

    @classmethod
    def from_samples(cls, samples) -> "SampleBlock":
        samples = list(samples)
        if not samples:
            raise DomainError("empty sample list")
        n = len(samples)
        table = np.vstack([np.stack([x.phi_now for x in samples]), np.stack([x.phi_next for x in samples])])
        return cls(
            table,
            np.arange(n),
            np.arange(n, 2 * n),
            np.array([x.reward for x in samples], dtype=float),
            np.array([x.set_id for x in samples], dtype=np.int64),
            np.array([x.episode_start for x in samples], dtype=np.bool_),
            _column(samples, "s"),
            _column(samples, "a"),
            _column(samples, "s_next"),
        )

    def phi(self, i) -> np.ndarray:
        return self.table[self.idx[i]]

    def phi_next(self, i) -> np.ndarray:
        j = self.idx_next[i]
        return self.table[j] if j >= 0 else np.zeros(self.table.shape[1])

    def slice(self, lo, hi) -> "SampleBlock":
        pick = lambda x: None if x is None else x[lo:hi]
        return SampleBlock(
            self.table, self.idx[lo:hi], self.idx_next[lo:hi], self.reward[lo:hi], self.set_id[lo:hi],
            self.episode_start[lo:hi], pick(self.s), pick(self.a), pick(self.s_next),
        )

    def to_csv(self, path) -> None:
        """Transition log with columns ``t, s, a, r, s', set_id``."""
        with open(path, "w") as fh:
            fh.write("t,s,a,r,s_next,set_id\n")
            for i in range(len(self)):
                s = "" if self.s is None else repr(self.s[i])
                a = "" if self.a is None else repr(self.a[i])
                s2 = "" if self.s_next is None else repr(self.s_next[i])
                fh.write(f"{i},{s},{a},{self.reward[i]!r},{s2},{self.set_id[i]}\n")


def _column(samples, name):
    vals = [getattr(x, name) for x in samples]
    if any(v is None for v in vals):
        return None
    return np.array(vals)


@dataclass
class LearnerState:
    """Mutable accumulators of one learning run; owned by a single caller."""

    w: np.ndarray
    z: np.ndarray
    A_acc: np.ndarray
    B_acc: np.ndarray
    b_acc: np.ndarray
    trace_by_set: np.ndarray
    alpha: float
    lam: float
    schedule: PowerLaw
    ridge: float
    t: int = 0
    B_inv: np.ndarray = field(default=None, repr=False)
    since_refresh: int = 0

    @property
    def n_features(self) -> int:
        return self.w.shape[0]

    def copy(self) -> "LearnerState":
        return LearnerState(
            self.w.copy(), self.z.copy(), self.A_acc.copy(), self.B_acc.copy(), self.b_acc.copy(),
            self.trace_by_set.copy(), self.alpha, self.lam, self.schedule, self.ridge, self.t,
            self.B_inv.copy(), self.since_refresh,
        )

    def statistics(self):
        """Averaged ``(A_t, B_t, b_t)`` over the ``t`` samples seen."""
        n = max(self.t, 1)
        return self.A_acc / n, self.B_acc / n, self.b_acc / n


def learner_init(L: int, w0=None, lam: float = 0.0, alpha: float = 0.9, schedule: PowerLaw | None = None,
                 ridge: float | None = None, n_sets: int = 1) -> LearnerState:
    if not 0.0 <= lam < 1.0:
        raise DomainError(f"lambda must lie in [0, 1), got {lam}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    ridge = 1e-6 * L if ridge is None else float(ridge)
    if not ridge > 0:
        raise DomainError("ridge must be positive so the inverse exists from the first step")
    w = np.zeros(L) if w0 is None else np.array(w0, dtype=float)
    if w.shape != (L,):
        raise DomainError(f"w0 must have length {L}")
    return LearnerState(
        w=w,
        z=np.zeros(L),
        A_acc=np.zeros((L, L)),
        B_acc=np.zeros((L, L)),
        b_acc=np.zeros(L),
        trace_by_set=np.zeros((n_sets, L)),
        alpha=float(alpha),
        lam=float(lam),
        schedule=PowerLaw() if schedule is None else schedule,
        ridge=ridge,
        B_inv=np.eye(L) / ridge,
    )


@njit(cache=True)
def _sigma(w, kinds, radius, grams, fin_rows, fin_ptr, sign, out):
    L = w.shape[0]
    for k in range(kinds.shape[0]):
        kind = kinds[k]
        if kind == 1:
            q = 0.0
            for i in range(L):
                gi = 0.0
                for j in range(L):
                    gi += grams[k, i, j] * w[j]
                q += w[i] * gi
            out[k] = sign * radius[k] * np.sqrt(max(q, 0.0))
        elif kind == 2:
            best = np.inf
            for r in range(fin_ptr[k], fin_ptr[k + 1]):
                v = 0.0
                for j in range(L):
                    v += fin_rows[r, j] * w[j]
                if v < best:
                    best = v
            out[k] = best
        else:
            out[k] = 0.0


@njit(cache=True)
def _gamma(g0, t0, kappa, t):
    return g0 / (t0 + t) ** kappa


@njit(cache=True)
def _refresh(B, ridge, Binv):
    Binv[:, :] = np.linalg.inv(B + ridge * np.eye(B.shape[0]))


@njit(cache=True)
def _observe(z, A, B, b, T, Binv, alpha, lam, phi, phi_next, reward, sid, start):
    L = z.shape[0]
    decay = alpha * lam
    for i in range(L):
        z[i] = (0.0 if start else decay * z[i]) + phi[i]
    for i in range(L):
        zi = z[i]
        pi = phi[i]
        for j in range(L):
            A[i, j] += zi * (alpha * phi_next[j] - phi[j])
            B[i, j] += pi * phi[j]
        b[i] += zi * reward
        T[sid, i] += zi
    # Sherman-Morrison for (B + ridge I)^-1
    u = Binv @ phi
    denom = 1.0 + phi @ u
    for i in range(L):
        for j in range(L):
            Binv[i, j] -= u[i] * u[j] / denom


@njit(cache=True)
def _direction(w, A, b, T, Binv, alpha, kinds, radius, grams, fin_rows, fin_ptr, sign, sig):
    _sigma(w, kinds, radius, grams, fin_rows, fin_ptr, sign, sig)
    rhs = A @ w + b + alpha * (T.T @ sig)
    return Binv @ rhs


@njit(cache=True)
def _run(w, z, A, B, b, T, Binv, counters, alpha, lam, ridge, g0, t0, kappa,
         table, idx, idx_next, reward, set_id, start, eps0, min_steps, check,
         kinds, radius, grams, fin_rows, fin_ptr, sign, refresh):
    """Observe + step over a block; stop early when the step norm < eps0.

    ``counters = [t, since_refresh]`` is updated in place.  Returns
    ``(consumed, converged, last_step_norm)``.
    """
    L = w.shape[0]
    zero = np.zeros(L)
    sig = np.zeros(kinds.shape[0])
    last = np.inf
    for i in range(idx.shape[0]):
        nxt = table[idx_next[i]] if idx_next[i] >= 0 else zero
        _observe(z, A, B, b, T, Binv, alpha, lam, table[idx[i]], nxt, reward[i], set_id[i], start[i])
        counters[0] += 1
        counters[1] += 1
        if counters[1] >= refresh:
            _refresh(B, ridge, Binv)
            counters[1] = 0
        gamma = _gamma(g0, t0, kappa, counters[0] - 1)
        x = _direction(w, A, b, T, Binv, alpha, kinds, radius, grams, fin_rows, fin_ptr, sign, sig)
        s2 = 0.0
        for j in range(L):
            dw = gamma * x[j]
            w[j] += dw
            s2 += dw * dw
        last = np.sqrt(s2)
        if not np.isfinite(last):
            return i + 1, False, last
        if check and counters[0] >= min_steps and last < eps0:
            return i + 1, True, last
    return idx.shape[0], False, last


def _check_sets(state: LearnerState, sets: SetEvaluator, block: SampleBlock | None = None):
    if sets.n_features != state.n_features:
        raise ConfigError(f"set evaluator has {sets.n_features} features, learner has {state.n_features}")
    used = state.trace_by_set.shape[0] if block is None else int(block.set_id.max(initial=-1)) + 1
    if block is not None and (block.set_id.min(initial=0) < 0 or used > state.trace_by_set.shape[0]):
        raise ConfigError(f"sample set id outside the learner's {state.trace_by_set.shape[0]} trace slots")
    if sets.n_sets < state.trace_by_set.shape[0] and np.any(state.trace_by_set[sets.n_sets:] != 0.0):
        raise ConfigError("a set identifier in the trace has no uncertainty set attached")


def _drive(state: LearnerState, block: SampleBlock, sets: SetEvaluator, eps0: float, min_steps: int, check: bool):
    _check_sets(state, sets, block)
    counters = np.array([state.t, state.since_refresh], dtype=np.int64)
    sc = state.schedule
    out = _run(
        state.w, state.z, state.A_acc, state.B_acc, state.b_acc, state.trace_by_set, state.B_inv, counters,
        state.alpha, state.lam, state.ridge, float(sc.gamma0), float(sc.t0), float(sc.kappa),
        block.table, block.idx, block.idx_next, block.reward, block.set_id, block.episode_start,
        float(eps0), int(min_steps), bool(check), *sets._arrays(), REFRESH,
    )
    state.t, state.since_refresh = int(counters[0]), int(counters[1])
    consumed, converged, last = int(out[0]), bool(out[1]), float(out[2])
    if not np.all(np.isfinite(state.w)):
        raise NumericError(f"learner weights became non-finite at step {state.t}")
    return consumed, converged, last


def observe(state: LearnerState, sample: TransitionSample) -> LearnerState:
    """Fold one transition into the accumulators (no weight update)."""
    L = state.n_features
    phi = np.asarray(sample.phi_now, dtype=float)
    nxt = np.asarray(sample.phi_next, dtype=float)
    if phi.shape != (L,) or nxt.shape != (L,):
        raise DomainError(f"feature vectors must have length {L}")
    if not 0 <= sample.set_id < state.trace_by_set.shape[0]:
        raise ConfigError(f"set id {sample.set_id} outside the learner's trace slots")
    _observe(state.z, state.A_acc, state.B_acc, state.b_acc, state.trace_by_set, state.B_inv,
             state.alpha, state.lam, phi, nxt, float(sample.reward), int(sample.set_id), bool(sample.episode_start))
    state.t += 1
    state.since_refresh += 1
    if state.since_refresh >= REFRESH:
        _refresh(state.B_acc, state.ridge, state.B_inv)
        state.since_refresh = 0
    return state


def robust_correction(state: LearnerState, w, sets: SetEvaluator) -> np.ndarray:
    """``C_t(w) = a / (t + 1) * sum_u trace_u sigma_u(w)``.

    ``t + 1`` is the number of samples observed so far.
    """
    _check_sets(state, sets)
    sig = sets.sigma_all(w)[: state.trace_by_set.shape[0]]
    return state.alpha * (state.trace_by_set.T @ sig) / max(state.t, 1)


def learner_step(state: LearnerState, sets: SetEvaluator):
    """One weight update using everything observed so far."""
    if state.t < 1:
        raise DomainError("learner_step needs at least one observed sample")
    _check_sets(state, sets)
    x = _direction(state.w, state.A_acc, state.b_acc, state.trace_by_set, state.B_inv, state.alpha,
                   *sets._arrays(), np.zeros(sets.n_sets))
    sc = state.schedule
    gamma = _gamma(float(sc.gamma0), float(sc.t0), float(sc.kappa), state.t - 1)
    for j in range(state.n_features):
        state.w[j] += gamma * x[j]
    if not np.all(np.isfinite(state.w)):
        raise NumericError(f"learner weights became non-finite at step {state.t}")
    return state, state.w


class ConvergenceResult(NamedTuple):
    w: np.ndarray
    steps: int
    converged: bool
    diagnostics: dict


def run_to_convergence(state: LearnerState, stream, sets: SetEvaluator, eps0: float, max_steps: int,
                       min_steps: int = 1, chunk: int = 4096) -> ConvergenceResult:
    """Alternate observe and step until ``||w_t - w_(t-1)||_2 < eps0``.

    ``stream`` is a ``SampleBlock`` or an iterable of ``TransitionSample``.
    Stops at whichever comes first: the tolerance, ``max_steps`` samples, or
    the end of the stream.  ``diagnostics["stop"]`` records which.
    """
    if not eps0 > 0:
        raise DomainError("eps0 must be positive")
    start_t = state.t
    last = float("inf")
    steps = 0
    blocks = _blocks(stream, chunk)
    for block in blocks:
        room = max_steps - steps
        if room <= 0:
            break
        if len(block) > room:
            block = block.slice(0, room)
        consumed, converged, last = _drive(state, block, sets, eps0, min_steps + start_t, True)
        steps += consumed
        if converged:
            return ConvergenceResult(state.w.copy(), steps, True, {"stop": "eps0", "last_step": last, "t": state.t})
    stop = "max_steps" if steps >= max_steps else "exhausted"
    return ConvergenceResult(state.w.copy(), steps, False, {"stop": stop, "last_step": last, "t": state.t})


def _blocks(stream, chunk) -> Iterable[SampleBlock]:
    if isinstance(stream, SampleBlock):
        yield stream
        return
    buf = []
    for sample in stream:
        buf.append(sample)
        if len(buf) == chunk:
            yield SampleBlock.from_samples(buf)
            buf = []
    if buf:
        yield SampleBlock.from_samples(buf)


def feed(state: LearnerState, block: SampleBlock, sets: SetEvaluator) -> LearnerState:
    """Observe and step through a whole block with no stopping rule."""
    _drive(state, block, sets, 1.0, 0, False)
    return state


def learner_from_statistics(A, B, b, trace_by_set=None, alpha: float = 0.9, lam: float = 0.0,
                            ridge: float | None = None) -> LearnerState:
    """A state whose averaged statistics are exactly ``(A, B, b)``.

    Used to run the update on model-exact matrices (``t`` is set to 1 so the
    averages equal the accumulators).
    """
    A = np.array(A, dtype=float)
    L = A.shape[0]
    T = np.zeros((1, L)) if trace_by_set is None else np.array(trace_by_set, dtype=float)
    state = learner_init(L, lam=lam, alpha=alpha, ridge=ridge, n_sets=T.shape[0])
    state.A_acc[:] = A
    state.B_acc[:] = np.asarray(B, dtype=float)
    state.b_acc[:] = np.asarray(b, dtype=float)
    state.trace_by_set[:] = T
    _refresh(state.B_acc, state.ridge, state.B_inv)
    state.t = 1
    return state


def iterate_frozen(state: LearnerState, sets: SetEvaluator, eps: float = 1e-12, max_iters: int = 100_000,
                   gamma: float = 1.0) -> ConvergenceResult:
    """Repeat the weight update on frozen statistics with a constant step.

    No samples are consumed.  The limit solves ``A w + b + C(w) = 0`` for the
    current accumulators, whatever the ridge.
    """
    _check_sets(state, sets)
    sig = np.zeros(sets.n_sets)
    last = float("inf")
    for k in range(1, max_iters + 1):
        x = _direction(state.w, state.A_acc, state.b_acc, state.trace_by_set, state.B_inv, state.alpha,
                       *sets._arrays(), sig)
        state.w += gamma * x
        last = float(gamma * np.linalg.norm(x))
        if not np.isfinite(last):
            raise NumericError("frozen iteration diverged")
        if last < eps:
            return ConvergenceResult(state.w.copy(), k, True, {"stop": "eps0", "last_step": last, "t": state.t})
    return ConvergenceResult(state.w.copy(), max_iters, False, {"stop": "max_steps", "last_step": last, "t": state.t})
