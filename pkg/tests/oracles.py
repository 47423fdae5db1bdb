"""Independent reference computations used only by the tests.

Nothing here calls the package's solvers; each oracle recomputes its quantity
from first principles with plain loops or generic iterative schemes.
"""
import numpy as np


def vertex_enumeration_vi(reward, kernel, discount, vertices, tol=1e-12, max_iters=100_000):
    """Robust VI where every backup enumerates the vertex list of each pair.

    ``vertices[s][a]`` is a list of perturbation vectors (use ``[zeros]`` for
    no uncertainty).
    """
    S, A = reward.shape
    V = np.zeros(S)
    for _ in range(max_iters):
        new = np.empty(S)
        for s in range(S):
            best = -np.inf
            for a in range(A):
                worst = min(float((kernel[s, a] + u) @ V) for u in vertices[s][a])
                best = max(best, reward[s, a] + discount * worst)
            new[s] = best
        if np.max(np.abs(new - V)) <= tol:
            return new
        V = new
    raise RuntimeError("oracle VI did not converge")


def doubling_series_value(reward_pi, P_pi, discount, log2_terms=20):
    """``sum_{k < 2^m} (a P)^k r`` by repeated doubling (2^20 terms by default)."""
    M = discount * P_pi
    S_n = np.eye(len(reward_pi))
    Mn = M.copy()
    for _ in range(log2_terms):
        S_n = S_n + Mn @ S_n
        Mn = Mn @ Mn
    return S_n @ reward_pi


def approx_td_series(reward_pi, P_pi, discount, sigma, V, lam, n_terms=200):
    """Geometric mixture of m-step returns with sigma frozen at V, summed term by term."""
    aP = discount * P_pi
    base = reward_pi + discount * sigma
    out = np.zeros_like(V)
    partial = np.zeros_like(V)
    power = np.eye(len(V))
    for m in range(n_terms):
        partial = partial + power @ base
        power = power @ aP
        out += (1 - lam) * lam**m * (partial + power @ V)
    return out


def pg_sphere(v, radius, sum_zero=True, iters=20_000, step=None):
    """Projected gradient for ``min x.v`` over the (centred) ball."""
    v = np.asarray(v, dtype=float)
    step = 0.01 * radius / max(np.linalg.norm(v), 1e-300) if step is None else step
    x = np.zeros_like(v)

    def proj(y):
        if sum_zero:
            y = y - y.mean()
        n = np.linalg.norm(y)
        return y if n <= radius else y * (radius / n)

    for _ in range(iters):
        x = proj(x - step * v)
    return float(x @ v), x


def dykstra_project(y, radius, lower, upper, rounds=2000, tol=1e-14):
    """Dykstra's alternating projections onto ball, sum-zero plane and box."""
    x = y.copy()
    p = np.zeros_like(y)
    q = np.zeros_like(y)
    r = np.zeros_like(y)
    for _ in range(rounds):
        a = x + p
        xb = a if np.linalg.norm(a) <= radius else a * (radius / np.linalg.norm(a))
        p = a - xb
        b = xb + q
        xh = b - b.mean()
        q = b - xh
        c = xh + r
        xn = np.clip(c, lower, upper)
        r = c - xn
        if np.max(np.abs(xn - x)) < tol:
            x = xn
            break
        x = xn
    return x


def pg_simplex_sphere(v, radius, nominal, iters=3000):
    """Projected gradient with Dykstra projections for the simplex-constrained ball."""
    v = np.asarray(v, dtype=float)
    lower, upper = -np.asarray(nominal), 1.0 - np.asarray(nominal)
    x = np.zeros_like(v)
    step = 0.5 * radius / max(np.linalg.norm(v - v.mean()), 1e-300)
    for k in range(iters):
        x = dykstra_project(x - step * v, radius, lower, upper)
    return float(x @ v), x


def ray_sampling_simplex_sphere(v, radius, nominal, n_samples=100_000, seed=0):
    """Min of ``x.v`` over boundary points hit by random rays from the origin.

    Directions are uniform on the sum-zero subspace; each ray is followed to
    where it first leaves the ball or the box.
    """
    rng = np.random.default_rng(seed)
    n = len(v)
    lower, upper = -np.asarray(nominal), 1.0 - np.asarray(nominal)
    d = rng.standard_normal((n_samples, n))
    d -= d.mean(axis=1, keepdims=True)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        t_up = np.where(d > 0, upper / d, np.inf)
        t_lo = np.where(d < 0, lower / d, np.inf)
    t = np.minimum(np.minimum(t_up.min(axis=1), t_lo.min(axis=1)), radius)
    pts = d * t[:, None]
    vals = pts @ v
    return float(vals.min())


def direct_ledger(samples, alpha, lam, L, n_sets):
    """Batch statistics recomputed from a transition list with explicit trace sums."""
    n = len(samples)
    A = np.zeros((L, L))
    B = np.zeros((L, L))
    b = np.zeros(L)
    traces = []
    ep_start = 0
    for t, smp in enumerate(samples):
        if smp["start"]:
            ep_start = t
        z = np.zeros(L)
        for m in range(ep_start, t + 1):
            z += (alpha * lam) ** (t - m) * samples[m]["phi"]
        traces.append(z)
        A += np.outer(z, alpha * smp["phi_next"] - smp["phi"])
        B += np.outer(smp["phi"], smp["phi"])
        b += z * smp["r"]
    return A / n, B / n, b / n, traces
