"""Small model builders shared by several test modules."""
import numpy as np

from robust_lspi.envs import dirichlet_vertices
from robust_lspi.rmdp import TabularRmdp
from robust_lspi.uncertainty import FiniteVertices


def concentrated_model(seed, n_states=6, n_actions=2, discount=0.3, concentration=20.0, scale=0.1):
    """Random RMDP with well-spread rows, so the exploration ratio stays below 1 for small discounts."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    sets = [[dirichlet_vertices(rng, P[s, a], 3, scale) for a in range(n_actions)] for s in range(n_states)]
    return TabularRmdp(rng.uniform(0.0, 1.0, (n_states, n_actions)), P, discount, sets), rng


def truncated_sets(model, keep=2):
    """Approximate sets keeping the first ``keep`` vertices of every exact set."""
    S, A = model.reward.shape
    return [[FiniteVertices(model.binding.set_for(s, a).vertices[:keep]) for a in range(A)] for s in range(S)]
