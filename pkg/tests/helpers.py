"""Shared factories and oracles for the test suite."""

import numpy as np

from robsyn.mpc import MpcProblem
from robsyn.network import Activation, ImplicitNetwork


def rollout_cost(problem: MpcProblem, w0, v_seq) -> float:
    """Cost computed by simulating the open loop, term by term."""
    N, n_v = problem.horizon, problem.n_v
    v_seq = np.asarray(v_seq, dtype=float).reshape(N, n_v)
    x = np.asarray(w0, dtype=float).reshape(problem.n_x)
    cost = 0.0
    for k in range(N):
        cost += float(v_seq[k] @ problem.R @ v_seq[k])
        x = problem.A @ x + problem.B @ v_seq[k]
        W = problem.P if k == N - 1 else problem.Q
        cost += float(x @ W @ x)
    return cost


def random_well_posed_network(seed, n, n_u, n_g, activation=None, contraction=0.9):
    """Random network with ||W_x||_2 <= contraction < 1, hence well posed."""
    rng = np.random.default_rng(seed)
    W_x = rng.standard_normal((n, n))
    norm = np.linalg.norm(W_x, 2) if n else 0.0
    if norm > 0:
        W_x *= contraction / max(norm, contraction)
    return ImplicitNetwork(
        W_x=W_x,
        W_u=rng.standard_normal((n, n_u)),
        W_fx=rng.standard_normal((n_g, n)),
        W_fu=rng.standard_normal((n_g, n_u)),
        b=rng.standard_normal(n),
        b_f=rng.standard_normal(n_g),
        activation=activation or Activation.relu(),
    )
