"""Server-side aggregation of client particle ensembles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .numerics import as_matrix
from .ot import TransportPlan, cost_matrix, solve_exact


@dataclass(frozen=True)
class AggregationConfig:
    fixed_point_iters: int = 1
    client_weights: Optional[tuple] = None

    def __post_init__(self):
        if self.fixed_point_iters < 1:
            raise ValueError("fixed_point_iters must be >= 1")
        if self.client_weights is not None:
            _check_weights(self.client_weights, len(self.client_weights))


def _check_weights(weights, k):
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise ValueError(f"expected {k} client weights, got shape {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("client weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"client weights must sum to 1, got {w.sum()!r}")
    return w


def _stack(global_particles, client_ensembles):
    theta = as_matrix(global_particles, "global_particles")
    clients = [as_matrix(c, f"client_ensembles[{k}]")
               for k, c in enumerate(client_ensembles)]
    if not clients:
        raise ValueError("need at least one client ensemble")
    for k, c in enumerate(clients):
        if c.shape != theta.shape:
            raise ValueError(
                f"client {k} ensemble has shape {c.shape}, expected {theta.shape}")
    return theta, clients


def barycenter_step(global_particles, client_ensembles, weights=None):
    """One fixed-point update: optimal plans, then the barycentric projection.

    Returns ``(new_particles, plans)``. Each new particle is
    ``sum_k w_k (N T_k Theta_k)_i``, a convex combination of client rows since
    ``N T_k`` is row-stochastic.
    """
    theta, clients = _stack(global_particles, client_ensembles)
    k = len(clients)
    w = np.full(k, 1.0 / k) if weights is None else _check_weights(weights, k)
    n = theta.shape[0]
    plans = [solve_exact(cost_matrix(theta, c))[0] for c in clients]
    out = np.zeros_like(theta)
    for wk, plan, c in zip(w, plans, clients):
        out += wk * (n * plan.entries) @ c
    return out, plans


def objective_value(global_particles, client_ensembles,
                    plans: Sequence[TransportPlan], weights=None) -> float:
    """``sum_k w_k <M_k, T_k>_F``; uniform weights give ``(1/K) sum_k``."""
    theta, clients = _stack(global_particles, client_ensembles)
    if len(plans) != len(clients):
        raise ValueError("need one plan per client")
    k = len(clients)
    w = np.full(k, 1.0 / k) if weights is None else _check_weights(weights, k)
    total = 0.0
    for wk, plan, c in zip(w, plans, clients):
        entries = plan.entries if isinstance(plan, TransportPlan) else np.asarray(plan)
        if entries.shape != (theta.shape[0],) * 2:
            raise ValueError("plan shape does not match particle count")
        total += wk * float(np.sum(cost_matrix(theta, c) * entries))
    return total


def aggregate(global_particles, client_ensembles,
              config: AggregationConfig = AggregationConfig(),
              return_trace: bool = False):
    """Wasserstein barycenter of the client ensembles, warm-started at the
    current global particles.

    With ``return_trace`` also returns the final plans and the objective after
    every fixed-point iteration.
    """
    theta, clients = _stack(global_particles, client_ensembles)
    weights = config.client_weights
    objectives = []
    plans = None
    for _ in range(config.fixed_point_iters):
        theta, plans = barycenter_step(theta, clients, weights)
        if return_trace:
            objectives.append(objective_value(theta, clients, plans, weights))
    if return_trace:
        return theta, plans, objectives
    return theta


def parameter_average(client_ensembles, weights=None) -> np.ndarray:
    """Baseline: element-wise average of particle ``i`` across clients."""
    stack = np.stack([as_matrix(c) for c in client_ensembles])
    k = stack.shape[0]
    w = np.full(k, 1.0 / k) if weights is None else _check_weights(weights, k)
    return np.tensordot(w, stack, axes=1)
