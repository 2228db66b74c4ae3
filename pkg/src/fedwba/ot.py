"""Exact optimal transport between two uniform clouds of equal size.

With both marginals uniform over ``n`` atoms, the vertices of the transport
polytope are permutation matrices scaled by ``1/n``, so the linear program is
solved exactly as a min-cost assignment.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix, pairwise_sq_dists


@dataclass(frozen=True)
class TransportPlan:
    """Coupling between two uniform ``n``-atom measures."""

    entries: np.ndarray
    assignment: np.ndarray  # row i is sent to column assignment[i]

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_assignment(cls, assignment) -> "TransportPlan":
        assignment = np.asarray(assignment, dtype=np.int64)
        n = assignment.size
        entries = np.zeros((n, n))
        entries[np.arange(n), assignment] = 1.0 / n
        return cls(entries=entries, assignment=assignment)


def cost_matrix(source, target) -> np.ndarray:
    """Squared Euclidean cost ``M[i, j] = ||source_i - target_j||^2``."""
    source = as_matrix(source, "source")
    target = as_matrix(target, "target")
    if source.shape != target.shape:
        raise ValueError(f"shape mismatch: {source.shape} vs {target.shape}")
    return pairwise_sq_dists(source, target)


def linear_assignment(cost) -> np.ndarray:
    """Min-cost perfect matching of a square cost matrix.

    Shortest augmenting paths with row/column potentials, O(n^3). Rows are
    inserted in index order, which fixes the matching among ties.

    Returns
    -------
    ndarray of int, shape (n,)
        ``col[i]`` is the column matched to row ``i``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost contains non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)

    # 1-based bookkeeping; index 0 is the virtual source column
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[j] = row owning column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cols = np.nonzero(free)[0] + 1
            reduced = cost[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = reduced < minv[cols]
            minv[cols[better]] = reduced[better]
            way[cols[better]] = j0
            k = int(np.argmin(minv[cols]))
            j1 = int(cols[k])
            delta = minv[j1]
            u[match[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    col_of_row = np.zeros(n, dtype=np.int64)
    col_of_row[match[1:] - 1] = np.arange(n)
    return col_of_row


def solve_exact(cost) -> tuple[TransportPlan, float]:
    """Optimal plan and objective ``<M, T>_F`` (the squared W2 distance)."""
    cost = np.asarray(cost, dtype=np.float64)
    if np.any(cost < 0):
        raise ValueError("cost must be nonnegative")
    assignment = linear_assignment(cost)
    n = cost.shape[0]
    objective = float(cost[np.arange(n), assignment].sum() / n)
    return TransportPlan.from_assignment(assignment), objective


def w2_distance(source, target) -> float:
    _, objective = solve_exact(cost_matrix(source, target))
    return float(np.sqrt(objective))


def brute_force_assignment(cost) -> tuple[np.ndarray, float]:
    """Enumerate all ``n!`` permutations; reference for small ``n`` only."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if n > 9:
        raise ValueError("brute force is limited to n <= 9")
    rows = np.arange(n)
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        total = cost[rows, perm].sum()
        if total < best:
            best, best_perm = total, perm
    return np.asarray(best_perm, dtype=np.int64), float(best / n)
