"""Exact max-weight integer transportation solver.

Solves max sum_ij w[i, j] * U[i, j] over integer matrices U >= 0 with row
sums capped by row_budgets and column sums by col_budgets, as a min-cost
flow problem via successive shortest augmenting paths. The transportation
polytope with integer budgets has integral vertices, so the LP optimum is
attained exactly.

Arithmetic is exact: each float weight is expanded through
float.as_integer_ratio() (power-of-two denominators) onto a common integer
scale, so no rounding can flip a comparison. Ties between optimal U are
broken toward the lexicographically smallest matrix (row-major) by
perturbing weight (i, j) with -beta^(P - 1 - pos) at scale beta^P, where
beta exceeds any feasible entry; the perturbed objective is injective over
feasible U, which also pins assignments with zero weight at zero.
"""

from __future__ import annotations

import numpy as np


def _integer_weights(weights: np.ndarray) -> list:
    """Exact common-denominator integer rendition of the float weights."""
    ratios = [float(w).as_integer_ratio() for w in weights.ravel()]
    common = max(d for _, d in ratios)
    return [n * (common // d) for n, d in ratios]


def _encode_weights(weights: np.ndarray, flow_bound: int) -> list:
    n_entries = weights.size
    beta = flow_bound + 1
    scale = beta ** n_entries
    ints = _integer_weights(weights)
    return [w * scale - beta ** (n_entries - 1 - pos)
            for pos, w in enumerate(ints)]


class _FlowNetwork:
    """Residual graph with paired arcs and exact integer costs."""

    def __init__(self, n_nodes: int):
        self.n_nodes = n_nodes
        self.targets = []
        self.caps = []
        self.costs = []
        self.outgoing = [[] for _ in range(n_nodes)]

    def add_arc(self, u: int, v: int, cap: int, cost: int) -> int:
        idx = len(self.targets)
        self.targets += [v, u]
        self.caps += [cap, 0]
        self.costs += [cost, -cost]
        self.outgoing[u].append(idx)
        self.outgoing[v].append(idx + 1)
        return idx

    def shortest_path(self, src: int, dst: int):
        """Bellman-Ford on residual arcs; returns (dist, arc-predecessors)."""
        dist = [None] * self.n_nodes
        pred = [-1] * self.n_nodes
        dist[src] = 0
        for _ in range(self.n_nodes - 1):
            changed = False
            for u in range(self.n_nodes):
                if dist[u] is None:
                    continue
                for idx in self.outgoing[u]:
                    if self.caps[idx] <= 0:
                        continue
                    v = self.targets[idx]
                    cand = dist[u] + self.costs[idx]
                    if dist[v] is None or cand < dist[v]:
                        dist[v] = cand
                        pred[v] = idx
                        changed = True
            if not changed:
                break
        return dist[dst], pred

    def augment(self, src: int, dst: int, pred: list) -> None:
        bottleneck = None
        v = dst
        while v != src:
            idx = pred[v]
            if bottleneck is None or self.caps[idx] < bottleneck:
                bottleneck = self.caps[idx]
            v = self.targets[idx ^ 1]
        v = dst
        while v != src:
            idx = pred[v]
            self.caps[idx] -= bottleneck
            self.caps[idx ^ 1] += bottleneck
            v = self.targets[idx ^ 1]


def max_weight_assignment(weights: np.ndarray, row_budgets: np.ndarray,
                          col_budgets: np.ndarray) -> np.ndarray:
    """Optimal integer assignment matrix for the capped transportation problem.

    Entries with nonpositive weight are never assigned, and among maximizers
    the lexicographically smallest U (row-major) is returned.
    """
    weights = np.asarray(weights, dtype=float)
    rows = np.asarray(row_budgets, dtype=int)
    cols = np.asarray(col_budgets, dtype=int)
    n_rows, n_cols = weights.shape
    if rows.shape != (n_rows,) or cols.shape != (n_cols,):
        raise ValueError("budget lengths must match the weight matrix")
    if (rows < 0).any() or (cols < 0).any():
        raise ValueError("budgets must be nonnegative")

    flow_bound = int(min(rows.sum(), cols.sum()))
    if flow_bound == 0:
        return np.zeros((n_rows, n_cols), dtype=int)
    encoded = _encode_weights(weights, flow_bound)

    src = 0
    sink = n_rows + n_cols + 1
    net = _FlowNetwork(n_rows + n_cols + 2)
    for i in range(n_rows):
        net.add_arc(src, 1 + i, int(rows[i]), 0)
    arc_ids = np.empty((n_rows, n_cols), dtype=int)
    for i in range(n_rows):
        for j in range(n_cols):
            cost = -encoded[i * n_cols + j]
            arc_ids[i, j] = net.add_arc(1 + i, 1 + n_rows + j,
                                        int(min(rows[i], cols[j])), cost)
    for j in range(n_cols):
        net.add_arc(1 + n_rows + j, sink, int(cols[j]), 0)

    while True:
        dist, pred = net.shortest_path(src, sink)
        if dist is None or dist >= 0:
            break
        net.augment(src, sink, pred)

    result = np.zeros((n_rows, n_cols), dtype=int)
    for i in range(n_rows):
        for j in range(n_cols):
            idx = int(arc_ids[i, j])
            result[i, j] = net.caps[idx ^ 1]     # flow = reverse residual
    return result
