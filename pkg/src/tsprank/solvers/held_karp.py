"""Held-Karp subset dynamic program for the maximum-weight open path.

The table is kept in suffix form: ``best[S, j]`` is the best score of a path
that starts at ``j`` and visits exactly the node set ``S``. Reading it forwards
and taking the smallest index at every tie yields the lexicographically
smallest optimal tour.
"""
from __future__ import annotations

import numpy as np

from ..core import tour_score
from ..errors import CapacityError

MAX_NODES = 22


def held_karp(adj: np.ndarray) -> tuple[tuple[int, ...], float]:
    n = adj.shape[0]
    if n < 1:
        raise ValueError("empty adjacency")
    if n > MAX_NODES:
        raise CapacityError(f"Held-Karp supports at most {MAX_NODES} nodes, got {n}")
    if n == 1:
        return (0,), 0.0

    rows = np.array(adj, dtype=np.float64)
    np.fill_diagonal(rows, -np.inf)

    full = 1 << n
    masks = np.arange(full, dtype=np.int64)
    pop = np.zeros(full, dtype=np.int8)
    for bit in range(n):
        pop += ((masks >> bit) & 1).astype(np.int8)
    layers = [masks[pop == s] for s in range(n + 1)]

    best = np.full((full, n), -np.inf)
    for j in range(n):
        best[1 << j, j] = 0.0
    for s in range(2, n + 1):
        layer = layers[s]
        for j in range(n):
            sel = layer[(layer >> j) & 1 == 1]
            best[sel, j] = (best[sel ^ (1 << j)] + rows[j]).max(axis=1)

    S = full - 1
    node = int(np.argmax(best[S]))
    order = [node]
    while len(order) < n:
        rest = S ^ (1 << node)
        cand = best[rest] + rows[node]
        nxt = int(np.flatnonzero(cand == best[S, node])[0])
        order.append(nxt)
        S, node = rest, nxt
    order = tuple(order)
    return order, tour_score(adj, order)
