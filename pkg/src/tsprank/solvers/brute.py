"""Exhaustive enumeration of all N! open tours (test oracle)."""
from __future__ import annotations

import itertools
import math

import numpy as np

from ..errors import CapacityError

MAX_NODES = 10


def _check(adj, limit=MAX_NODES):
    n = adj.shape[0]
    if n < 1:
        raise ValueError("empty adjacency")
    if n > limit:
        raise CapacityError(f"brute force supports at most {limit} nodes, got {n}")
    return n


def _all_scores(adj: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Every permutation in lexicographic order with its left-to-right path sum."""
    n = adj.shape[0]
    perms = np.fromiter(itertools.chain.from_iterable(itertools.permutations(range(n))),
                        dtype=np.int8, count=math.factorial(n) * n).reshape(-1, n)
    scores = np.zeros(len(perms))
    for k in range(n - 1):
        scores += adj[perms[:, k], perms[:, k + 1]]
    return perms, scores


def brute_force_all(adj: np.ndarray) -> list[tuple[tuple[int, ...], float]]:
    """All tours sorted by score descending, ties in lexicographic tour order."""
    _check(adj)
    perms, scores = _all_scores(adj)
    order = np.argsort(-scores, kind="stable")
    return [(tuple(int(v) for v in perms[i]), float(scores[i])) for i in order]


def brute_force_best(adj: np.ndarray) -> tuple[tuple[int, ...], float]:
    _check(adj)
    perms, scores = _all_scores(adj)
    best = int(np.argmax(scores))  # first maximum = lexicographically smallest
    return tuple(int(v) for v in perms[best]), float(scores[best])
