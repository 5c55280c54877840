"""Exact open-path inference over an adjacency matrix.

``solve`` dispatches to one of three exact backends; all of them maximise the
sum of consecutive-edge scores and return the score recomputed along the tour
with :func:`tsprank.core.tour_score`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import EdgeSelection, edges_to_tour, tour_score
from ..errors import CapacityError, DimensionError, SolverTimeout
from . import brute, held_karp as _hk
from .brute import brute_force_all, brute_force_best
from .held_karp import held_karp
from .milp import BnBResult, MilpInstance, branch_and_bound, build_milp

BACKENDS = ("brute", "hk", "milp", "auto")
MAX_NODES = {"brute": brute.MAX_NODES, "hk": _hk.MAX_NODES, "milp": None}


@dataclass(frozen=True)
class SolverBackend:
    kind: str = "auto"
    time_budget_ms: float | None = 10_000.0

    def __post_init__(self):
        if self.kind not in BACKENDS:
            raise ValueError(f"unknown solver backend {self.kind!r}; choose from {BACKENDS}")

    def resolve(self, n: int) -> str:
        if self.kind == "auto":
            return "hk" if n <= _hk.MAX_NODES else "milp"
        return self.kind

    def check_capacity(self, n: int) -> str:
        kind = self.resolve(n)
        limit = MAX_NODES[kind]
        if limit is not None and n > limit:
            raise CapacityError(f"backend {kind!r} supports at most {limit} nodes, got {n}")
        return kind


def solve(adj: np.ndarray, backend: SolverBackend | str = "auto") -> tuple[tuple[int, ...], float]:
    """Maximum-score open tour. Raises SolverTimeout (carrying the incumbent) if the MILP budget runs out."""
    if isinstance(backend, str):
        backend = SolverBackend(backend)
    n = adj.shape[0]
    if adj.ndim != 2 or adj.shape[1] != n or n < 1:
        raise DimensionError(f"adjacency must be a non-empty square matrix, got shape {adj.shape}")
    kind = backend.check_capacity(n)
    if n == 1:
        return (0,), 0.0
    if kind == "brute":
        return brute_force_best(adj)
    if kind == "hk":
        return held_karp(adj)
    budget = None if backend.time_budget_ms is None else backend.time_budget_ms / 1000.0
    res = branch_and_bound(build_milp(adj), budget)
    tour = edges_to_tour(res.selection)
    if not res.optimal:
        raise SolverTimeout(f"MILP time budget of {backend.time_budget_ms} ms exhausted "
                            f"(gap {res.gap:.3g})", tour=tour, score=tour_score(adj, tour), gap=res.gap)
    return tour, tour_score(adj, tour)


def loss_augment(adj: np.ndarray, gold: EdgeSelection) -> np.ndarray:
    """Add 1 to every non-gold edge so that solving yields argmax_x [Delta(x, gold) + x . A]."""
    if gold.n != adj.shape[0]:
        raise DimensionError(f"gold selection has n={gold.n}, adjacency has n={adj.shape[0]}")
    problem = gold.path_violation()
    if problem is not None:
        raise ValueError(f"gold selection is not a valid path: {problem}")
    aug = adj + 1.0
    for i, j in gold.edges:
        aug[i, j] = adj[i, j]
    return aug


__all__ = [
    "BnBResult", "MilpInstance", "SolverBackend", "branch_and_bound", "brute_force_all",
    "brute_force_best", "build_milp", "held_karp", "loss_augment", "solve",
]
