"""Mixed-integer formulation of open-path inference and a branch-and-bound solver.

Two constraint systems are built:

* ``literal``: degree <= 1 per node, exactly N-1 edges, and MTZ ordering
  constraints ``z_i + 1 <= z_j + N (1 - x_ij)`` on every node except the
  first. This system admits a 2-cycle through node 0 next to a separate path,
  so it is kept only for regression checks.
* ``corrected`` (default): a virtual depot with zero-weight edges to and from
  every entity, depot in/out degree exactly 1, degree constraints counting the
  depot edges, and MTZ on all entity nodes. Feasible points correspond exactly
  to open Hamiltonian paths.

The LP relaxation at each node is solved with HiGHS through ``scipy``.
"""
from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components

from ..core import EdgeSelection, edges_to_tour, tour_score
from ..errors import FormulationError

INT_TOL = 1e-6
MAX_CUT_ROUNDS = 50


@dataclass(frozen=True, eq=False)
class MilpInstance:
    n: int
    corrected: bool
    weights: np.ndarray         # the adjacency matrix the objective was built from
    edge_index: dict            # (i, j) entity edge -> column
    depot_out: dict             # j -> column of x_{depot, j}
    depot_in: dict              # i -> column of x_{i, depot}
    z_index: dict               # i -> column of order variable z_i
    objective: np.ndarray       # maximise objective @ v
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray         # bool mask of binary columns
    row_labels: tuple

    @property
    def num_vars(self) -> int:
        return len(self.objective)

    @property
    def num_edge_vars(self) -> int:
        return len(self.edge_index)

    def edge_columns(self) -> np.ndarray:
        return np.fromiter(self.edge_index.values(), dtype=np.int64)

    def selection_from_vector(self, v) -> EdgeSelection:
        return EdgeSelection(self.n, frozenset(e for e, col in self.edge_index.items() if v[col] > 0.5))

    # -- direct constraint evaluation -------------------------------------------------

    def violations(self, v, tol: float = 1e-9) -> list[str]:
        """Labels of every constraint row (or bound) the full vector ``v`` breaks."""
        v = np.asarray(v, dtype=np.float64)
        bad = []
        if self.A_ub.shape[0]:
            lhs = self.A_ub @ v
            for r in np.flatnonzero(lhs > self.b_ub + tol):
                bad.append(self.row_labels[r])
        if self.A_eq.shape[0]:
            lhs = self.A_eq @ v
            off = self.A_ub.shape[0]
            for r in np.flatnonzero(np.abs(lhs - self.b_eq) > tol):
                bad.append(self.row_labels[off + r])
        for col in np.flatnonzero((v < self.lower - tol) | (v > self.upper + tol)):
            bad.append(f"bound[{col}]")
        for col in np.flatnonzero(self.integer & (np.abs(v - np.round(v)) > tol)):
            bad.append(f"integrality[{col}]")
        return bad

    def _order_values(self, v) -> np.ndarray | None:
        """Smallest z satisfying the MTZ rows for the binaries already in ``v``.

        The MTZ rows are difference constraints ``z_j >= z_i + w``; a
        Bellman-Ford style longest-path relaxation from ``z = 0`` finds a
        solution or detects a positive cycle (no solution).
        """
        n = self.n
        arcs = []
        for (i, j), col in self.edge_index.items():
            if i in self.z_index and j in self.z_index:
                arcs.append((i, j, 1.0 - n * (1.0 - v[col])))
        z = {i: 0.0 for i in self.z_index}
        for _ in range(len(z) + 1):
            changed = False
            for i, j, w in arcs:
                if z[i] + w > z[j] + 1e-12:
                    z[j] = z[i] + w
                    changed = True
            if not changed:
                out = v.copy()
                for i, col in self.z_index.items():
                    out[col] = z[i]
                return out
        return None

    def complete(self, sel: EdgeSelection) -> np.ndarray | None:
        """A full feasible variable vector projecting onto ``sel``, or None."""
        if sel.n != self.n:
            raise ValueError("selection size does not match instance")
        base = np.zeros(self.num_vars)
        for e in sel.edges:
            base[self.edge_index[e]] = 1.0
        if not self.corrected:
            v = self._order_values(base)
            return v if v is not None and not self.violations(v) else None
        outs = {i for i, _ in sel.edges}
        ins = {j for _, j in sel.edges}
        heads = [j for j in range(self.n) if j not in ins]
        tails = [i for i in range(self.n) if i not in outs]
        for h, t in itertools.product(heads or [0], tails or [0]):
            v = base.copy()
            v[self.depot_out[h]] = 1.0
            v[self.depot_in[t]] = 1.0
            v = self._order_values(v)
            if v is not None and not self.violations(v):
                return v
        return None

    def accepts(self, sel: EdgeSelection) -> bool:
        return self.complete(sel) is not None


def build_milp(adj: np.ndarray, corrected: bool = True) -> MilpInstance:
    n = adj.shape[0]
    if n < 2:
        raise ValueError("MILP formulation needs at least 2 nodes")
    edge_index = {}
    for i in range(n):
        for j in range(n):
            if i != j:
                edge_index[(i, j)] = len(edge_index)
    col = len(edge_index)
    depot_out, depot_in = {}, {}
    if corrected:
        for j in range(n):
            depot_out[j] = col
            col += 1
        for i in range(n):
            depot_in[i] = col
            col += 1
    z_nodes = range(n) if corrected else range(1, n)
    z_index = {}
    for i in z_nodes:
        z_index[i] = col
        col += 1
    nv = col

    objective = np.zeros(nv)
    for (i, j), c in edge_index.items():
        objective[c] = adj[i, j]

    ub_rows, ub_cols, ub_vals, b_ub, labels = [], [], [], [], []

    def add_ub(cols, vals, rhs, label):
        r = len(b_ub)
        ub_rows.extend([r] * len(cols))
        ub_cols.extend(cols)
        ub_vals.extend(vals)
        b_ub.append(rhs)
        labels.append(label)

    for i in range(n):
        cols = [edge_index[(i, j)] for j in range(n) if j != i]
        if corrected:
            cols.append(depot_in[i])
        add_ub(cols, [1.0] * len(cols), 1.0, f"out_degree[{i}]")
    for j in range(n):
        cols = [edge_index[(i, j)] for i in range(n) if i != j]
        if corrected:
            cols.append(depot_out[j])
        add_ub(cols, [1.0] * len(cols), 1.0, f"in_degree[{j}]")
    # z_i - z_j + N x_ij <= N - 1
    for i in z_index:
        for j in z_index:
            if i != j:
                add_ub([z_index[i], z_index[j], edge_index[(i, j)]], [1.0, -1.0, float(n)],
                       float(n - 1), f"mtz[{i},{j}]")

    eq_rows, eq_cols, eq_vals, b_eq = [], [], [], []

    def add_eq(cols, vals, rhs, label):
        r = len(b_eq)
        eq_rows.extend([r] * len(cols))
        eq_cols.extend(cols)
        eq_vals.extend(vals)
        b_eq.append(rhs)
        labels.append(label)

    add_eq(list(edge_index.values()), [1.0] * len(edge_index), float(n - 1), "edge_count")
    if corrected:
        add_eq(list(depot_out.values()), [1.0] * n, 1.0, "depot_out")
        add_eq(list(depot_in.values()), [1.0] * n, 1.0, "depot_in")

    A_ub = sp.csr_matrix((ub_vals, (ub_rows, ub_cols)), shape=(len(b_ub), nv))
    A_eq = sp.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(len(b_eq), nv))
    lower = np.zeros(nv)
    upper = np.ones(nv)
    integer = np.ones(nv, dtype=bool)
    for c in z_index.values():
        upper[c] = np.inf
        integer[c] = False
    return MilpInstance(n, corrected, np.array(adj, dtype=np.float64), edge_index, depot_out, depot_in, z_index, objective,
                        A_ub, np.array(b_ub), A_eq, np.array(b_eq), lower, upper, integer,
                        tuple(labels))


class BnBResult(NamedTuple):
    selection: EdgeSelection | None
    score: float
    optimal: bool
    gap: float
    nodes: int


def _solve_lp(inst: MilpInstance, lower, upper, cuts=None):
    A_ub, b_ub = inst.A_ub, inst.b_ub
    if cuts is not None and cuts.rows:
        A_ub = sp.vstack([A_ub, cuts.matrix()], format="csr")
        b_ub = np.concatenate([b_ub, cuts.rhs])
    res = linprog(-inst.objective, A_ub=A_ub, b_ub=b_ub, A_eq=inst.A_eq, b_eq=inst.b_eq,
                  bounds=np.column_stack([lower, upper]), method="highs-ds")
    if res.status == 2:
        return None, None
    if res.status != 0:
        raise FormulationError(f"LP relaxation failed: {res.message}")
    return -res.fun, res.x


class _CutPool:
    """Subtour-elimination rows ``sum_{i,j in S} x_ij <= |S| - 1`` over entity sets."""

    def __init__(self, inst: MilpInstance):
        self.inst = inst
        self.rows: list[np.ndarray] = []
        self.sets: set = set()
        self.rhs = np.zeros(0)
        self._matrix = None

    def add(self, nodes) -> bool:
        key = frozenset(nodes)
        if key in self.sets:
            return False
        self.sets.add(key)
        self.rows.append(np.array([self.inst.edge_index[(i, j)] for i in key for j in key if i != j]))
        self.rhs = np.append(self.rhs, len(key) - 1.0)
        self._matrix = None
        return True

    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            cols = np.concatenate(self.rows)
            rows = np.repeat(np.arange(len(self.rows)), [len(r) for r in self.rows])
            self._matrix = sp.csr_matrix((np.ones(len(cols)), (rows, cols)),
                                         shape=(len(self.rows), self.inst.num_vars))
        return self._matrix

    def separate(self, x) -> int:
        """Add violated subtour rows found among thresholded support components."""
        inst = self.inst
        n = inst.n
        cols = inst.edge_columns()
        ij = np.array(list(inst.edge_index.keys()))
        vals = x[cols]
        added = 0
        for threshold in (1e-6, 0.3, 0.5, 0.7):
            keep = vals > threshold
            graph = sp.csr_matrix((np.ones(keep.sum()), (ij[keep, 0], ij[keep, 1])), shape=(n, n))
            k, labels = connected_components(graph, directed=False)
            for comp in range(k):
                nodes = np.flatnonzero(labels == comp)
                if len(nodes) < 2:
                    continue
                inside = vals[np.isin(ij[:, 0], nodes) & np.isin(ij[:, 1], nodes)].sum()
                if inside > len(nodes) - 1 + 1e-6 and self.add(nodes.tolist()):
                    added += 1
        return added


def _greedy_path(adj: np.ndarray) -> tuple[int, ...]:
    """Best nearest-neighbour path over all start nodes, then node-move local search."""
    n = adj.shape[0]
    w = np.array(adj, dtype=np.float64)
    np.fill_diagonal(w, -np.inf)
    best, best_val = None, -np.inf
    for s in range(n):
        order, seen = [s], np.zeros(n, dtype=bool)
        seen[s] = True
        for _ in range(n - 1):
            row = np.where(seen, -np.inf, w[order[-1]])
            k = int(np.argmax(row))
            order.append(k)
            seen[k] = True
        val = tour_score(adj, order)
        if val > best_val:
            best, best_val = order, val
    improved, passes = True, 0
    while improved and passes < 5:
        improved, passes = False, passes + 1
        for p in range(n):
            for q in range(n):
                if p == q:
                    continue
                cand = best[:p] + best[p + 1:]
                cand.insert(q, best[p])
                val = tour_score(adj, cand)
                if val > best_val + 1e-12:
                    best, best_val, improved = cand, val, True
    return tuple(best)


def branch_and_bound(inst: MilpInstance, time_budget: float | None = 10.0,
                     seed_tour=None) -> BnBResult:
    """Best-first LP-based branch and bound on the binary edge variables.

    Branches on the most fractional binary (lowest column on ties), explores
    the ``x = 1`` child first, and stops at ``time_budget`` seconds with the
    incumbent flagged non-optimal.
    """
    start = time.perf_counter()
    adj = inst.weights
    tour = tuple(seed_tour) if seed_tour is not None else _greedy_path(adj)
    inc_sel = EdgeSelection.from_tour(tour)
    inc_val = tour_score(adj, tour)

    def tol(v):
        return 1e-9 * max(1.0, abs(v))

    counter = itertools.count()
    heap = [(-np.inf, next(counter), ())]
    nodes = 0
    binaries = np.flatnonzero(inst.integer)
    cuts = _CutPool(inst) if inst.corrected else None
    while heap:
        if time_budget is not None and time.perf_counter() - start > time_budget:
            open_bound = max(-h[0] for h in heap)
            gap = max(0.0, open_bound - inc_val) if np.isfinite(open_bound) else np.inf
            return BnBResult(inc_sel, inc_val, False, gap, nodes)
        parent_bound, _, fixes = heapq.heappop(heap)
        if -parent_bound <= inc_val + tol(inc_val):
            continue
        lower, upper = inst.lower.copy(), inst.upper.copy()
        for col, val in fixes:
            lower[col] = upper[col] = val
        bound, x = _solve_lp(inst, lower, upper, cuts)
        nodes += 1
        rounds = 0
        while (cuts is not None and bound is not None and bound > inc_val + tol(inc_val)
               and rounds < MAX_CUT_ROUNDS and cuts.separate(x)):
            bound, x = _solve_lp(inst, lower, upper, cuts)
            rounds += 1
        if bound is None or bound <= inc_val + tol(inc_val):
            continue
        frac = np.abs(x[binaries] - np.round(x[binaries]))
        if frac.max() <= INT_TOL:
            sel = inst.selection_from_vector(x)
            problem = sel.path_violation()
            if problem is not None:
                raise FormulationError(f"integral LP point is not a valid path: {problem}")
            val = tour_score(adj, edges_to_tour(sel))
            if val > inc_val:
                inc_sel, inc_val = sel, val
            continue
        col = int(binaries[np.argmax(-np.abs(x[binaries] - 0.5))])
        for val in (1.0, 0.0):
            heapq.heappush(heap, (-bound, next(counter), fixes + ((col, val),)))
    return BnBResult(inc_sel, inc_val, True, 0.0, nodes)
