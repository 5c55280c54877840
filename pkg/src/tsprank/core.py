"""Domain types, the bilinear pairwise scorer, and tour/edge conversions.

Adjacency matrices are plain ``float64`` arrays whose diagonal holds
``INVALID`` (NaN). Solvers and losses never read the diagonal, so a NaN
there poisons any code path that accidentally does.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, InvalidSelectionError

INVALID = np.nan


class RankOrder(str, enum.Enum):
    ASCENDING = "ascending"  # rank 1 is best
    DESCENDING = "descending"  # rank 1 is worst


def check_permutation(ranks: Sequence[int], what: str = "ranks") -> tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    n = len(ranks)
    if sorted(ranks) != list(range(1, n + 1)):
        seen = set()
        for r in ranks:
            if r in seen:
                raise ValueError(f"{what} contain duplicate rank {r}")
            seen.add(r)
        raise ValueError(f"{what} {list(ranks)} are not a permutation of 1..{n}")
    return ranks


@dataclass(frozen=True)
class Entity:
    id: str
    embedding: np.ndarray


@dataclass(frozen=True, eq=False)
class RankingGroup:
    """One ranking instance: N embeddings plus optional strict gold ranks."""

    group_id: str
    entity_ids: tuple[str, ...]
    embeddings: np.ndarray
    gold_ranks: tuple[int, ...] | None = None
    rank_order: RankOrder = RankOrder.ASCENDING

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] < 1 or emb.shape[1] < 1:
            raise DimensionError(
                f"group {self.group_id!r}: embeddings must be a non-empty N x d array, got shape {emb.shape}"
            )
        if not np.all(np.isfinite(emb)):
            raise ValueError(f"group {self.group_id!r}: non-finite embedding coordinate")
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)
        ids = tuple(str(i) for i in self.entity_ids)
        if len(ids) != emb.shape[0]:
            raise DimensionError(
                f"group {self.group_id!r}: {len(ids)} entity ids for {emb.shape[0]} embeddings"
            )
        object.__setattr__(self, "entity_ids", ids)
        object.__setattr__(self, "rank_order", RankOrder(self.rank_order))
        if self.gold_ranks is not None:
            if len(self.gold_ranks) != emb.shape[0]:
                raise DimensionError(f"group {self.group_id!r}: gold ranks length mismatch")
            ranks = check_permutation(self.gold_ranks, f"group {self.group_id!r} gold ranks")
            object.__setattr__(self, "gold_ranks", ranks)

    @classmethod
    def from_entities(cls, group_id, entities: Iterable[Entity], gold_ranks=None,
                      rank_order=RankOrder.ASCENDING) -> "RankingGroup":
        entities = list(entities)
        dims = {np.shape(e.embedding) for e in entities}
        if len(dims) > 1:
            raise DimensionError(f"group {group_id!r}: inconsistent embedding dimensions {sorted(dims)}")
        return cls(group_id, tuple(e.id for e in entities),
                   np.array([e.embedding for e in entities], dtype=np.float64),
                   gold_ranks, rank_order)

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def entities(self) -> list[Entity]:
        return [Entity(i, e) for i, e in zip(self.entity_ids, self.embeddings)]

    def normalized(self) -> "RankingGroup":
        """Return an ascending-order copy (rank 1 = first tour position)."""
        if self.rank_order is RankOrder.ASCENDING or self.gold_ranks is None:
            return replace(self, rank_order=RankOrder.ASCENDING)
        flipped = tuple(self.n + 1 - y for y in self.gold_ranks)
        return replace(self, gold_ranks=flipped, rank_order=RankOrder.ASCENDING)

    def gold_tour(self) -> tuple[int, ...]:
        if self.gold_ranks is None:
            raise ValueError(f"group {self.group_id!r} has no gold ranks")
        return ranks_to_tour(self.normalized().gold_ranks)


@dataclass(frozen=True, eq=False)
class BilinearModel:
    """Pairwise scorer ``s(e_i, e_j) = h_i^T W h_j + b`` with ``h = encode(e)``.

    ``encoder`` is ``"identity"`` or ``"linear"``; the linear encoder maps
    ``h = M @ raw + c`` with ``M`` of shape (d, d_in).
    """

    W: np.ndarray
    b: float = 0.0
    encoder: str = "identity"
    M: np.ndarray | None = None
    c: np.ndarray | None = None

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 1:
            raise DimensionError(f"W must be a square d x d matrix, got shape {W.shape}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", float(self.b))
        if self.encoder == "identity":
            if self.M is not None or self.c is not None:
                raise ValueError("identity encoder takes no parameters")
        elif self.encoder == "linear":
            M = np.array(self.M, dtype=np.float64)
            c = np.array(self.c, dtype=np.float64)
            if M.ndim != 2 or M.shape[0] != W.shape[0]:
                raise DimensionError(f"encoder M must be d x d_in with d={W.shape[0]}, got {M.shape}")
            if c.shape != (W.shape[0],):
                raise DimensionError(f"encoder c must have shape ({W.shape[0]},), got {c.shape}")
            object.__setattr__(self, "M", M)
            object.__setattr__(self, "c", c)
        else:
            raise ValueError(f"unknown encoder {self.encoder!r}")
        for name in ("W", "M", "c"):
            arr = getattr(self, name)
            if arr is not None:
                if not np.all(np.isfinite(arr)):
                    raise ValueError(f"non-finite values in {name}")
                arr.setflags(write=False)
        if not np.isfinite(self.b):
            raise ValueError("non-finite bias")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.d if self.encoder == "identity" else self.M.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        out = {"W": self.W, "b": np.array(self.b)}
        if self.encoder == "linear":
            out["M"] = self.M
            out["c"] = self.c
        return out

    def with_params(self, **params) -> "BilinearModel":
        if "b" in params:
            params["b"] = float(params["b"])
        return replace(self, **params)

    @classmethod
    def init(cls, input_dim: int, encoder: str = "identity", d: int | None = None,
             seed: int = 0, scale: float = 0.01) -> "BilinearModel":
        """Small random W, zero bias; a linear encoder starts as the identity map."""
        rng = np.random.default_rng(seed)
        d = input_dim if d is None else d
        W = scale * rng.standard_normal((d, d))
        if encoder == "identity":
            if d != input_dim:
                raise DimensionError("identity encoder needs d == input_dim")
            return cls(W, 0.0)
        M = np.eye(d, input_dim)
        return cls(W, 0.0, "linear", M, np.zeros(d))


def encode(model: BilinearModel, raw) -> np.ndarray:
    """Apply the model's encoder to one vector or to the rows of a matrix."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != model.input_dim:
        raise DimensionError(f"encoder expects dimension {model.input_dim}, got {raw.shape[-1]}")
    if model.encoder == "identity":
        return raw
    if raw.ndim == 1:
        return model.M @ raw + model.c
    return raw @ model.M.T + model.c


def _left(h: np.ndarray, W: np.ndarray) -> np.ndarray:
    return h @ W


def score_pair(model: BilinearModel, e_i, e_j) -> float:
    """Bilinear score of ranking ``e_j`` immediately after ``e_i`` (already encoded)."""
    e_i = np.asarray(e_i, dtype=np.float64)
    e_j = np.asarray(e_j, dtype=np.float64)
    if e_i.shape != (model.d,) or e_j.shape != (model.d,):
        raise DimensionError(f"score_pair expects two {model.d}-vectors, got {e_i.shape} and {e_j.shape}")
    # Same reduction as build_adjacency so the two agree bit for bit.
    return float(np.sum(_left(e_i, model.W) * e_j) + model.b)


def build_adjacency(model: BilinearModel, group: RankingGroup | np.ndarray) -> np.ndarray:
    """N x N matrix with A[i, j] = s(h_i, h_j) off the diagonal, INVALID on it."""
    raw = group.embeddings if isinstance(group, RankingGroup) else np.asarray(group, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise DimensionError("build_adjacency needs a non-empty N x d embedding matrix")
    H = np.ascontiguousarray(encode(model, raw))
    n = H.shape[0]
    A = np.empty((n, n))
    for i in range(n):
        A[i] = np.sum(_left(H[i], model.W) * H, axis=1) + model.b
    np.fill_diagonal(A, INVALID)
    off = ~np.eye(n, dtype=bool)
    if not np.all(np.isfinite(A[off])):
        raise FloatingPointError("non-finite pairwise score")
    return A


def as_adjacency(values) -> np.ndarray:
    """Validate a square score matrix and stamp the invalid diagonal."""
    A = np.array(values, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise DimensionError(f"adjacency must be a non-empty square matrix, got shape {A.shape}")
    np.fill_diagonal(A, INVALID)
    if not np.all(np.isfinite(A[~np.eye(A.shape[0], dtype=bool)])):
        raise ValueError("off-diagonal adjacency entries must be finite")
    return A


def check_tour(order: Sequence[int], n: int | None = None) -> tuple[int, ...]:
    order = tuple(int(i) for i in order)
    if sorted(order) != list(range(len(order))):
        raise ValueError(f"tour {list(order)} is not a permutation of 0..{len(order) - 1}")
    if n is not None and len(order) != n:
        raise DimensionError(f"tour length {len(order)} does not match n={n}")
    return order


def tour_to_ranks(order: Sequence[int]) -> list[int]:
    order = check_tour(order)
    ranks = [0] * len(order)
    for pos, node in enumerate(order):
        ranks[node] = pos + 1
    return ranks


def ranks_to_tour(ranks: Sequence[int]) -> tuple[int, ...]:
    ranks = check_permutation(ranks)
    return tuple(sorted(range(len(ranks)), key=ranks.__getitem__))


def tour_score(adj: np.ndarray, order: Sequence[int]) -> float:
    order = check_tour(order, adj.shape[0])
    total = 0.0
    for a, b in zip(order, order[1:]):
        total += adj[a, b]
    return float(total)


@dataclass(frozen=True)
class EdgeSelection:
    """Binary decision matrix x_ij stored sparsely as a set of (i, j) edges."""

    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        edges = frozenset((int(i), int(j)) for i, j in self.edges)
        for i, j in edges:
            if i == j or not (0 <= i < self.n and 0 <= j < self.n):
                raise InvalidSelectionError(f"edge {(i, j)} invalid for n={self.n}")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_tour(cls, order: Sequence[int]) -> "EdgeSelection":
        order = check_tour(order)
        return cls(len(order), frozenset(zip(order, order[1:])))

    @classmethod
    def from_matrix(cls, x) -> "EdgeSelection":
        x = np.asarray(x)
        return cls(x.shape[0], frozenset(zip(*map(lambda a: a.tolist(), np.nonzero(x > 0.5)))))

    def to_matrix(self) -> np.ndarray:
        x = np.zeros((self.n, self.n))
        for i, j in self.edges:
            x[i, j] = 1.0
        return x

    def path_violation(self) -> str | None:
        """Name of the first violated valid-path property, or None."""
        n = self.n
        out_deg = [0] * n
        in_deg = [0] * n
        succ = {}
        for i, j in self.edges:
            out_deg[i] += 1
            in_deg[j] += 1
            succ[i] = j
        if any(d > 1 for d in out_deg):
            return "degree violation: a node has out-degree > 1"
        if any(d > 1 for d in in_deg):
            return "degree violation: a node has in-degree > 1"
        if len(self.edges) != n - 1:
            # with degrees <= 1, too many edges forces a cycle
            if len(self.edges) >= n:
                return "cycle detected"
        starts = [i for i in range(n) if in_deg[i] == 0]
        visited = set()
        for s in starts:
            node = s
            while node is not None:
                visited.add(node)
                node = succ.get(node)
        if len(visited) < n:
            return "cycle detected"
        if len(starts) != 1:
            return f"multiple components: {len(starts)} separate paths"
        return None

    def is_valid_path(self) -> bool:
        return self.path_violation() is None


def edges_to_tour(sel: EdgeSelection) -> tuple[int, ...]:
    problem = sel.path_violation()
    if problem is not None:
        raise InvalidSelectionError(f"invalid edge selection: {problem}")
    if sel.n == 1:
        return (0,)
    succ = dict(sel.edges)
    heads = set(succ.values())
    node = next(i for i in range(sel.n) if i not in heads)
    order = [node]
    while node in succ:
        node = succ[node]
        order.append(node)
    return tuple(order)


def tour_to_edges(order: Sequence[int]) -> EdgeSelection:
    return EdgeSelection.from_tour(order)
