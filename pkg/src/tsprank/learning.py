"""Local (row-wise weighted cross-entropy) and global (structured max-margin) training."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (BilinearModel, EdgeSelection, RankingGroup, build_adjacency, edges_to_tour,
                   encode, tour_score, tour_to_ranks)
from .errors import DimensionError, SolverTimeout
from .metrics import kendall_tau
from .solvers import SolverBackend, loss_augment, solve

logger = logging.getLogger(__name__)

WEIGHTINGS = ("none", "rank", "flipped")


@dataclass
class TrainConfig:
    mode: str = "local"                 # "local" or "global"
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 100
    extra_epochs: int = 50              # added on top of ``epochs`` in global mode only
    batch_size: int = 32
    position_weighting: str = "flipped"
    optimizer: str = "adam"             # "adam" (decoupled decay) or "sgd"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    solver: str = "auto"
    time_budget_ms: float | None = 10_000.0
    hybrid: bool = True                 # global mode: alternate with local batches (False = global only)

    def __post_init__(self):
        if self.mode not in ("local", "global"):
            raise ValueError(f"mode must be 'local' or 'global', got {self.mode!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.extra_epochs < 0:
            raise ValueError("epochs and batch_size must be >= 1, extra_epochs >= 0")
        if self.position_weighting not in WEIGHTINGS:
            raise ValueError(f"position_weighting must be one of {WEIGHTINGS}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        self.betas = tuple(self.betas)

    @property
    def total_epochs(self) -> int:
        return self.epochs + (self.extra_epochs if self.mode == "global" else 0)

    def backend(self) -> SolverBackend:
        return SolverBackend(self.solver, self.time_budget_ms)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class GradientBundle:
    dW: np.ndarray
    db: float
    dM: np.ndarray | None = None
    dc: np.ndarray | None = None
    loss_value: float = 0.0

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {"W": self.dW, "b": np.array(self.db)}
        if self.dM is not None:
            out["M"] = self.dM
            out["c"] = self.dc
        return out


# -- targets and weights -----------------------------------------------------------------

def target_adjacency(group: RankingGroup) -> np.ndarray:
    """0/1 matrix with a one at (i, j) iff j is ranked immediately after i."""
    if group.gold_ranks is None:
        raise ValueError(f"group {group.group_id!r} has no gold ranks")
    order = group.gold_tour()
    At = np.zeros((group.n, group.n))
    for a, b in zip(order, order[1:]):
        At[a, b] = 1.0
    return At


def gold_selection(group: RankingGroup) -> EdgeSelection:
    return EdgeSelection.from_tour(group.gold_tour())


def position_weights(group: RankingGroup, scheme: str = "flipped") -> np.ndarray:
    """Per-entity weights: ones, the rank y, or N + 1 - y."""
    if group.gold_ranks is None:
        raise ValueError(f"group {group.group_id!r} has no gold ranks")
    y = np.asarray(group.normalized().gold_ranks, dtype=np.float64)
    if scheme == "none":
        return np.ones_like(y)
    if scheme == "rank":
        return y
    if scheme == "flipped":
        return group.n + 1.0 - y
    raise ValueError(f"unknown weighting scheme {scheme!r}")


def successor_row_weights(entity_weights: np.ndarray, At: np.ndarray) -> np.ndarray:
    """Weight of row i is the weight of its gold successor (zero for rows without one)."""
    has = At.sum(axis=1) > 0
    k = np.argmax(At, axis=1)
    return np.where(has, entity_weights[k], 0.0)


# -- losses ------------------------------------------------------------------------------

def local_loss(A_p: np.ndarray, A_t: np.ndarray, weights) -> tuple[float, np.ndarray]:
    """Weighted row-wise softmax cross-entropy against the gold successor.

    The diagonal is masked out of every softmax; rows without a gold
    successor contribute nothing.
    """
    n = A_p.shape[0]
    weights = np.asarray(weights, dtype=np.float64)
    if A_p.shape != (n, n) or A_t.shape != (n, n) or weights.shape != (n,):
        raise DimensionError(f"local_loss shape mismatch: {A_p.shape}, {A_t.shape}, {weights.shape}")
    grad = np.zeros((n, n))
    loss = 0.0
    mask = ~np.eye(n, dtype=bool)
    for i in range(n):
        if not A_t[i].any():
            continue
        if n < 2:
            raise ValueError(f"row {i} has no unmasked candidates")
        k = int(np.argmax(A_t[i]))
        logits = A_p[i, mask[i]]
        cols = np.flatnonzero(mask[i])
        shift = logits.max()
        z = np.exp(logits - shift)
        total = z.sum()
        log_prob = logits[cols == k][0] - shift - np.log(total)
        loss -= weights[i] * log_prob
        p = z / total
        p[cols == k] -= 1.0
        grad[i, cols] = weights[i] * p
    return float(loss), grad


def structured_margin(x: EdgeSelection, x_t: EdgeSelection) -> int:
    """Number of edges selected in ``x`` that are absent from ``x_t``."""
    if x.n != x_t.n:
        raise DimensionError(f"selections differ in size: {x.n} vs {x_t.n}")
    return len(x.edges - x_t.edges)


def global_loss(A_p: np.ndarray, x_t: EdgeSelection, backend: SolverBackend | str = "auto"
                ) -> tuple[float, np.ndarray, EdgeSelection]:
    """Structured hinge loss via loss-augmented inference, with its subgradient."""
    aug = loss_augment(A_p, x_t)
    tour, aug_score = solve(aug, backend)
    x_star = EdgeSelection.from_tour(tour)
    gold_score = tour_score(A_p, edges_to_tour(x_t))
    n = A_p.shape[0]
    if x_star == x_t:
        return 0.0, np.zeros((n, n)), x_star
    loss = max(0.0, aug_score - gold_score)
    if loss == 0.0:
        return 0.0, np.zeros((n, n)), x_star
    return loss, x_star.to_matrix() - x_t.to_matrix(), x_star


# -- gradients ---------------------------------------------------------------------------

def backprop_to_params(model: BilinearModel, group: RankingGroup | np.ndarray,
                       dA: np.ndarray, loss_value: float = 0.0) -> GradientBundle:
    """Chain rule from dL/dA through A_ij = h_i^T W h_j + b (diagonal ignored)."""
    raw = group.embeddings if isinstance(group, RankingGroup) else np.asarray(group, dtype=np.float64)
    n = raw.shape[0]
    if dA.shape != (n, n):
        raise DimensionError(f"dL/dA has shape {dA.shape}, expected {(n, n)}")
    G = np.array(dA, dtype=np.float64)
    np.fill_diagonal(G, 0.0)
    H = encode(model, raw)
    dW = H.T @ G @ H
    db = float(G.sum())
    if model.encoder == "identity":
        return GradientBundle(dW, db, loss_value=loss_value)
    dH = G @ H @ model.W.T + G.T @ H @ model.W
    return GradientBundle(dW, db, dH.T @ raw, dH.sum(axis=0), loss_value)


def group_gradient(model: BilinearModel, group: RankingGroup, mode: str, weighting: str = "flipped",
                   backend: SolverBackend | str = "auto") -> GradientBundle:
    A = build_adjacency(model, group)
    if mode == "local":
        At = target_adjacency(group)
        w = successor_row_weights(position_weights(group, weighting), At)
        loss, dA = local_loss(A, At, w)
    else:
        loss, dA, _ = global_loss(A, gold_selection(group), backend)
    return backprop_to_params(model, group, dA, loss)


# -- optimiser ---------------------------------------------------------------------------

class Optimizer:
    """Adam or SGD with decoupled weight decay: p <- p (1 - lr wd) - lr step."""

    def __init__(self, config: TrainConfig):
        self.cfg = config
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, model: BilinearModel, grads: dict[str, np.ndarray]) -> BilinearModel:
        cfg = self.cfg
        lr, wd = cfg.learning_rate, cfg.weight_decay
        self.t += 1
        new = {}
        for name, p in model.params().items():
            g = np.asarray(grads[name], dtype=np.float64)
            p = p * (1.0 - lr * wd)
            if cfg.optimizer == "sgd":
                p = p - lr * g
            else:
                b1, b2 = cfg.betas
                m = self.m.get(name, np.zeros_like(g))
                v = self.v.get(name, np.zeros_like(g))
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                self.m[name], self.v[name] = m, v
                m_hat = m / (1 - b1 ** self.t)
                v_hat = v / (1 - b2 ** self.t)
                p = p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            new[name] = p
        return model.with_params(**new)


# -- training and inference --------------------------------------------------------------

@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    best_epoch: int | None = None
    skipped_timeouts: int = 0


def predict(model: BilinearModel, group: RankingGroup, backend: SolverBackend | str = "auto"
            ) -> tuple[tuple[int, ...], list[int]]:
    tour, _ = solve(build_adjacency(model, group), backend)
    return tour, tour_to_ranks(tour)


def mean_tau(model: BilinearModel, groups, backend: SolverBackend | str = "auto") -> float:
    taus = []
    for g in groups:
        _, ranks = predict(model, g, backend)
        taus.append(kendall_tau(ranks, g.normalized().gold_ranks))
    return float(np.mean(taus))


def train(model: BilinearModel, groups, config: TrainConfig, valid_groups=None,
          on_epoch=None) -> tuple[BilinearModel, TrainingLog]:
    """Fit ``model`` to gold rankings.

    Local mode uses the local loss on every batch. Global mode alternates by
    running batch index: even batches use the max-margin loss, odd batches
    the local loss (``hybrid=False`` keeps every batch global). Global
    batches whose solve times out skip that group.
    """
    groups = [g.normalized() for g in groups]
    if not groups:
        raise ValueError("no training groups")
    for g in groups:
        if g.gold_ranks is None:
            raise ValueError(f"group {g.group_id!r} has no gold ranks")
        if g.dim != model.input_dim:
            raise DimensionError(f"group {g.group_id!r} has dimension {g.dim}, model expects {model.input_dim}")
    valid_groups = [g.normalized() for g in valid_groups] if valid_groups else None
    backend = config.backend()
    rng = np.random.default_rng(config.seed)
    opt = Optimizer(config)
    log = TrainingLog()
    best_tau, best_model = -np.inf, model
    batch_index = 0
    for epoch in range(config.total_epochs):
        perm = rng.permutation(len(groups))
        losses = []
        for start in range(0, len(groups), config.batch_size):
            batch = [groups[i] for i in perm[start:start + config.batch_size]]
            if config.mode == "local" or (config.hybrid and batch_index % 2):
                mode = "local"
            else:
                mode = "global"
            batch_index += 1
            total = None
            used = 0
            for g in batch:
                try:
                    bundle = group_gradient(model, g, mode, config.position_weighting, backend)
                except SolverTimeout as exc:
                    log.skipped_timeouts += 1
                    logger.warning("epoch %d: skipping group %s: %s", epoch, g.group_id, exc)
                    continue
                grads = bundle.as_dict()
                total = grads if total is None else {k: total[k] + grads[k] for k in total}
                losses.append(bundle.loss_value)
                used += 1
            if used:
                model = opt.step(model, {k: v / used for k, v in total.items()})
        record = {"epoch": epoch + 1, "mean_loss": float(np.mean(losses)) if losses else None}
        if valid_groups:
            tau = mean_tau(model, valid_groups, backend)
            record["valid_tau"] = tau
            if tau > best_tau:
                best_tau, best_model, log.best_epoch = tau, model, epoch + 1
        log.records.append(record)
        if on_epoch is not None:
            on_epoch(record)
    if valid_groups:
        model = best_model
    return model, log
