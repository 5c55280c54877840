"""Ranking and trading metrics.

Rank vectors are indexed by entity: ``ranks[i]`` is the position (1-based)
of entity ``i``. ``ndcg_at_k`` instead takes an entity order (a tour).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import check_permutation
from .errors import UndefinedMetricError


def _pair(predicted, gold) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(check_permutation(predicted, "predicted ranks"))
    g = np.asarray(check_permutation(gold, "gold ranks"))
    if p.shape != g.shape:
        raise ValueError(f"rank vectors differ in length: {len(p)} vs {len(g)}")
    return p, g


def kendall_tau(predicted: Sequence[int], gold: Sequence[int]) -> float:
    """(concordant - discordant) / (n (n - 1) / 2), counted over every pair."""
    p, g = _pair(predicted, gold)
    n = len(p)
    if n < 2:
        raise UndefinedMetricError("Kendall's tau needs at least 2 entities")
    iu = np.triu_indices(n, k=1)
    agree = np.sign(p[:, None] - p[None, :])[iu] * np.sign(g[:, None] - g[None, :])[iu]
    concordant = int(np.sum(agree > 0))
    discordant = int(np.sum(agree < 0))
    return (concordant - discordant) / (n * (n - 1) / 2)


def first_relevant_rank(predicted: Sequence[int], gold: Sequence[int]) -> int:
    """Predicted position of the entity whose gold rank is 1."""
    p, g = _pair(predicted, gold)
    return int(p[np.flatnonzero(g == 1)[0]])


def mrr(first_relevant_ranks: Sequence[int]) -> float:
    ranks = np.asarray(first_relevant_ranks, dtype=np.float64)
    if ranks.size == 0:
        raise UndefinedMetricError("MRR of an empty query set")
    if np.any(ranks < 1):
        raise ValueError("ranks must be >= 1")
    return float(np.mean(1.0 / ranks))


def exact_match(predicted: Sequence[int], gold: Sequence[int]) -> float:
    p, g = _pair(predicted, gold)
    return float(np.mean(p == g))


def rmse(predicted: Sequence[int], gold: Sequence[int]) -> float:
    p, g = _pair(predicted, gold)
    return float(np.sqrt(np.mean((p - g).astype(np.float64) ** 2)))


def map_at_k(predicted: Sequence[int], gold: Sequence[int], k: int) -> float:
    """Average precision over the predicted top-k; relevant means gold rank <= k."""
    p, g = _pair(predicted, gold)
    if not 1 <= k <= len(p):
        raise ValueError(f"k={k} out of range for n={len(p)}")
    order = np.argsort(p)[:k]
    hits = 0
    precisions = []
    for pos, entity in enumerate(order, start=1):
        if g[entity] <= k:
            hits += 1
            precisions.append(hits / pos)
    return float(np.mean(precisions)) if precisions else 0.0


def gains_from_ranks(gold: Sequence[int]) -> np.ndarray:
    """Linear gain N + 1 - rank, so the best entity has gain N."""
    g = np.asarray(check_permutation(gold, "gold ranks"), dtype=np.float64)
    return len(g) + 1.0 - g


def ndcg_at_k(order: Sequence[int], gains, k: int) -> float:
    """DCG@k of the entity ``order`` (log2(position + 1) discount) over the ideal DCG@k."""
    gains = np.asarray(gains, dtype=np.float64)
    order = np.asarray(order, dtype=np.int64)
    n = len(gains)
    if sorted(order.tolist()) != list(range(n)):
        raise ValueError("order must be a permutation of entity indices")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for n={n}")
    if np.any(gains < 0):
        raise ValueError("gains must be nonnegative")
    discount = 1.0 / np.log2(np.arange(2, k + 2))
    ideal = float(np.sort(gains)[::-1][:k] @ discount)
    if ideal == 0.0:
        raise UndefinedMetricError("NDCG undefined when all gains are zero")
    return float(gains[order[:k]] @ discount) / ideal


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Daily prices (days x entities) and the predicted ranks used to trade.

    ``rankings[t]`` is produced on day ``t`` and decides the holdings from
    day ``t`` to day ``t + 1``; there are ``days - 1`` of them.
    """

    prices: np.ndarray
    rankings: np.ndarray
    k: int = 1
    risk_free_rate: float = 0.0

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=np.float64)
        rankings = np.asarray(self.rankings, dtype=np.int64)
        if prices.ndim != 2 or prices.shape[0] < 2:
            raise ValueError("prices need shape (days >= 2, entities)")
        if np.any(prices <= 0):
            raise ValueError("prices must be positive")
        if rankings.shape != (prices.shape[0] - 1, prices.shape[1]):
            raise ValueError(f"rankings must have shape {(prices.shape[0] - 1, prices.shape[1])}")
        if not 1 <= self.k <= prices.shape[1]:
            raise ValueError(f"k={self.k} out of range")
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "rankings", rankings)


def portfolio_returns(series: PriceSeries) -> np.ndarray:
    """Per-step summed simple return of the predicted top-k holdings."""
    ret = (series.prices[1:] - series.prices[:-1]) / series.prices[:-1]
    held = series.rankings <= series.k
    return np.sum(np.where(held, ret, 0.0), axis=1)


def irr_at_k(series: PriceSeries) -> float:
    """Cumulative (summed, not compounded) return of the daily top-k portfolio."""
    return float(np.sum(portfolio_returns(series)))


def sharpe_ratio(returns, risk_free_rate: float = 0.0) -> float:
    """Mean excess return over the sample (n - 1) standard deviation of returns."""
    r = np.asarray(returns, dtype=np.float64)
    if r.size < 2:
        raise UndefinedMetricError("Sharpe ratio needs at least 2 observations")
    sigma = float(np.std(r, ddof=1))
    if sigma <= 1e-12 * max(1.0, float(np.max(np.abs(r)))):
        raise UndefinedMetricError("Sharpe ratio undefined for zero-variance returns")
    return float(np.mean(r - risk_free_rate)) / sigma
