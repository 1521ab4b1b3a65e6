"""Scores and diagnostics for discrete predictions and Monte Carlo output."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True, eq=False)
class DiscreteForecast:
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=np.int64).reshape(-1)
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if s.shape != p.shape or s.size == 0:
            raise ValueError("support and probs must be nonempty and equally long")
        if np.any(np.diff(s) <= 0):
            raise ValueError("support must be strictly increasing")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probs must be nonnegative and sum to 1")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_draws(cls, draws) -> "DiscreteForecast":
        vals, counts = np.unique(np.asarray(draws, dtype=np.int64), return_counts=True)
        return cls(vals, counts / counts.sum())

    def cdf(self, j) -> np.ndarray:
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(self.support, np.asarray(j), side="right") - 1
        return np.where(idx >= 0, cum[np.clip(idx, 0, None)], 0.0)


def rps(forecast: DiscreteForecast, observed: int) -> float:
    """Ranked probability score on the integer lattice spanning support and observation."""
    lo = min(int(forecast.support[0]), int(observed))
    hi = max(int(forecast.support[-1]), int(observed))
    grid = np.arange(lo, hi + 1)
    F = forecast.cdf(grid)
    step = (grid >= observed).astype(float)
    return float(np.sum((F - step) ** 2))


def rps_from_draws(draws, observed) -> np.ndarray:
    """RPS per column of an integer draw matrix against each observation."""
    draws = np.atleast_2d(np.asarray(draws))
    observed = np.asarray(observed).reshape(-1)
    return np.array([rps(DiscreteForecast.from_draws(draws[:, i]), observed[i])
                     for i in range(draws.shape[1])])


class EssResult(NamedTuple):
    ess: float
    constant: bool


def autocorrelation(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def ess(chain) -> EssResult:
    """Effective sample size with the initial positive sequence cutoff."""
    x = np.asarray(chain, dtype=float).reshape(-1)
    n = x.shape[0]
    if n < 10:
        raise ValueError("chain must have at least 10 draws")
    if np.ptp(x) == 0:
        return EssResult(float(n), True)
    rho = autocorrelation(x)
    total = 0.0
    for m in range(0, n - 1, 2):
        pair = rho[m] + rho[m + 1]
        if pair <= 0:
            break
        total += pair
    tau = max(2.0 * total - 1.0, 1e-12)
    return EssResult(float(min(n / tau, n)), False)


def ess_percent(draws) -> np.ndarray:
    """ESS as a percentage of chain length, per column."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] == 1:
        draws = draws.T
    return np.array([100.0 * ess(draws[:, j]).ess / draws.shape[0] for j in range(draws.shape[1])])


class IntervalMetrics(NamedTuple):
    mean_width: float
    coverage: float


def interval_metrics(draws, observed, level: float = 0.9) -> IntervalMetrics:
    """Equal-tailed empirical prediction intervals per column."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    observed = np.asarray(observed, dtype=float).reshape(-1)
    if draws.shape[1] != observed.shape[0]:
        raise ValueError("one observation per draw column is required")
    need = math.ceil(2.0 / (1.0 - level) - 1e-9)
    if draws.shape[0] < need:
        raise ValueError(f"need at least {need} draws for a {level:g} interval")
    alpha = 1.0 - level
    lo = np.quantile(draws, alpha / 2, axis=0, method="inverted_cdf")
    hi = np.quantile(draws, 1 - alpha / 2, axis=0, method="inverted_cdf")
    inside = (observed >= lo) & (observed <= hi)
    return IntervalMetrics(float(np.mean(hi - lo)), float(np.mean(inside)))


class RocResult(NamedTuple):
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_auc(scores, labels) -> RocResult:
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n1 = int(labels.sum())
    n0 = labels.shape[0] - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("both classes must be present")
    ranks = rankdata(scores)
    auc = (ranks[labels].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0)
    thresholds = np.unique(scores)[::-1]
    tpr = np.concatenate([[0.0], [(scores[labels] >= t).mean() for t in thresholds]])
    fpr = np.concatenate([[0.0], [(scores[~labels] >= t).mean() for t in thresholds]])
    return RocResult(fpr, tpr, float(auc))
