"""Posterior model probabilities and model-averaged prediction."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from . import star_linear as sl
from .nonlinear import DiagonalizedBasis, predict_nl


class ModelComparisonWarning(UserWarning):
    """Posterior weights are closer than their Monte Carlo error."""


@dataclass(frozen=True, eq=False)
class Candidate:
    """A fitted STAR model. Nonlinear candidates also carry their basis and psi."""
    model: sl.StarLinearModel
    label: str = ""
    basis: DiagonalizedBasis | None = None
    psi: float | None = None

    def predict(self, where, count: int, rng: np.random.Generator) -> np.ndarray:
        """Predictive draws at covariate rows (linear) or points (nonlinear)."""
        m = self.model
        if self.basis is not None:
            return predict_nl(self.basis, m.y, m.scheme, m.transform, self.psi, m.sigma,
                              where, count, rng)
        if m.is_gprior:
            return sl.predict_gprior(m, where, count, rng)
        return sl.predict_via_posterior(m, where, count, rng)


@dataclass(frozen=True, eq=False)
class CandidateSet:
    candidates: Sequence[Candidate]
    prior_weights: np.ndarray | None = None

    def __post_init__(self):
        cands = [c if isinstance(c, Candidate) else Candidate(c) for c in self.candidates]
        if not cands:
            raise ValueError("need at least one candidate model")
        K = len(cands)
        w = np.full(K, 1.0 / K) if self.prior_weights is None else np.asarray(self.prior_weights, float)
        if w.shape != (K,) or np.any(w < 0) or not w.sum() > 0:
            raise ValueError("prior weights must be a nonnegative vector with one entry per model")
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "prior_weights", w / w.sum())

    def __len__(self):
        return len(self.candidates)


class ModelProbs(NamedTuple):
    probs: np.ndarray
    log_marginals: np.ndarray
    rel_errs: np.ndarray
    close_call: bool


def weights_from_log_marginals(log_marg, prior_weights) -> np.ndarray:
    log_marg = np.asarray(log_marg, dtype=float)
    with np.errstate(divide="ignore"):
        lw = log_marg + np.log(np.asarray(prior_weights, dtype=float))
    if not np.any(np.isfinite(lw)):
        raise FloatingPointError("all marginal likelihoods underflow")
    lw = lw - np.max(lw)
    w = np.exp(lw)
    return w / w.sum()


def posterior_model_probs(cset: CandidateSet, y=None, n_samples: int = 20_000,
                          rng: np.random.Generator | None = None) -> ModelProbs:
    rng = np.random.default_rng() if rng is None else rng
    if y is not None:
        y = np.asarray(y).reshape(-1)
        for c in cset.candidates:
            if c.model.y.shape != y.shape or np.any(c.model.y != y):
                raise ValueError("all candidates must be fitted to the same response")
    logs, rels = [], []
    for c in cset.candidates:
        ml = sl.marginal_likelihood(c.model, n_samples, rng)
        logs.append(ml.log_value)
        rels.append(ml.rel_err)
    logs, rels = np.array(logs), np.array(rels)
    probs = weights_from_log_marginals(logs, cset.prior_weights)
    close = False
    if len(cset) > 1:
        lw = logs + np.log(np.where(cset.prior_weights > 0, cset.prior_weights, np.nan))
        order = np.argsort(-np.nan_to_num(lw, nan=-np.inf), kind="stable")
        a, b = order[0], order[1]
        gap = lw[a] - lw[b]
        close = bool(np.isfinite(gap) and gap < 3.0 * math.hypot(rels[a], rels[b]))
        if close:
            warnings.warn("top posterior model weights are within Monte Carlo error",
                          ModelComparisonWarning, stacklevel=2)
    return ModelProbs(probs, logs, rels, close)


def select_model(probs) -> int:
    """Index of the most probable model; ties go to the lowest index."""
    return int(np.argmax(np.asarray(probs)))


def log_prob_spread(log_marginals) -> float:
    return float(logsumexp(log_marginals))


def model_averaged_predict(cset: CandidateSet, where, count: int, rng: np.random.Generator,
                           probs=None, y=None, n_samples: int = 20_000):
    """Draw a model index per draw, then a predictive vector from that model.

    Returns ``(draws, model_draws)`` with 0-based model indices.
    """
    if probs is None:
        probs = posterior_model_probs(cset, y, n_samples, rng).probs
    probs = np.asarray(probs, dtype=float)
    ks = rng.choice(len(cset), size=count, p=probs / probs.sum())
    out = None
    for k in np.unique(ks):
        rows = np.flatnonzero(ks == k)
        draws = cset.candidates[k].predict(where, rows.shape[0], rng)
        if out is None:
            out = np.empty((count, draws.shape[1]), dtype=draws.dtype)
        out[rows] = draws
    return out, ks
