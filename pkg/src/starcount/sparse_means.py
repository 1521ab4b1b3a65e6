"""Spike-and-slab sparse means for rounded data.

Each ``y_i`` is the rounding of ``z_i = theta_i + eps_i`` with
``theta_i ~ gamma_i N(0, sigma^2 psi) + (1 - gamma_i) delta_0``. The latent
covariance given ``gamma`` is diagonal, so the marginal likelihood is a
product of univariate interval probabilities and the inclusion odds of
coordinate ``i`` involve coordinate ``i`` alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy import optimize, special

from .discretization import RoundingScheme, Transformation, interval_image
from .gauss import sample_truncnorm
from .kernels import ln_normal_prob
from .star_linear import pseudo_data

UNIFORM_ROOT = "uniform-root"


@dataclass(frozen=True, eq=False)
class SparseMeansConfig:
    """Model settings.

    ``psi`` fixes the slab scale; leave it ``None`` for the prior
    ``psi^{1/2} ~ Uniform(0, n^{1/2})``. ``rounding=False`` gives the
    Gaussian model that treats ``g(y)`` as exactly observed.
    """
    scheme: RoundingScheme
    transform: Transformation
    sigma: float = 1.0
    a_pi: float = 1.0
    b_pi: float = 1.0
    psi: float | None = None
    rounding: bool = True

    def __post_init__(self):
        if not (self.a_pi > 0 and self.b_pi > 0):
            raise ValueError("Beta hyperparameters must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.psi is not None and self.psi < 0:
            raise ValueError("psi must be nonnegative")


@dataclass(frozen=True, eq=False)
class SparseMeansState:
    gamma: np.ndarray
    theta: np.ndarray
    pi: float
    psi: float


def _bounds(config: SparseMeansConfig, y):
    if config.rounding:
        box = interval_image(config.transform, config.scheme, y)
        return box.lower, box.upper
    z = np.asarray(config.transform(np.asarray(y, dtype=float)), dtype=float)
    return z, z


def coordinate_loglik(config: SparseMeansConfig, y, psi: float):
    """Per-coordinate log likelihoods under the spike and under the slab."""
    lo, hi = _bounds(config, y)
    out = []
    for scale in (config.sigma, config.sigma * math.sqrt(1.0 + psi)):
        if config.rounding:
            out.append(ln_normal_prob(lo / scale, hi / scale))
        else:
            out.append(-0.5 * (lo / scale) ** 2 - math.log(scale) - 0.5 * math.log(2 * math.pi))
    return out[0], out[1]


def marginal_loglik(config: SparseMeansConfig, y, gamma, psi: float) -> float:
    gamma = np.asarray(gamma, dtype=bool)
    lp0, lp1 = coordinate_loglik(config, y, psi)
    if gamma.shape != lp0.shape:
        raise ValueError("gamma and y lengths differ")
    return float(np.sum(np.where(gamma, lp1, lp0)))


def inclusion_log_odds(config: SparseMeansConfig, y, pi: float, psi: float) -> np.ndarray:
    lp0, lp1 = coordinate_loglik(config, y, psi)
    return math.log(pi) - math.log1p(-pi) + lp1 - lp0


def sample_theta(config: SparseMeansConfig, y, gamma, psi: float, rng: np.random.Generator) -> np.ndarray:
    """Componentwise ``theta_i = V_1i + psi/(1+psi) V_0i`` on the slab, 0 on the spike."""
    gamma = np.asarray(gamma, dtype=bool)
    theta = np.zeros(gamma.shape[0])
    idx = np.flatnonzero(gamma)
    if idx.size == 0:
        return theta
    s2 = config.sigma ** 2
    lo, hi = _bounds(config, np.asarray(y)[idx])
    if config.rounding:
        v0 = sample_truncnorm(0.0, math.sqrt(s2 * (1.0 + psi)), lo, hi, rng)
    else:
        v0 = lo
    v1 = rng.standard_normal(idx.size) * math.sqrt(s2 * psi / (1.0 + psi))
    vals = v1 + psi / (1.0 + psi) * v0
    # a slab draw of exactly zero would be read as the spike
    vals[vals == 0.0] = np.finfo(float).tiny
    theta[idx] = vals
    return theta


def sample_truncated_gamma(shape: float, rate: float, lower: float, rng: np.random.Generator) -> float:
    """Exact draw with density proportional to ``x^{shape-1} exp(-rate x)`` on ``[lower, inf)``.

    Covers the improper-on-(0, inf) cases ``shape <= 0`` that remain proper
    once truncated away from zero: ``rate = 0`` needs ``shape < 0``.
    """
    u = rng.random()
    if rate == 0.0:
        if shape >= 0:
            raise ValueError("rate 0 needs a negative shape")
        return lower * (1.0 - u) ** (1.0 / shape)
    if shape > 0:
        q = special.gammaincc(shape, rate * lower)
        if q > 0:
            x = special.gammainccinv(shape, u * q) / rate
            if np.isfinite(x) and x >= lower:
                return float(x)
        return lower + rng.standard_exponential() / rate
    if shape < 0:
        raise ValueError("negative shape needs rate 0")
    # shape 0: the tail mass is the exponential integral E1(rate x)
    total = special.exp1(rate * lower)
    if not total > 0:
        return lower + rng.standard_exponential() / rate
    target = math.log1p(-u) + math.log(total)
    hi = lower + 1.0 / rate
    while math.log(special.exp1(rate * hi)) > target:
        hi = lower + 2.0 * (hi - lower)
    f = lambda x: math.log(special.exp1(rate * x)) - target
    return float(optimize.brentq(f, lower, hi, xtol=1e-15 * hi, rtol=1e-13))


def update_psi(config: SparseMeansConfig, gamma, theta, n: int, rng: np.random.Generator) -> float:
    """``psi^{-1} ~ Gamma(k/2 - 1/2, sum theta^2 / (2 sigma^2))`` truncated to ``[1/n, inf)``."""
    k = int(np.sum(gamma))
    rate = float(np.sum(np.asarray(theta) ** 2)) / (2.0 * config.sigma ** 2)
    tau = sample_truncated_gamma(0.5 * k - 0.5, rate, 1.0 / n, rng)
    return 1.0 / tau


def gibbs_sweep(config: SparseMeansConfig, y, state: SparseMeansState,
                rng: np.random.Generator) -> SparseMeansState:
    """One sweep: gamma (all coordinates), pi, theta, then psi."""
    y = np.asarray(y)
    n = y.shape[0]
    log_odds = inclusion_log_odds(config, y, state.pi, state.psi)
    prob = special.expit(log_odds)
    gamma = rng.random(n) < prob
    k = int(gamma.sum())
    pi = float(rng.beta(config.a_pi + k, config.b_pi + n - k))
    pi = min(max(pi, 1e-300), 1.0 - 1e-16)
    theta = sample_theta(config, y, gamma, state.psi, rng)
    psi = state.psi if config.psi is not None else update_psi(config, gamma, theta, n, rng)
    return SparseMeansState(gamma, theta, pi, psi)


def initial_state(config: SparseMeansConfig, y, rng: np.random.Generator) -> SparseMeansState:
    n = np.asarray(y).shape[0]
    psi = config.psi if config.psi is not None else min(1.0, float(n))
    gamma = np.zeros(n, dtype=bool)
    return SparseMeansState(gamma, np.zeros(n), 0.5, psi)


class ChainResult(NamedTuple):
    inclusion_probs: np.ndarray
    theta_draws: np.ndarray
    gamma_draws: np.ndarray
    pi_draws: np.ndarray
    psi_draws: np.ndarray


def run_chain(config: SparseMeansConfig, y, sweeps: int, burnin: int,
              rng: np.random.Generator, state: SparseMeansState | None = None) -> ChainResult:
    if sweeps <= burnin:
        raise ValueError("sweeps must exceed burnin")
    y = np.asarray(y)
    config.scheme.check_support(y)
    state = initial_state(config, y, rng) if state is None else state
    keep = sweeps - burnin
    n = y.shape[0]
    thetas = np.empty((keep, n))
    gammas = np.empty((keep, n), dtype=bool)
    pis = np.empty(keep)
    psis = np.empty(keep)
    for s in range(sweeps):
        state = gibbs_sweep(config, y, state, rng)
        if s >= burnin:
            j = s - burnin
            thetas[j], gammas[j], pis[j], psis[j] = state.theta, state.gamma, state.pi, state.psi
    return ChainResult(gammas.mean(axis=0), thetas, gammas, pis, psis)


def two_means(values, max_iter: int = 100):
    """Lloyd's algorithm with two clusters; returns (labels, centers)."""
    v = np.asarray(values, dtype=float)
    centers = np.array([v.min(), v.max()])
    labels = np.zeros(v.shape[0], dtype=int)
    for _ in range(max_iter):
        new = (np.abs(v - centers[1]) < np.abs(v - centers[0])).astype(int)
        for c in (0, 1):
            if np.any(new == c):
                centers[c] = v[new == c].mean()
        if np.array_equal(new, labels):
            break
        labels = new
    return labels, centers


def estimate_sigma_2means(y, scheme: RoundingScheme | None = None,
                          transform: Transformation | None = None, rounding: bool = True) -> float:
    """Pooled within-cluster standard deviation of a two-cluster fit to pseudo-data.

    With rounding, pseudo-data are interval midpoints and the within-cluster
    variance is floored at the mean within-interval rounding variance
    ``width^2 / 12`` so that tight clusters stay identifiable.
    """
    y = np.asarray(y)
    if y.shape[0] < 4:
        raise ValueError("need at least four observations")
    transform = Transformation.identity() if transform is None else transform
    scheme = RoundingScheme.floor_half() if scheme is None else scheme
    if rounding:
        m = pseudo_data(transform, scheme, y)
        box = interval_image(transform, scheme, y)
        w = box.upper - box.lower
        w = w[np.isfinite(w)]
        floor = float(np.mean(w ** 2)) / 12.0 if w.size else 0.0
    else:
        m = np.asarray(transform(np.asarray(y, dtype=float)), dtype=float)
        floor = 0.0
    if np.ptp(m) == 0:
        raise ValueError("pseudo-data take a single value")
    labels, centers = two_means(m)
    resid = m - centers[labels]
    pooled = float(resid @ resid) / max(m.shape[0] - 2, 1)
    return max(math.sqrt(max(pooled, floor)), 1e-6)


def with_sigma(config: SparseMeansConfig, sigma: float) -> SparseMeansConfig:
    return replace(config, sigma=sigma)
