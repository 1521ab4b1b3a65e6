"""Selection normal distributions with box selection regions.

``SelectionNormal(mu_z, mu_theta, sigma_z, sigma_theta, sigma_ztheta, C)`` is
the law of ``theta`` given ``z in C`` when ``(z, theta)`` is jointly Gaussian.
Every quantity reduces to Gaussian box probabilities and truncated draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .gauss import (BoxRegion, GaussianParams, TruncatedMVN, box_probability,
                    mvn_draws, psd_factor, stable_cholesky)

DEFAULT_MC = 20_000


class Estimate(NamedTuple):
    value: float
    rel_err: float


class Moments(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    mean_se: np.ndarray


def _mat(a, shape, name):
    a = np.asarray(a, dtype=float).reshape(shape) if np.size(a) == shape[0] * shape[1] else np.asarray(a, dtype=float)
    if a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class SelectionNormal:
    mu_z: np.ndarray
    mu_theta: np.ndarray
    sigma_z: np.ndarray
    sigma_theta: np.ndarray
    sigma_ztheta: np.ndarray
    region: BoxRegion

    def __post_init__(self):
        mu_z = np.asarray(self.mu_z, dtype=float).reshape(-1)
        mu_t = np.asarray(self.mu_theta, dtype=float).reshape(-1)
        n, p = mu_z.shape[0], mu_t.shape[0]
        sz = _mat(self.sigma_z, (n, n), "sigma_z")
        st = _mat(self.sigma_theta, (p, p), "sigma_theta")
        szt = _mat(self.sigma_ztheta, (n, p), "sigma_ztheta")
        if self.region.dim != n:
            raise ValueError("region dimension must match mu_z")
        for name, val in (("mu_z", mu_z), ("mu_theta", mu_t), ("sigma_z", 0.5 * (sz + sz.T)),
                          ("sigma_theta", 0.5 * (st + st.T)), ("sigma_ztheta", szt)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.mu_z.shape[0]

    @property
    def p(self) -> int:
        return self.mu_theta.shape[0]

    @classmethod
    def gaussian(cls, mean, cov) -> "SelectionNormal":
        """A plain Gaussian viewed as a selection normal with empty region."""
        mean = np.asarray(mean, dtype=float).reshape(-1)
        p = mean.shape[0]
        return cls(np.zeros(0), mean, np.zeros((0, 0)), np.atleast_2d(cov).reshape(p, p),
                   np.zeros((0, p)), BoxRegion(np.zeros(0), np.zeros(0)))

    # Sigma_z^{-1} applications through the Cholesky factor
    def _z_factor(self):
        if getattr(self, "_zf", None) is None:
            object.__setattr__(self, "_zf", stable_cholesky(self.sigma_z))
        return self._zf

    def z_solve(self, b) -> np.ndarray:
        return cho_solve((self._z_factor(), True), b)

    def gain(self) -> np.ndarray:
        """``Sigma_ztheta' Sigma_z^{-1}``, shape (p, n)."""
        if self.n == 0:
            return np.zeros((self.p, 0))
        return self.z_solve(self.sigma_ztheta).T

    def residual_cov(self) -> np.ndarray:
        """``Sigma_theta - Sigma_ztheta' Sigma_z^{-1} Sigma_ztheta``, symmetrized."""
        if self.n == 0:
            return self.sigma_theta.copy()
        W = solve_triangular(self._z_factor(), self.sigma_ztheta, lower=True)
        M = self.sigma_theta - W.T @ W
        return 0.5 * (M + M.T)

    def z_params(self) -> GaussianParams:
        return GaussianParams(self.mu_z, self.sigma_z)

    def truncated_v0(self) -> TruncatedMVN:
        """``V_0 ~ N(0, Sigma_z)`` restricted to ``C - mu_z``."""
        return TruncatedMVN(GaussianParams(np.zeros(self.n), self.sigma_z),
                            self.region.shift(self.mu_z))


def _log_gauss_density(theta, mean, cov) -> float:
    p = mean.shape[0]
    if p == 0:
        return 0.0
    L = stable_cholesky(cov)
    r = solve_triangular(L, theta - mean, lower=True)
    return float(-0.5 * r @ r - np.sum(np.log(np.diag(L))) - 0.5 * p * math.log(2 * math.pi))


def log_density(d: SelectionNormal, theta, n_samples: int = DEFAULT_MC,
                rng: np.random.Generator | None = None) -> Estimate:
    """Log density and the relative error of its Monte Carlo factor."""
    rng = np.random.default_rng() if rng is None else rng
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != d.p:
        raise ValueError("theta has the wrong length")
    base = _log_gauss_density(theta, d.mu_theta, d.sigma_theta)
    if d.n == 0 or d.region.is_unbounded():
        return Estimate(base, 0.0)
    Lt = stable_cholesky(d.sigma_theta)
    gain = cho_solve((Lt, True), d.sigma_ztheta.T).T  # Sigma_ztheta Sigma_theta^{-1}
    cond_mean = gain @ (theta - d.mu_theta) + d.mu_z
    cond_cov = d.sigma_z - gain @ d.sigma_ztheta.T
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    num = box_probability(GaussianParams(cond_mean, cond_cov), d.region, n_samples, rng)
    den = box_probability(d.z_params(), d.region, n_samples, rng)
    rel = math.hypot(num.rel_err, den.rel_err)
    return Estimate(base + num.log_estimate - den.log_estimate, rel)


def density(d: SelectionNormal, theta, n_samples: int = DEFAULT_MC,
            rng: np.random.Generator | None = None) -> Estimate:
    lv, rel = log_density(d, theta, n_samples, rng)
    return Estimate(math.exp(lv), rel)


def mgf(d: SelectionNormal, s, n_samples: int = DEFAULT_MC,
        rng: np.random.Generator | None = None) -> Estimate:
    rng = np.random.default_rng() if rng is None else rng
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.shape[0] != d.p:
        raise ValueError("s has the wrong length")
    gauss = float(s @ d.mu_theta + 0.5 * s @ d.sigma_theta @ s)
    if d.n == 0 or d.region.is_unbounded() or not np.any(s):
        return Estimate(math.exp(gauss), 0.0)
    num = box_probability(GaussianParams(d.mu_z + d.sigma_ztheta @ s, d.sigma_z), d.region,
                          n_samples, rng)
    den = box_probability(d.z_params(), d.region, n_samples, rng)
    return Estimate(math.exp(gauss + num.log_estimate - den.log_estimate),
                    math.hypot(num.rel_err, den.rel_err))


def sample(d: SelectionNormal, count: int, rng: np.random.Generator) -> np.ndarray:
    """Direct draws ``mu_theta + V_1 + Sigma_ztheta' Sigma_z^{-1} V_0``."""
    v1 = mvn_draws(np.zeros(d.p), d.residual_cov(), count, rng)
    if d.n == 0:
        return d.mu_theta + v1
    v0 = d.truncated_v0().sample(count, rng)
    return d.mu_theta + v1 + v0 @ d.gain().T


def moments(d: SelectionNormal, n_samples: int = DEFAULT_MC,
            rng: np.random.Generator | None = None) -> Moments:
    """Mean and covariance through Monte Carlo moments of the truncated ``V_0``."""
    rng = np.random.default_rng() if rng is None else rng
    if d.n == 0 or d.region.is_unbounded():
        return Moments(d.mu_theta.copy(), d.sigma_theta.copy(), np.zeros(d.p))
    v0 = d.truncated_v0().sample(n_samples, rng)
    G = d.gain()
    m0 = v0.mean(axis=0)
    c0 = np.atleast_2d(np.cov(v0, rowvar=False))
    mean = d.mu_theta + G @ m0
    cov = d.residual_cov() + G @ c0 @ G.T
    se = np.sqrt(np.maximum(np.diag(G @ c0 @ G.T), 0.0) / n_samples)
    return Moments(mean, 0.5 * (cov + cov.T), se)


def linear_combine(d: SelectionNormal, A, noise_mean=None, noise_cov=None) -> SelectionNormal:
    """The law of ``A theta + a`` with independent ``a ~ N(noise_mean, noise_cov)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    q = A.shape[0]
    if A.shape[1] != d.p:
        raise ValueError("A must have p columns")
    mu_a = np.zeros(q) if noise_mean is None else np.asarray(noise_mean, dtype=float).reshape(q)
    cov_a = np.zeros((q, q)) if noise_cov is None else np.asarray(noise_cov, dtype=float).reshape(q, q)
    return SelectionNormal(d.mu_z, A @ d.mu_theta + mu_a, d.sigma_z,
                           A @ d.sigma_theta @ A.T + cov_a, d.sigma_ztheta @ A.T, d.region)


def sequential_update(prior: SelectionNormal, X, sigma: float, new_box: BoxRegion) -> SelectionNormal:
    """Condition on new data ``z = X theta + eps`` falling in ``new_box``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = X.shape[0]
    if X.shape[1] != prior.p:
        raise ValueError("X must have p columns")
    if new_box.dim != m:
        raise ValueError("new_box must have one row per observation")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    cross = prior.sigma_ztheta @ X.T
    sz = np.block([[prior.sigma_z, cross],
                   [cross.T, X @ prior.sigma_theta @ X.T + sigma ** 2 * np.eye(m)]])
    szt = np.vstack([prior.sigma_ztheta, X @ prior.sigma_theta])
    mu_z = np.concatenate([prior.mu_z, X @ prior.mu_theta])
    return SelectionNormal(mu_z, prior.mu_theta, sz, prior.sigma_theta, szt,
                           prior.region.product(new_box))


def marginal_log_prob(d: SelectionNormal, n_samples: int, rng: np.random.Generator):
    """``log pr(z in C)`` under the z-marginal, as a ``BoxProbability``."""
    return box_probability(d.z_params(), d.region, n_samples, rng)


__all__ = ["SelectionNormal", "Estimate", "Moments", "density", "log_density", "mgf",
           "sample", "moments", "linear_combine", "sequential_update", "marginal_log_prob",
           "psd_factor"]
