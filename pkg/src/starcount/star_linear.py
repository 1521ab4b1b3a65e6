"""Linear STAR regression: conjugate posterior, direct samplers, predictive laws.

The latent model is ``z = X theta + eps`` with ``eps ~ N(0, sigma^2 I)`` and
``y = h(g^{-1}(z))``. Under a Gaussian prior the posterior of ``theta`` is a
selection normal whose region is the interval image ``g(A_y)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from . import selection_normal as sn
from .discretization import (RoundingScheme, Transformation, interval_image,
                             latent_to_response)
from .gauss import (BoxProbability, BoxRegion, GaussianParams, TruncatedMVN,
                    box_probability, mvn_draws, sample_truncnorm)

DEFAULT_PSI = 1000.0


@dataclass(frozen=True)
class GPrior:
    """``theta ~ N(mu_theta, psi sigma^2 (X'X)^{-1})``."""
    psi: float = DEFAULT_PSI
    mu_theta: np.ndarray | None = None

    def __post_init__(self):
        if not self.psi > 0:
            raise ValueError("psi must be positive")


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class StarLinearModel:
    X: np.ndarray
    y: np.ndarray
    scheme: RoundingScheme
    transform: Transformation
    prior: GPrior | GaussianPrior
    sigma: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have different numbers of rows")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        y = self.scheme.check_support(y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int64))
        if isinstance(self.prior, GPrior):
            if X.shape[0] < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
                raise np.linalg.LinAlgError("g-prior requires X with full column rank")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def is_gprior(self) -> bool:
        return isinstance(self.prior, GPrior)

    @property
    def mu_theta(self) -> np.ndarray:
        m = self.prior.mu_theta if self.is_gprior else self.prior.mean
        return np.zeros(self.p) if m is None else np.asarray(m, dtype=float).reshape(self.p)

    def _qr(self):
        if "qr" not in self._cache:
            Q, R = np.linalg.qr(self.X)
            self._cache["qr"] = (Q, R)
        return self._cache["qr"]

    def xtx_inv(self) -> np.ndarray:
        _, R = self._qr()
        Rinv = solve_triangular(R, np.eye(self.p))
        return Rinv @ Rinv.T

    @property
    def sigma_theta(self) -> np.ndarray:
        if self.is_gprior:
            return self.prior.psi * self.sigma ** 2 * self.xtx_inv()
        return np.asarray(self.prior.cov, dtype=float).reshape(self.p, self.p)

    def region(self) -> BoxRegion:
        if "region" not in self._cache:
            self._cache["region"] = interval_image(self.transform, self.scheme, self.y)
        return self._cache["region"]

    def to_response(self, z) -> np.ndarray:
        return latent_to_response(self.transform, self.scheme, z)


# ---------------------------------------------------------------- posterior

def posterior(model: StarLinearModel) -> sn.SelectionNormal:
    X, mu, St = model.X, model.mu_theta, model.sigma_theta
    sz = X @ St @ X.T + model.sigma ** 2 * np.eye(model.n)
    region = model.region() if model.n else BoxRegion(np.zeros(0), np.zeros(0))
    return sn.SelectionNormal(X @ mu, mu, sz, St, X @ St, region)


def _gprior_v0(model: StarLinearModel) -> TruncatedMVN:
    # V_0 ~ N(0, sigma^2 (psi H + I)) truncated to g(A_y) - X mu_theta
    if "v0" not in model._cache:
        Q, _ = model._qr()
        psi, s2 = model.prior.psi, model.sigma ** 2
        cov = s2 * (psi * Q @ Q.T + np.eye(model.n))
        box = model.region().shift(model.X @ model.mu_theta)
        model._cache["v0"] = TruncatedMVN(GaussianParams(np.zeros(model.n), cov), box)
    return model._cache["v0"]


def _require_gprior(model):
    if not model.is_gprior:
        raise TypeError("this sampler requires a g-prior")


def _hat_coef(model, v0):
    # psi/(1+psi) (X'X)^{-1} X' V_0 for each row of v0
    Q, R = model._qr()
    shrink = model.prior.psi / (1.0 + model.prior.psi)
    return shrink * solve_triangular(R, Q.T @ v0.T).T


def sample_posterior_gprior(model: StarLinearModel, count: int, rng: np.random.Generator) -> np.ndarray:
    """Direct Monte Carlo posterior draws under the g-prior."""
    _require_gprior(model)
    psi, s2 = model.prior.psi, model.sigma ** 2
    mu = model.mu_theta
    if model.n == 0:
        return mvn_draws(mu, model.sigma_theta, count, rng)
    v0 = _gprior_v0(model).sample(count, rng)
    v1 = mvn_draws(np.zeros(model.p), s2 * psi / (1.0 + psi) * model.xtx_inv(), count, rng)
    return mu + v1 + _hat_coef(model, v0)


def posterior_mean_gprior(model: StarLinearModel, n_samples: int, rng: np.random.Generator):
    """``mu + psi/(1+psi) (X'X)^{-1} X' zhat`` with ``zhat`` the Monte Carlo mean of ``V_0``.

    Returns ``(mean, standard error)``.
    """
    _require_gprior(model)
    if model.n == 0:
        return model.mu_theta.copy(), np.zeros(model.p)
    v0 = _gprior_v0(model).sample(n_samples, rng)
    coefs = _hat_coef(model, v0)
    return model.mu_theta + coefs.mean(axis=0), coefs.std(axis=0, ddof=1) / math.sqrt(n_samples)


def sample_posterior(model: StarLinearModel, count: int, rng: np.random.Generator) -> np.ndarray:
    if model.is_gprior:
        return sample_posterior_gprior(model, count, rng)
    return sn.sample(posterior(model), count, rng)


# ---------------------------------------------------------------- prediction

def _xtilde(model, Xt) -> np.ndarray:
    Xt = np.atleast_2d(np.asarray(Xt, dtype=float))
    if Xt.shape[1] != model.p:
        raise ValueError(f"Xtilde must have {model.p} columns")
    return Xt


def latent_predictive(model: StarLinearModel, Xt) -> sn.SelectionNormal:
    Xt = _xtilde(model, Xt)
    post = posterior(model)
    mu, St, s2 = model.mu_theta, model.sigma_theta, model.sigma ** 2
    return sn.SelectionNormal(post.mu_z, Xt @ mu, post.sigma_z,
                              Xt @ St @ Xt.T + s2 * np.eye(Xt.shape[0]),
                              model.X @ St @ Xt.T, post.region)


def predict_via_posterior(model: StarLinearModel, Xt, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw theta from the posterior, then ``z ~ N(X~ theta, sigma^2 I)`` and round."""
    Xt = _xtilde(model, Xt)
    theta = sample_posterior(model, count, rng)
    z = theta @ Xt.T + model.sigma * rng.standard_normal((count, Xt.shape[0]))
    return model.to_response(z)


def predict_gprior(model: StarLinearModel, Xt, count: int, rng: np.random.Generator,
                   return_latent: bool = False):
    """Joint predictive draws without sampling theta."""
    _require_gprior(model)
    Xt = _xtilde(model, Xt)
    psi, s2 = model.prior.psi, model.sigma ** 2
    m = Xt.shape[0]
    B = Xt @ model.xtx_inv() @ Xt.T
    v1 = mvn_draws(np.zeros(m), s2 * (psi / (1.0 + psi) * B + np.eye(m)), count, rng)
    z = Xt @ model.mu_theta + v1
    if model.n:
        v0 = _gprior_v0(model).sample(count, rng)
        z = z + _hat_coef(model, v0) @ Xt.T
    y = model.to_response(z)
    return (y, z) if return_latent else y


class PredictivePMF(NamedTuple):
    support: np.ndarray
    probs: np.ndarray
    raw: np.ndarray
    raw_sum: float
    rel_err: np.ndarray


def predictive_pmf(model: StarLinearModel, xtilde, support, n_samples: int,
                   rng: np.random.Generator) -> PredictivePMF:
    """Analytic predictive pmf at one covariate row as a ratio of box probabilities."""
    xt = _xtilde(model, xtilde)
    if xt.shape[0] != 1:
        raise ValueError("predictive_pmf takes a single covariate row")
    support = np.asarray(support, dtype=np.int64).reshape(-1)
    model.scheme.check_support(support)
    joint = latent_predictive(model, xt)
    # stacked (z~, z) Gaussian
    mean = np.concatenate([joint.mu_theta, joint.mu_z])
    cov = np.block([[joint.sigma_theta, joint.sigma_ztheta.T],
                    [joint.sigma_ztheta, joint.sigma_z]])
    params = GaussianParams(mean, cov)
    if model.n:
        den = box_probability(joint.z_params(), joint.region, n_samples, rng)
        if den.underflow:
            raise FloatingPointError("marginal likelihood underflows; pmf denominator is zero")
    else:
        den = BoxProbability(1.0, 0.0, 0.0, False)
    cells = interval_image(model.transform, model.scheme, support)
    raw = np.empty(support.shape[0])
    rel = np.empty(support.shape[0])
    for k in range(support.shape[0]):
        cell = BoxRegion(cells.lower[k:k + 1], cells.upper[k:k + 1])
        box = cell.product(joint.region) if model.n else cell
        num = box_probability(params, box, n_samples, rng)
        raw[k] = math.exp(num.log_estimate - den.log_estimate) if not num.underflow else 0.0
        rel[k] = math.hypot(num.rel_err, den.rel_err)
    total = float(raw.sum())
    probs = raw / total if total > 0 else raw
    return PredictivePMF(support, probs, raw, total, rel)


def point_predict(model: StarLinearModel, xtilde, support, n_samples: int,
                  rng: np.random.Generator) -> float:
    pmf = predictive_pmf(model, xtilde, support, n_samples, rng)
    return float(pmf.support @ pmf.probs)


class MarginalLikelihood(NamedTuple):
    log_value: float
    rel_err: float
    underflow: bool


def marginal_likelihood(model: StarLinearModel, n_samples: int,
                        rng: np.random.Generator) -> MarginalLikelihood:
    """``log pr(y)`` as the Gaussian probability of ``g(A_y)``."""
    if model.n == 0:
        return MarginalLikelihood(0.0, 0.0, False)
    post = posterior(model)
    bp = box_probability(post.z_params(), post.region, n_samples, rng)
    return MarginalLikelihood(bp.log_estimate, bp.rel_err, bp.underflow)


# ---------------------------------------------------------------- sigma and baseline

def pseudo_data(transform: Transformation, scheme: RoundingScheme, y) -> np.ndarray:
    """Interval midpoints on the latent scale, with unbounded cells pushed one width out."""
    box = interval_image(transform, scheme, np.asarray(y))
    lo, hi = box.lower, box.upper
    finite = np.isfinite(lo) & np.isfinite(hi)
    width = float(np.median(hi[finite] - lo[finite])) if np.any(finite) else 1.0
    m = 0.5 * (lo + hi)
    m = np.where(np.isinf(lo) & np.isfinite(hi), hi - width, m)
    m = np.where(np.isinf(hi) & np.isfinite(lo), lo + width, m)
    return m


def estimate_sigma(X, y, scheme: RoundingScheme, transform: Transformation) -> float:
    """Gaussian maximum likelihood scale of least squares on interval-midpoint pseudo-data.

    The residual sum of squares is divided by ``n`` (not ``n - p``).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if n <= p:
        raise ValueError("estimate_sigma needs more observations than covariates")
    m = pseudo_data(transform, scheme, y)
    coef, *_ = np.linalg.lstsq(X, m, rcond=None)
    resid = m - X @ coef
    s = math.sqrt(float(resid @ resid) / n)
    return max(s, 1e-8)


def gibbs_da_baseline(model: StarLinearModel, count: int, burnin: int,
                      rng: np.random.Generator, theta0=None) -> np.ndarray:
    """Data-augmentation Gibbs: alternate ``z | theta, y`` and ``theta | z``."""
    X, s2 = model.X, model.sigma ** 2
    mu = model.mu_theta
    box = model.region()
    if model.is_gprior:
        prior_prec = X.T @ X / (model.prior.psi * s2)
    else:
        prior_prec = np.linalg.inv(model.sigma_theta)
    prec = prior_prec + X.T @ X / s2
    cf = cho_factor(prec, lower=True)
    L = np.linalg.cholesky(prec)
    prior_term = prior_prec @ mu
    theta = mu.copy() if theta0 is None else np.asarray(theta0, dtype=float).copy()
    out = np.empty((count, model.p))
    for it in range(burnin + count):
        z = sample_truncnorm(X @ theta, model.sigma, box.lower, box.upper, rng)
        mean = cho_solve(cf, prior_term + X.T @ z / s2)
        theta = mean + solve_triangular(L.T, rng.standard_normal(model.p), lower=False)
        if it >= burnin:
            out[it - burnin] = theta
    return out
