"""Synthetic data generators for the simulation studies."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .discretization import RoundingScheme, Transformation, fit_np_cdf, latent_to_response
from .nonlinear import BasisSpec, ORTHO_POLY, RawBasis

Y_CAP = 30
MIXTURE_SEED = 20201
MIXTURE_SIZE = 100_000
MIXTURE_SIGMA = 0.7


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    y: np.ndarray
    X: np.ndarray | None = None
    tau: np.ndarray | None = None
    truth: dict = field(default_factory=dict)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def negbin_draw(rng, mean, size):
    """Negative binomial counts with the given mean and dispersion ``size``."""
    mean = np.asarray(mean, dtype=float)
    return rng.negative_binomial(size, size / (size + mean))


def negbin_coefficients(p: int) -> np.ndarray:
    """Intercept log(10), then ceil(p/2) slopes equal to 1/sqrt(p), the rest zero."""
    theta = np.zeros(p + 1)
    theta[0] = math.log(10.0)
    theta[1:1 + math.ceil(p / 2)] = 1.0 / math.sqrt(p)
    return theta


def gen_negbin_regression(n: int, p: int, seed, dispersion: float = 5.0) -> SyntheticDataset:
    """Counts with log-linear negative binomial means and Gaussian covariates.

    ``X`` has an intercept column followed by ``p`` standard normal covariates.
    """
    if n <= p + 1:
        raise ValueError("need n > p + 1")
    rng = _rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p))])
    theta = negbin_coefficients(p)
    y = negbin_draw(rng, np.exp(X @ theta), dispersion)
    return SyntheticDataset(y.astype(np.int64), X=X,
                            truth={"theta": theta.tolist(), "dispersion": dispersion})


def ortho_poly_curve(tau, rng) -> tuple[np.ndarray, np.ndarray]:
    """``sum_j f_j(tau) beta_j`` over orthonormal polynomials of degree 1..4, ``beta_j ~ N(0, 5 - j)``."""
    F = RawBasis(BasisSpec(ORTHO_POLY, degree=4, intercept=False), tau)(tau)
    beta = rng.standard_normal(4) * np.sqrt(5.0 - np.arange(1, 5))
    return F @ beta, beta


def _grid(n):
    return np.linspace(0.0, 1.0, n)


def gen_nl_negbin(n: int, seed, dispersion: float = 10.0) -> SyntheticDataset:
    if n < 20:
        raise ValueError("need n >= 20")
    rng = _rng(seed)
    tau = _grid(n)
    f, beta = ortho_poly_curve(tau, rng)
    mean = np.exp(f)
    y = np.minimum(negbin_draw(rng, mean, dispersion), Y_CAP)
    truth = {"f": f, "beta": beta.tolist(), "mean": mean, "dispersion": dispersion, "case": "negbin"}
    return SyntheticDataset(y.astype(np.int64), tau=tau, truth=truth)


def mixture_sample(size: int, rng) -> np.ndarray:
    """Half Poisson(10), a quarter on heaps {5,...,25}, a quarter on boundaries {0, 30}."""
    comp = rng.choice(3, size=size, p=[0.5, 0.25, 0.25])
    out = np.minimum(rng.poisson(10.0, size), Y_CAP)
    heaps = rng.choice(np.arange(5, 26, 5), size=size)
    edges = rng.choice([0, Y_CAP], size=size)
    out = np.where(comp == 1, heaps, out)
    return np.where(comp == 2, edges, out).astype(np.int64)


@lru_cache(maxsize=1)
def mixture_transformation() -> Transformation:
    """Smoothed mixture CDF transformation, fitted once on a large fixed-seed sample."""
    sample = mixture_sample(MIXTURE_SIZE, np.random.default_rng(MIXTURE_SEED))
    return fit_np_cdf(sample, RoundingScheme.counts(Y_CAP))


def mixture_latent(f_std, rng) -> np.ndarray:
    g = mixture_transformation()
    c, s = g.params["center"], g.params["scale"]
    eps = rng.standard_normal(np.shape(f_std))
    return c + s * (math.sqrt(1.0 - MIXTURE_SIGMA ** 2) * f_std + MIXTURE_SIGMA * eps)


def gen_nl_mixture_cdf(n: int, seed) -> SyntheticDataset:
    """Counts whose marginal follows the heaped/boundary mixture.

    On the standardized latent scale the mean curve has unit variance across
    the grid and the noise standard deviation is 0.7, so the latent marginal
    is standard normal and ``h(g^{-1}(.))`` reproduces the mixture.
    """
    if n < 20:
        raise ValueError("need n >= 20")
    rng = _rng(seed)
    tau = _grid(n)
    f, beta = ortho_poly_curve(tau, rng)
    f_std = (f - f.mean()) / f.std()
    z = mixture_latent(f_std, rng)
    g = mixture_transformation()
    y = latent_to_response(g, RoundingScheme.counts(Y_CAP), z)
    truth = {"f": f, "f_std": f_std, "beta": beta.tolist(), "case": "mixture"}
    return SyntheticDataset(y, tau=tau, truth=truth)


def redraw_response(data: SyntheticDataset, seed) -> np.ndarray:
    """A fresh response vector at the same covariates and true curve."""
    rng = _rng(seed)
    case = data.truth.get("case")
    if case == "negbin":
        return np.minimum(negbin_draw(rng, data.truth["mean"], data.truth["dispersion"]), Y_CAP)
    if case == "mixture":
        z = mixture_latent(data.truth["f_std"], rng)
        return latent_to_response(mixture_transformation(), RoundingScheme.counts(Y_CAP), z)
    raise ValueError("dataset does not support redrawing")


def gen_rounded_sparse(n: int, mu: float, prop_signal: float, seed) -> SyntheticDataset:
    """``y = floor(mu gamma + eps)`` with exactly ``round(n prop_signal)`` signals."""
    if not 0 < prop_signal < 1:
        raise ValueError("prop_signal must lie in (0, 1)")
    rng = _rng(seed)
    k = int(round(n * prop_signal))
    gamma = np.zeros(n, dtype=bool)
    gamma[rng.choice(n, size=k, replace=False)] = True
    theta = mu * gamma
    y = np.floor(theta + rng.standard_normal(n)).astype(np.int64)
    return SyntheticDataset(y, truth={"gamma": gamma, "theta": theta, "mu": mu})


def sparse_scheme() -> RoundingScheme:
    """Floor rounding on all integers, matching ``y = floor(z)``."""
    return RoundingScheme.counts(y_max=math.inf, y_min=-math.inf)
