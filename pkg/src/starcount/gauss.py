"""Gaussian box probabilities and truncated multivariate normal sampling.

The estimator and sampler follow the minimax exponential tilting construction:
a variance-reducing greedy reordering of the Cholesky factor, a saddle point
of the tilted log-likelihood-ratio bound found by damped Newton iterations,
then sequential truncated-normal proposals used either as an importance
sampler (probabilities) or an exact accept-reject sampler (draws).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from . import kernels

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

ACCEPT_FLOOR = 1e-3
GIBBS_BURNIN = 500
NEWTON_MAX_ITER = 100
NEWTON_TOL = 1e-8
_PILOT_SIZE = 512
_PILOT_SEED = 20240611


class FactorizationError(np.linalg.LinAlgError):
    """Covariance is not positive semidefinite, even after jitter."""


class ZeroMassError(ValueError):
    """The truncation region carries no numerically representable mass."""


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector")
    return arr


@dataclass(frozen=True, eq=False)
class GaussianParams:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean, "mean")
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ValueError(f"cov must be {n}x{n}, got {cov.shape}")
        scale = max(np.max(np.abs(cov)), 1e-300) if n else 1.0
        if n and np.max(np.abs(cov - cov.T)) > 1e-10 * scale:
            raise ValueError("cov must be symmetric")
        cov = 0.5 * (cov + cov.T)
        if n:
            eig = np.linalg.eigvalsh(cov)
            if eig[0] < -1e-10 * max(eig[-1], 0.0):
                raise ValueError("cov must be positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class BoxRegion:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _as_vector(self.lower, "lower") if np.size(self.lower) else np.zeros(0)
        hi = _as_vector(self.upper, "upper") if np.size(self.upper) else np.zeros(0)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box bounds must not be NaN")
        if np.any(~(lo < hi)):
            raise ValueError("box requires lower < upper in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def whole(cls, n: int) -> "BoxRegion":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def shift(self, offset) -> "BoxRegion":
        """The box translated by ``-offset`` (i.e. ``C - offset``)."""
        offset = np.asarray(offset, dtype=float)
        return BoxRegion(self.lower - offset, self.upper - offset)

    def product(self, other: "BoxRegion") -> "BoxRegion":
        return BoxRegion(np.concatenate([self.lower, other.lower]),
                         np.concatenate([self.upper, other.upper]))

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def is_unbounded(self) -> bool:
        return bool(np.all(np.isneginf(self.lower)) and np.all(np.isposinf(self.upper)))


class BoxProbability(NamedTuple):
    estimate: float
    rel_err: float
    log_estimate: float
    underflow: bool


@dataclass(frozen=True, eq=False)
class TiltingSolution:
    """Saddle point of the tilted bound plus the factorization it lives in.

    ``tilt`` is the proposal mean shift per (permuted) coordinate and
    ``point`` the matching saddle location; the final coordinate's tilt is
    zero at the optimum. ``log_norm_const`` is the log upper bound on the
    box probability, which doubles as the accept-reject envelope.
    """
    tilt: np.ndarray
    point: np.ndarray
    permutation: np.ndarray
    log_norm_const: float
    expected_accept_rate: float
    converged: bool
    iterations: int
    factor: np.ndarray = field(repr=False)
    scaled_factor: np.ndarray = field(repr=False)
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)

    @property
    def needs_fallback(self) -> bool:
        return (not self.converged) or self.expected_accept_rate < ACCEPT_FLOOR


def jitter_amount(cov: np.ndarray) -> float:
    n = cov.shape[0]
    return 1e-8 * float(np.trace(cov)) / max(n, 1)


def stable_cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with one jittered retry on failure."""
    cov = 0.5 * (cov + cov.T)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    eps = jitter_amount(cov)
    try:
        return np.linalg.cholesky(cov + eps * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("covariance is not positive definite after jitter") from exc


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """Some F with F F' = cov, tolerating exactly singular PSD input."""
    cov = 0.5 * (cov + cov.T)
    if cov.size == 0:
        return cov.copy()
    try:
        return stable_cholesky(cov)
    except FactorizationError:
        w, v = np.linalg.eigh(cov)
        top = max(float(np.max(np.abs(w))), 1e-300)
        if np.min(w) < -1e-8 * top:
            raise
        return v * np.sqrt(np.clip(w, 0.0, None))


def mvn_draws(mean, cov, count: int, rng: np.random.Generator) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    F = psd_factor(np.atleast_2d(cov)) if mean.size else np.zeros((0, 0))
    eps = rng.standard_normal((count, mean.shape[0]))
    return mean + eps @ F.T


def _greedy_cholesky(cov: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    n = cov.shape[0]
    S = cov.copy()
    l = lower.copy()
    u = upper.copy()
    L = np.zeros((n, n))
    perm = np.arange(n)
    z = np.zeros(n)
    top = float(np.max(np.diag(S))) if n else 1.0
    tol = 1e-10 * top
    tiny = 1e-14 * top
    for j in range(n):
        rest = slice(j, n)
        s = np.diag(S)[rest] - np.sum(L[rest, :j] ** 2, axis=1)
        s = np.sqrt(np.maximum(s, tiny))
        shift = L[rest, :j] @ z[:j]
        pr = kernels.ln_normal_prob((l[rest] - shift) / s, (u[rest] - shift) / s)
        k = j + int(np.argmin(pr))
        if k != j:
            S[[j, k], :] = S[[k, j], :]
            S[:, [j, k]] = S[:, [k, j]]
            L[[j, k], :] = L[[k, j], :]
            l[[j, k]] = l[[k, j]]
            u[[j, k]] = u[[k, j]]
            perm[[j, k]] = perm[[k, j]]
        piv = S[j, j] - L[j, :j] @ L[j, :j]
        if piv < -tol:
            raise FactorizationError("covariance is not positive semidefinite")
        L[j, j] = math.sqrt(max(piv, tiny))
        L[j + 1:, j] = (S[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
        base = L[j, :j] @ z[:j]
        tl = (l[j] - base) / L[j, j]
        tu = (u[j] - base) / L[j, j]
        w = kernels.ln_normal_prob(tl, tu)
        z[j] = (math.exp(-0.5 * tl ** 2 - w) - math.exp(-0.5 * tu ** 2 - w)) / math.sqrt(2 * math.pi)
    return L, perm


def cholesky_reordered(params: GaussianParams, box: BoxRegion):
    """Cholesky factor of the permuted covariance and the permutation.

    Variables are ordered greedily so the one with the least remaining
    conditional probability mass is factored first. Returns ``(L, perm)``
    with ``L @ L.T == cov[perm][:, perm]``.
    """
    if box.dim != params.dim:
        raise ValueError("box and Gaussian dimensions differ")
    lower = box.lower - params.mean
    upper = box.upper - params.mean
    try:
        return _greedy_cholesky(params.cov, lower, upper)
    except FactorizationError:
        eps = jitter_amount(params.cov)
        return _greedy_cholesky(params.cov + eps * np.eye(params.dim), lower, upper)


def _truncated_mean_terms(lt, ut):
    w = kernels.ln_normal_prob(lt, ut)
    pl = np.exp(-0.5 * lt ** 2 - w - _LOG_SQRT_2PI)
    pu = np.exp(-0.5 * ut ** 2 - w - _LOG_SQRT_2PI)
    return w, pl, pu


def _psi(x, mu, Ls, l, u):
    c = Ls @ x
    lt = l - mu - c
    ut = u - mu - c
    return float(np.sum(kernels.ln_normal_prob(lt, ut) + 0.5 * mu ** 2 - x * mu))


def _grad_jac(y, Ls, l, u):
    d = l.shape[0]
    x = np.zeros(d)
    mu = np.zeros(d)
    x[:d - 1] = y[:d - 1]
    mu[:d - 1] = y[d - 1:]
    c = Ls @ x
    lt = l - mu - c
    ut = u - mu - c
    _, pl, pu = _truncated_mean_terms(lt, ut)
    P = pl - pu
    dfdx = -mu[:d - 1] + (P @ Ls[:, :d - 1])
    dfdm = mu - x + P
    grad = np.concatenate([dfdx, dfdm[:d - 1]])

    lt0 = np.where(np.isinf(lt), 0.0, lt)
    ut0 = np.where(np.isinf(ut), 0.0, ut)
    dP = -P ** 2 + lt0 * pl - ut0 * pu
    DL = dP[:, None] * Ls
    mx = (DL - np.eye(d))[:d - 1, :d - 1]
    xx = (Ls.T @ DL)[:d - 1, :d - 1]
    J = np.block([[xx, mx.T], [mx, np.diag(1.0 + dP[:d - 1])]])
    return grad, J, P


def _newton(Ls, l, u):
    d = l.shape[0]
    if d == 1:
        _, pl, pu = _truncated_mean_terms(l, u)
        return np.zeros(0), pl - pu, True, 0
    y = np.zeros(2 * (d - 1))
    grad, J, P = _grad_jac(y, Ls, l, u)
    gnorm = float(np.linalg.norm(grad))
    it = 0
    while gnorm >= NEWTON_TOL and it < NEWTON_MAX_ITER:
        it += 1
        try:
            step = np.linalg.solve(J, -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -grad, rcond=None)[0]
        t = 1.0
        while True:
            y_new = y + t * step
            g_new, J_new, P_new = _grad_jac(y_new, Ls, l, u)
            n_new = float(np.linalg.norm(g_new))
            if np.isfinite(n_new) and (n_new < gnorm or t < 1e-10):
                break
            t *= 0.5
        if not np.isfinite(n_new):
            break
        y, grad, J, P, gnorm = y_new, g_new, J_new, P_new, n_new
    return y, P, gnorm < NEWTON_TOL, it


def _whitened(params: GaussianParams, box: BoxRegion):
    L, perm = cholesky_reordered(params, box)
    lower = (box.lower - params.mean)[perm]
    upper = (box.upper - params.mean)[perm]
    D = np.diag(L).copy()
    Ls = L / D[:, None] - np.eye(L.shape[0])
    return L, perm, lower / D, upper / D, Ls


def solve_tilting(params: GaussianParams, box: BoxRegion) -> TiltingSolution:
    """Minimax tilting parameters for N(mean, cov) restricted to ``box``."""
    if params.dim == 0:
        raise ValueError("cannot tilt a zero-dimensional Gaussian")
    L, perm, l, u, Ls = _whitened(params, box)
    d = l.shape[0]
    y, P, converged, iterations = _newton(Ls, l, u)
    mu = np.zeros(d)
    x = np.zeros(d)
    x[:d - 1] = y[:d - 1]
    mu[:d - 1] = y[d - 1:]
    log_bound = _psi(x, mu, Ls, l, u)
    point = x.copy()
    # last coordinate: saddle location is the conditional truncated mean
    point[d - 1] = P[d - 1] + mu[d - 1]
    if not np.isfinite(log_bound):
        raise ZeroMassError("truncation region has no numerically representable mass")

    pilot_rng = np.random.default_rng(_PILOT_SEED)
    U = pilot_rng.random((_PILOT_SIZE, d))
    _, logpr = kernels.tilted_proposals(np.ascontiguousarray(Ls), l, u, mu, U)
    rate = float(np.mean(np.exp(np.minimum(logpr - log_bound, 0.0))))
    rate = min(max(rate, 1e-300), 1.0)
    return TiltingSolution(tilt=mu, point=point, permutation=perm,
                           log_norm_const=log_bound, expected_accept_rate=rate,
                           converged=bool(converged), iterations=iterations,
                           factor=L, scaled_factor=np.ascontiguousarray(Ls),
                           lower=l, upper=u)


def _exact_univariate(params: GaussianParams, box: BoxRegion) -> BoxProbability:
    sd = math.sqrt(max(params.cov[0, 0], 0.0))
    if sd == 0.0:
        inside = box.lower[0] <= params.mean[0] <= box.upper[0]
        return BoxProbability(float(inside), 0.0, 0.0 if inside else -np.inf, not inside)
    a = (box.lower[0] - params.mean[0]) / sd
    b = (box.upper[0] - params.mean[0]) / sd
    logp = float(kernels.ln_normal_prob(a, b))
    est = math.exp(logp)
    return BoxProbability(est, 0.0, logp, est == 0.0)


class TruncatedMVN:
    """N(mean, cov) restricted to a box, with its tilting solution cached.

    After :meth:`sample`, ``approximate`` tells whether the within-box Gibbs
    fallback produced the draws and ``acceptance_rate`` reports the realized
    accept-reject rate.
    """

    def __init__(self, params: GaussianParams, box: BoxRegion, *,
                 accept_floor: float = ACCEPT_FLOOR, burnin: int = GIBBS_BURNIN):
        if box.dim != params.dim:
            raise ValueError("box and Gaussian dimensions differ")
        self.params = params
        self.box = box
        self.accept_floor = accept_floor
        self.burnin = burnin
        self._solution = None
        self.approximate = False
        self.acceptance_rate = float("nan")

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def solution(self) -> TiltingSolution:
        if self._solution is None:
            self._solution = solve_tilting(self.params, self.box)
        return self._solution

    def probability(self, n_samples: int, rng: np.random.Generator) -> BoxProbability:
        if self.dim == 0:
            return BoxProbability(1.0, 0.0, 0.0, False)
        if self.dim == 1:
            return _exact_univariate(self.params, self.box)
        if self.box.is_unbounded():
            return BoxProbability(1.0, 0.0, 0.0, False)
        if n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        try:
            sol = self.solution
        except ZeroMassError:
            return BoxProbability(0.0, 0.0, -np.inf, True)
        U = rng.random((n_samples, self.dim))
        _, logpr = kernels.tilted_proposals(sol.scaled_factor, sol.lower, sol.upper, sol.tilt, U)
        log_est = float(logsumexp(logpr) - math.log(n_samples))
        if not np.isfinite(log_est):
            return BoxProbability(0.0, 0.0, -np.inf, True)
        w = np.exp(logpr - np.max(logpr))
        rel_err = float(np.std(w, ddof=1) / np.mean(w) / math.sqrt(n_samples))
        est = math.exp(log_est)
        return BoxProbability(est, rel_err, log_est, est == 0.0)

    def _to_original(self, Z: np.ndarray) -> np.ndarray:
        sol = self.solution
        X = Z @ sol.factor.T
        out = np.empty_like(X)
        out[:, sol.permutation] = X
        out += self.params.mean
        return np.clip(out, self.box.lower, self.box.upper)

    def _proposals(self, m: int, rng):
        sol = self.solution
        U = rng.random((m, self.dim))
        return kernels.tilted_proposals(sol.scaled_factor, sol.lower, sol.upper, sol.tilt, U)

    def _gibbs(self, count: int, rng, start=None) -> np.ndarray:
        mean = self.params.mean
        if start is None:
            Z, _ = self._proposals(1, rng)
            start = self._to_original(Z)[0]
        F = stable_cholesky(self.params.cov)
        Finv = np.linalg.solve(F, np.eye(self.dim))
        Q = np.ascontiguousarray(Finv.T @ Finv)
        U = rng.random((self.burnin + count, self.dim))
        return kernels.gibbs_box(Q, mean, self.box.lower, self.box.upper,
                                 np.asarray(start, dtype=float), U, self.burnin)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if count < 0:
            raise ValueError("count must be nonnegative")
        n = self.dim
        self.approximate = False
        if n == 0:
            self.acceptance_rate = 1.0
            return np.zeros((count, 0))
        if self.box.is_unbounded():
            self.acceptance_rate = 1.0
            return mvn_draws(self.params.mean, self.params.cov, count, rng)
        sol = self.solution
        if not sol.converged or sol.expected_accept_rate < self.accept_floor:
            self.approximate = True
            self.acceptance_rate = sol.expected_accept_rate
            return self._gibbs(count, rng)

        chunks = []
        total = 0
        proposed = 0
        rate = sol.expected_accept_rate
        cap = max(1, 4_000_000 // n)
        while total < count:
            want = count - total
            m = int(min(max(math.ceil(1.2 * want / max(rate, self.accept_floor)), 64), cap))
            Z, logpr = self._proposals(m, rng)
            E = rng.standard_exponential(m)
            keep = E > sol.log_norm_const - logpr
            proposed += m
            got = Z[keep][:want]
            if got.shape[0]:
                chunks.append(got)
                total += got.shape[0]
            accepted = sum(c.shape[0] for c in chunks)
            rate = max(accepted / proposed, 1e-12)
            if total < count and proposed >= 20_000 and rate < self.accept_floor:
                self.approximate = True
                done = self._to_original(np.concatenate(chunks)) if chunks else np.zeros((0, n))
                start = done[-1] if done.shape[0] else None
                rest = self._gibbs(count - total, rng, start=start)
                self.acceptance_rate = rate
                return np.concatenate([done, rest])
        self.acceptance_rate = rate
        return self._to_original(np.concatenate(chunks))


def box_probability(params: GaussianParams, box: BoxRegion, n_samples: int,
                    rng: np.random.Generator) -> BoxProbability:
    """Estimate the Gaussian probability of ``box``.

    One-dimensional boxes are computed exactly from CDF differences. Larger
    boxes use tilted importance sampling; ``rel_err`` is the relative
    standard error of the estimate.
    """
    if box.dim != params.dim:
        raise ValueError("box and Gaussian dimensions differ")
    return TruncatedMVN(params, box).probability(n_samples, rng)


def sample_tmvn(params: GaussianParams, box: BoxRegion, count: int,
                rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` rows from N(mean, cov) truncated to ``box``."""
    tmvn = TruncatedMVN(params, box)
    try:
        return tmvn.sample(count, rng)
    except ZeroMassError:
        raise ZeroMassError("cannot sample from a box with zero probability mass") from None


def sample_truncnorm(mean, sd, lo, hi, rng: np.random.Generator) -> np.ndarray:
    """Vectorized univariate truncated normal draws by inverse CDF."""
    mean, sd, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mean, sd, lo, hi)))
    if np.any(sd <= 0):
        raise ValueError("sd must be positive")
    if np.any(~(lo < hi)):
        raise ValueError("truncation requires lo < hi")
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    if np.any(np.isneginf(kernels.ln_normal_prob(a, b))):
        raise ZeroMassError("truncation interval mass underflows")
    u = rng.random(a.shape)
    z = kernels.truncnorm_icdf(a, b, u)
    return np.clip(mean + sd * z, lo, hi)


def sample_truncnorm_scalar(mean: float, sd: float, lo: float, hi: float,
                            rng: np.random.Generator) -> float:
    return float(sample_truncnorm(mean, sd, lo, hi, rng))
