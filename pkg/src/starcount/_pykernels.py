"""Pure NumPy implementations of the inner sampling kernels.

These mirror ``_ckernels.pyx`` function for function and consume random
uniforms in the same order, so both backends produce the same draws up to
floating-point summation order.
"""
import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

# beyond this many standard deviations the CDF is no longer resolvable
TAIL_CLIP = 37.0


def ln_normal_prob(a, b):
    """log(Phi(b) - Phi(a)) for a < b, accurate in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape)
    upper = a > 0
    lower = b < 0
    mid = ~(upper | lower)
    if np.any(upper):
        la = log_ndtr(-a[upper])
        lb = log_ndtr(-b[upper])
        with np.errstate(invalid="ignore"):
            out[upper] = np.where(la == -np.inf, -np.inf, la + np.log1p(-np.exp(lb - la)))
    if np.any(lower):
        la = log_ndtr(a[lower])
        lb = log_ndtr(b[lower])
        with np.errstate(invalid="ignore"):
            out[lower] = np.where(lb == -np.inf, -np.inf, lb + np.log1p(-np.exp(la - lb)))
    if np.any(mid):
        out[mid] = np.log1p(-ndtr(a[mid]) - ndtr(-b[mid]))
    return out


def _upper_tail_icdf(lo, hi, u):
    # standard normal truncated to [lo, hi] with lo >= 0
    x = np.empty(lo.shape)
    deep = lo > TAIL_CLIP
    ok = ~deep
    if np.any(ok):
        qa = ndtr(-lo[ok])
        qb = ndtr(-hi[ok])
        x[ok] = -ndtri(qa - u[ok] * (qa - qb))
    if np.any(deep):
        # Rayleigh inversion; indistinguishable from the normal tail here
        l2 = lo[deep] ** 2
        span = -np.expm1(0.5 * (l2 - hi[deep] ** 2))
        with np.errstate(divide="ignore"):  # u = 1 with hi = inf maps to inf
            x[deep] = np.sqrt(l2 - 2.0 * np.log1p(-u[deep] * span))
    return x


def truncnorm_icdf(lo, hi, u):
    """Map uniforms ``u`` to N(0, 1) draws truncated to [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    u = np.asarray(u, dtype=float)
    lo, hi, u = np.broadcast_arrays(lo, hi, u)
    x = np.empty(lo.shape)

    upper = lo >= 0
    lower = hi <= 0
    mid = ~(upper | lower)
    if np.any(upper):
        x[upper] = _upper_tail_icdf(lo[upper], hi[upper], u[upper])
    if np.any(lower):
        x[lower] = -_upper_tail_icdf(-hi[lower], -lo[lower], 1.0 - u[lower])
    if np.any(mid):
        a, b, w = lo[mid], hi[mid], u[mid]
        pa = ndtr(a)
        pb = ndtr(b)
        q = pa + w * (pb - pa)
        r = np.empty(a.shape)
        low_half = q <= 0.5
        r[low_half] = ndtri(q[low_half])
        hi_half = ~low_half
        if np.any(hi_half):
            qa = ndtr(-a[hi_half])
            qb = ndtr(-b[hi_half])
            r[hi_half] = -ndtri(qb + (1.0 - w[hi_half]) * (qa - qb))
        x[mid] = r

    narrow = (hi - lo) < 1e-10 * np.maximum(1.0, np.abs(lo))
    if np.any(narrow):
        x[narrow] = lo[narrow] + u[narrow] * (hi[narrow] - lo[narrow])
    bad = ~np.isfinite(x)
    if np.any(bad):
        x[bad] = np.where(np.isfinite(lo[bad]), lo[bad], hi[bad])
    return np.clip(x, lo, hi)


def tilted_proposals(L, lb, ub, mu, U):
    """Sequential tilted proposals in whitened, permuted coordinates.

    ``L`` is the unit-diagonal-removed scaled Cholesky factor, ``mu`` the
    tilt and ``U`` an (N, n) array of uniforms. Returns draws ``Z`` (N, n)
    and the log importance weights (N,).
    """
    N, n = U.shape
    Z = np.zeros((N, n))
    logpr = np.zeros(N)
    for k in range(n):
        col = Z[:, :k] @ L[k, :k]
        tl = lb[k] - mu[k] - col
        tu = ub[k] - mu[k] - col
        Z[:, k] = mu[k] + truncnorm_icdf(tl, tu, U[:, k])
        logpr += ln_normal_prob(tl, tu) + 0.5 * mu[k] ** 2 - mu[k] * Z[:, k]
    return Z, logpr


def gibbs_box(Q, mean, lb, ub, x0, U, burnin):
    """Coordinate Gibbs for N(mean, Q^-1) restricted to [lb, ub].

    ``U`` holds one uniform per coordinate update, shape (sweeps, n).
    Returns the post-burn-in states, shape (sweeps - burnin, n).
    """
    sweeps, n = U.shape
    x = np.array(x0, dtype=float)
    d = x - mean
    cond_sd = 1.0 / np.sqrt(np.diag(Q))
    out = np.empty((sweeps - burnin, n))
    for s in range(sweeps):
        for k in range(n):
            shift = (Q[k] @ d - Q[k, k] * d[k]) / Q[k, k]
            m = mean[k] - shift
            sd = cond_sd[k]
            z = truncnorm_icdf((lb[k] - m) / sd, (ub[k] - m) / sd, U[s, k])
            x[k] = min(max(m + sd * float(z), lb[k]), ub[k])
            d[k] = x[k] - mean[k]
        if s >= burnin:
            out[s - burnin] = x
    return out
