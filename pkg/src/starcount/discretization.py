"""Rounding operators and monotone transformations.

A rounding scheme partitions the real line into half-open intervals
``A_j = [a_j, a_{j+1})``, one per integer ``j`` in the support; a response
``y`` equals ``j`` exactly when the latent value lies in ``g(A_j)``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.interpolate import CubicHermiteSpline
from scipy.special import ndtri

from .gauss import BoxRegion

FLOOR_HALF = "floor-half"
COUNT_BOUNDED = "count-bounded"


class SupportError(ValueError):
    """A response value lies outside the rounding scheme's support."""


@dataclass(frozen=True)
class RoundingScheme:
    """Integer partition of the real line.

    ``floor-half`` rounds to the nearest integer, ``A_j = [j - 0.5, j + 0.5)``.
    ``count-bounded`` floors, with ``A_{y_min} = (-inf, y_min + 1)`` and
    ``A_{y_max} = [y_max, inf)``. Finite bounds on ``floor-half`` likewise
    make the boundary cells unbounded.
    """
    kind: str = COUNT_BOUNDED
    y_min: float = 0
    y_max: float = math.inf

    def __post_init__(self):
        if self.kind not in (FLOOR_HALF, COUNT_BOUNDED):
            raise ValueError(f"unknown rounding kind {self.kind!r}")
        if not self.y_min < self.y_max:
            raise ValueError("y_min must be below y_max")
        for v in (self.y_min, self.y_max):
            if math.isfinite(v) and v != int(v):
                raise ValueError("support bounds must be integers or infinite")

    @classmethod
    def floor_half(cls, y_min=-math.inf, y_max=math.inf) -> "RoundingScheme":
        return cls(FLOOR_HALF, y_min, y_max)

    @classmethod
    def counts(cls, y_max=math.inf, y_min=0) -> "RoundingScheme":
        return cls(COUNT_BOUNDED, y_min, y_max)

    @property
    def offset(self) -> float:
        return 0.5 if self.kind == FLOOR_HALF else 0.0

    def in_support(self, y) -> np.ndarray:
        y = np.asarray(y)
        return (y >= self.y_min) & (y <= self.y_max) & (np.floor(y) == y)

    def check_support(self, y) -> np.ndarray:
        y = np.asarray(y)
        if y.size and not np.all(self.in_support(y)):
            raise SupportError(f"values outside support [{self.y_min}, {self.y_max}]")
        return y.astype(float)

    def lower_edge(self, j) -> np.ndarray:
        """``a_j`` for each ``j`` (``-inf`` at the bottom of the support)."""
        j = np.asarray(j, dtype=float)
        return np.where(j <= self.y_min, -np.inf, j - self.offset)

    def upper_edge(self, j) -> np.ndarray:
        """``a_{j+1}`` for each ``j`` (``+inf`` at the top of the support)."""
        j = np.asarray(j, dtype=float)
        return np.where(j >= self.y_max, np.inf, j + 1.0 - self.offset)

    def round(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        j = np.floor(t + self.offset)
        return np.clip(j, self.y_min, self.y_max)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "y_min": _enc(self.y_min), "y_max": _enc(self.y_max)}

    @classmethod
    def from_dict(cls, d: dict) -> "RoundingScheme":
        return cls(d["kind"], _dec(d.get("y_min", 0)), _dec(d.get("y_max", "inf")))


def _enc(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _dec(v) -> float:
    return float(v)


def round_h(scheme: RoundingScheme, t):
    """Rounding operator ``h``; scalar in, int out, or array in, array out."""
    out = scheme.round(t)
    if np.ndim(out) == 0:
        return int(out)
    return out.astype(np.int64)


def interval_for(scheme: RoundingScheme, j: int) -> tuple[float, float]:
    if not scheme.in_support(j):
        raise SupportError(f"{j} is outside the support of the rounding scheme")
    return float(scheme.lower_edge(j)), float(scheme.upper_edge(j))


# ---------------------------------------------------------------- transformations

IDENTITY = "identity"
BOX_COX = "box-cox"
NP_CDF = "np-cdf"
POISSON = "parametric-poisson"
NEGBIN = "parametric-negbin"
_SPLINE_KINDS = (NP_CDF, POISSON, NEGBIN)


@dataclass(frozen=True, eq=False)
class Transformation:
    """Strictly increasing map ``g`` with an exact inverse.

    Fitted kinds hold a monotone cubic Hermite spline through ``knots``
    with Fritsch-Carlson ``slopes``, extended linearly with the boundary
    slope so that ``g(+-inf) = +-inf``.
    """
    kind: str = IDENTITY
    lam: float = 1.0
    knots_x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    knots_y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slopes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        valid = (IDENTITY, BOX_COX) + _SPLINE_KINDS
        if self.kind not in valid:
            raise ValueError(f"unknown transformation kind {self.kind!r}")
        if self.kind == BOX_COX and self.lam < 0:
            raise ValueError("box-cox requires lam >= 0")
        for name in ("knots_x", "knots_y", "slopes"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.kind in _SPLINE_KINDS:
            if self.knots_x.shape[0] < 2:
                raise ValueError("fitted transformation needs at least two knots")
            if np.any(np.diff(self.knots_x) <= 0) or np.any(np.diff(self.knots_y) <= 0):
                raise ValueError("spline knots must be strictly increasing")
            spline = CubicHermiteSpline(self.knots_x, self.knots_y, self.slopes, extrapolate=False)
            object.__setattr__(self, "_spline", spline)

    @classmethod
    def identity(cls) -> "Transformation":
        return cls(IDENTITY)

    @classmethod
    def box_cox(cls, lam: float) -> "Transformation":
        return cls(BOX_COX, lam=float(lam))

    @property
    def label(self) -> str:
        if self.kind == BOX_COX:
            return {0.0: "log", 0.5: "sqrt", 1.0: "box-cox-1"}.get(self.lam, f"box-cox({self.lam:g})")
        return self.kind

    # evaluation --------------------------------------------------------
    def __call__(self, x):
        return g_eval(self, x)

    def inverse(self, z):
        return g_inverse(self, z)

    def _spline_eval(self, x):
        kx, ky, m = self.knots_x, self.knots_y, self.slopes
        out = np.empty(x.shape)
        below = x < kx[0]
        above = x > kx[-1]
        inside = ~(below | above)
        out[below] = ky[0] + m[0] * (x[below] - kx[0])
        out[above] = ky[-1] + m[-1] * (x[above] - kx[-1])
        if np.any(inside):
            out[inside] = self._spline(x[inside])
        return out

    def _spline_inverse(self, z):
        kx, ky, m = self.knots_x, self.knots_y, self.slopes
        out = np.empty(z.shape)
        below = z < ky[0]
        above = z > ky[-1]
        inside = ~(below | above)
        out[below] = kx[0] + (z[below] - ky[0]) / m[0]
        out[above] = kx[-1] + (z[above] - ky[-1]) / m[-1]
        if np.any(inside):
            zi = z[inside]
            seg = np.clip(np.searchsorted(ky, zi, side="right") - 1, 0, len(kx) - 2)
            lo = kx[seg].copy()
            hi = kx[seg + 1].copy()
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                go_right = self._spline(mid) < zi
                lo = np.where(go_right, mid, lo)
                hi = np.where(go_right, hi, mid)
            out[inside] = 0.5 * (lo + hi)
        return out

    # serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {"kind": self.kind, "lam": self.lam,
                "knots_x": self.knots_x.tolist(), "knots_y": self.knots_y.tolist(),
                "slopes": self.slopes.tolist(), "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "Transformation":
        return cls(d["kind"], lam=float(d.get("lam", 1.0)),
                   knots_x=np.asarray(d.get("knots_x", []), dtype=float),
                   knots_y=np.asarray(d.get("knots_y", []), dtype=float),
                   slopes=np.asarray(d.get("slopes", []), dtype=float),
                   params=dict(d.get("params", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Transformation":
        return cls.from_dict(json.loads(text))


def g_eval(t: Transformation, x):
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr)
    if t.kind == IDENTITY:
        out = x_arr.copy()
    elif t.kind == BOX_COX:
        if t.lam == 0:
            finite = np.isfinite(x_arr)
            if np.any(x_arr[finite] <= 0):
                raise ValueError("log transformation requires positive arguments")
            with np.errstate(divide="ignore"):
                out = np.log(np.where(finite, x_arr, 1.0))
            out[~finite] = x_arr[~finite]
        else:
            out = np.sign(x_arr) * np.abs(x_arr) ** t.lam / t.lam
    else:
        out = t._spline_eval(x_arr)
    return float(out[0]) if scalar else out


def g_inverse(t: Transformation, z):
    z_arr = np.asarray(z, dtype=float)
    scalar = z_arr.ndim == 0
    z_arr = np.atleast_1d(z_arr)
    if t.kind == IDENTITY:
        out = z_arr.copy()
    elif t.kind == BOX_COX:
        if t.lam == 0:
            out = np.exp(z_arr)
        else:
            out = np.sign(z_arr) * np.abs(t.lam * z_arr) ** (1.0 / t.lam)
    else:
        out = t._spline_inverse(z_arr)
    return float(out[0]) if scalar else out


def interval_image(t: Transformation, scheme: RoundingScheme, y) -> BoxRegion:
    """The constraint box ``g(A_y)`` for a response vector."""
    y = scheme.check_support(np.atleast_1d(y))
    lower = g_eval(t, scheme.lower_edge(y))
    upper = g_eval(t, scheme.upper_edge(y))
    return BoxRegion(np.atleast_1d(lower), np.atleast_1d(upper))


def latent_to_response(t: Transformation, scheme: RoundingScheme, z) -> np.ndarray:
    """``h(g^{-1}(z))`` with an edge check so results agree with ``interval_image``."""
    z = np.asarray(z, dtype=float)
    j = scheme.round(g_inverse(t, z.ravel())).reshape(z.shape)
    low = np.asarray(g_eval(t, scheme.lower_edge(j.ravel()))).reshape(z.shape)
    j = np.where((z < low) & (j > scheme.y_min), j - 1, j)
    high = np.asarray(g_eval(t, scheme.upper_edge(j.ravel()))).reshape(z.shape)
    j = np.where((z >= high) & (j < scheme.y_max), j + 1, j)
    return j.astype(np.int64)


# ---------------------------------------------------------------- fitting

def fritsch_carlson_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Tangents for a monotone cubic Hermite interpolant of increasing data."""
    h = np.diff(x)
    delta = np.diff(y) / h
    m = np.empty_like(y)
    m[0] = delta[0]
    m[-1] = delta[-1]
    m[1:-1] = 0.5 * (delta[:-1] + delta[1:])
    for k in range(len(delta)):
        a = m[k] / delta[k]
        b = m[k + 1] / delta[k]
        r = a * a + b * b
        if r > 9.0:
            tau = 3.0 / math.sqrt(r)
            m[k] = tau * a * delta[k]
            m[k + 1] = tau * b * delta[k]
    return m


def _moments(y: np.ndarray) -> tuple[float, float]:
    if y.shape[0] < 2:
        raise ValueError("need at least two observations")
    ybar = float(np.mean(y))
    sd = float(np.std(y, ddof=1))
    if sd == 0.0:
        raise ValueError("response is constant; the transformation is not identifiable")
    return ybar, sd


def _cdf_transform(kind, js, cdf_below, cdf_top, top_j, scheme, center, scale, params):
    # knots at lower edges of each j (cdf just below j) plus the top edge
    xs = list(scheme.lower_edge(js))
    ps = list(cdf_below)
    upper = float(scheme.upper_edge(top_j))
    xs.append(upper)
    ps.append(cdf_top)
    xs = np.asarray(xs, dtype=float)
    ps = np.asarray(ps, dtype=float)
    keep = np.isfinite(xs) & (ps > 0) & (ps < 1)
    xs, ps = xs[keep], ps[keep]
    vals = center + scale * ndtri(ps)
    order = np.argsort(xs)
    xs, vals = xs[order], vals[order]
    strict = np.concatenate([[True], (np.diff(xs) > 0) & (np.diff(vals) > 0)])
    xs, vals = xs[strict], vals[strict]
    if xs.shape[0] < 2:
        raise ValueError("too few distinct values to fit a transformation")
    slopes = fritsch_carlson_slopes(xs, vals)
    params = dict(params, center=center, scale=scale)
    return Transformation(kind, knots_x=xs, knots_y=vals, slopes=slopes, params=params)


def fit_np_cdf(y, scheme: RoundingScheme) -> Transformation:
    """Smoothed empirical-CDF transformation.

    The step estimator ``ybar + s_y * Phi^{-1}(n/(n+1) * F_hat(j))`` is
    evaluated at the interval edges of the observed values and interpolated
    by a monotone cubic spline.
    """
    y = scheme.check_support(np.asarray(y))
    ybar, sd = _moments(y)
    n = y.shape[0]
    uniq = np.unique(y)
    ys = np.sort(y)
    below = np.searchsorted(ys, uniq, side="left") / (n + 1.0)
    top = n / (n + 1.0)
    return _cdf_transform(NP_CDF, uniq, below, top, uniq[-1], scheme, ybar, sd,
                          {"n": int(n)})


def fit_parametric(y, family: str, scheme: RoundingScheme) -> Transformation:
    """Moment-matched Poisson or negative binomial CDF transformation."""
    y = scheme.check_support(np.asarray(y))
    ybar, sd = _moments(y)
    if ybar <= 0:
        raise ValueError("parametric count transformations need a positive mean")
    var = sd * sd
    if family == "negbin" and var <= ybar:
        warnings.warn("sample variance does not exceed the mean; using the Poisson family",
                      RuntimeWarning, stacklevel=2)
        family = "poisson"
    if family == "poisson":
        dist = stats.poisson(ybar)
        kind, params = POISSON, {"rate": ybar}
    elif family == "negbin":
        size = ybar * ybar / (var - ybar)
        prob = size / (size + ybar)
        dist = stats.nbinom(size, prob)
        kind, params = NEGBIN, {"size": size, "prob": prob}
    else:
        raise ValueError(f"unknown family {family!r}")
    j_lo = max(0.0, scheme.y_min) if math.isfinite(scheme.y_min) else 0.0
    j_hi = float(np.max(y))
    while dist.sf(j_hi) > 1e-12:
        j_hi += 1.0
    if math.isfinite(scheme.y_max):
        j_hi = min(j_hi, scheme.y_max)
    js = np.arange(j_lo, j_hi + 1.0)
    below = dist.cdf(js - 1.0)
    return _cdf_transform(kind, js, below, float(dist.cdf(j_hi)), j_hi, scheme, ybar, sd, params)


def fit_transformation(kind: str, y, scheme: RoundingScheme, lam: float | None = None) -> Transformation:
    """Build a transformation by name: identity, sqrt, log, box-cox, np-cdf, poisson, negbin."""
    if kind == "identity":
        return Transformation.identity()
    if kind == "sqrt":
        return Transformation.box_cox(0.5)
    if kind == "log":
        return Transformation.box_cox(0.0)
    if kind == "box-cox":
        return Transformation.box_cox(1.0 if lam is None else lam)
    if kind == NP_CDF:
        return fit_np_cdf(y, scheme)
    if kind in ("poisson", POISSON):
        return fit_parametric(y, "poisson", scheme)
    if kind in ("negbin", NEGBIN):
        return fit_parametric(y, "negbin", scheme)
    raise ValueError(f"unknown transformation {kind!r}")
