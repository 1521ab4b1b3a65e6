"""Basis-expansion STAR regression with a diagonal Gram matrix.

A raw basis ``B`` (n x p) is rotated by its thin SVD, ``B = U S V'``, so the
working design ``X = U S`` has ``X'X = diag(S^2)`` while ``X beta = B theta``
for ``beta = V' theta``. With the prior ``beta ~ N(0, psi sigma^2 I)`` the
joint predictive needs only diagonal scalings and matrix-vector products.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre
from scipy.interpolate import BSpline

from .discretization import RoundingScheme, Transformation, latent_to_response
from .gauss import GaussianParams, TruncatedMVN
from .star_linear import GaussianPrior, StarLinearModel

BSPLINE = "bspline"
ORTHO_POLY = "orthogonal-polynomial"


@dataclass(frozen=True)
class BasisSpec:
    """Raw basis configuration.

    ``bspline`` uses ``n_interior`` equally spaced interior knots of the
    given degree (cubic by default), clamped at the data range.
    ``orthogonal-polynomial`` uses degrees 1..degree (plus an intercept when
    ``intercept``), orthonormalized on the training grid.
    """
    kind: str = BSPLINE
    degree: int = 3
    n_interior: int = 20
    intercept: bool = True

    def __post_init__(self):
        if self.kind not in (BSPLINE, ORTHO_POLY):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.degree < 1 and self.kind == ORTHO_POLY:
            raise ValueError("polynomial degree must be at least 1")
        if self.n_interior < 0 or self.degree < 0:
            raise ValueError("degree and knot count must be nonnegative")


def _scale01(tau, lo, hi):
    return (np.asarray(tau, dtype=float) - lo) / (hi - lo)


class RawBasis:
    """A raw basis fixed by training points, evaluable at new points."""

    def __init__(self, spec: BasisSpec, tau):
        tau = np.asarray(tau, dtype=float).reshape(-1)
        self.spec = spec
        self.lo, self.hi = float(tau.min()), float(tau.max())
        if not self.hi > self.lo:
            raise ValueError("tau must contain at least two distinct points")
        if spec.kind == BSPLINE:
            k = spec.degree
            inner = np.linspace(0.0, 1.0, spec.n_interior + 2)
            self.knots = np.concatenate([np.zeros(k), inner, np.ones(k)])
            self._rot = None
        else:
            # orthonormalize Legendre polynomials under the empirical grid measure
            P = self._legendre(tau)
            _, R = np.linalg.qr(P)
            self._rot = np.linalg.inv(R) * math.sqrt(tau.shape[0])

    def _legendre(self, tau):
        x = 2.0 * _scale01(tau, self.lo, self.hi) - 1.0
        start = 0 if self.spec.intercept else 1
        cols = [legendre.legval(x, np.eye(self.spec.degree + 1)[j])
                for j in range(start, self.spec.degree + 1)]
        return np.column_stack(cols)

    def __call__(self, tau) -> np.ndarray:
        if self.spec.kind == BSPLINE:
            x = np.clip(_scale01(tau, self.lo, self.hi), 0.0, 1.0)
            B = BSpline.design_matrix(x, self.knots, self.spec.degree).toarray()
            if not self.spec.intercept:
                B = B[:, 1:]
            return B
        return self._legendre(tau) @ self._rot


@dataclass(frozen=True, eq=False)
class DiagonalizedBasis:
    X: np.ndarray
    d: np.ndarray
    backmap: np.ndarray
    raw: RawBasis

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def design(self, tau_new) -> np.ndarray:
        """Reparametrized design at new points, ``B(tau_new) V``."""
        return self.raw(tau_new) @ self.backmap

    def to_reparam(self, theta) -> np.ndarray:
        """Map raw-basis coefficients to reparametrized ones."""
        return self.backmap.T @ np.asarray(theta, dtype=float)


def build_diagonalized(spec: BasisSpec, tau, rel_tol: float = 1e-10) -> DiagonalizedBasis:
    raw = RawBasis(spec, tau)
    B = raw(tau)
    if B.shape[0] < B.shape[1]:
        raise ValueError("basis has more columns than observations")
    U, S, Vt = np.linalg.svd(B, full_matrices=False)
    keep = S > rel_tol * S[0]
    if not np.all(keep):
        warnings.warn(f"basis is rank deficient; keeping {int(keep.sum())} of {S.shape[0]} directions",
                      RuntimeWarning, stacklevel=2)
    U, S, Vt = U[:, keep], S[keep], Vt[keep]
    return DiagonalizedBasis(U * S, S ** 2, Vt.T, raw)


def shrink_factors(psi: float, d) -> np.ndarray:
    """``1/(1 + psi d_j)``, the complement of ``psi d_j/(1 + psi d_j)``."""
    return 1.0 / (1.0 + psi * np.asarray(d, dtype=float))


def star_model(basis: DiagonalizedBasis, y, scheme: RoundingScheme, transform: Transformation,
               psi: float, sigma: float) -> StarLinearModel:
    """The equivalent linear model with prior ``N(0, psi sigma^2 I)``."""
    prior = GaussianPrior(np.zeros(basis.p), psi * sigma ** 2 * np.eye(basis.p))
    return StarLinearModel(basis.X, y, scheme, transform, prior, sigma)


def latent_v0(basis: DiagonalizedBasis, y, scheme, transform, psi, sigma) -> TruncatedMVN:
    model = star_model(basis, y, scheme, transform, psi, sigma)
    X = basis.X
    cov = sigma ** 2 * (psi * X @ X.T + np.eye(basis.n))
    return TruncatedMVN(GaussianParams(np.zeros(basis.n), cov), model.region())


def predict_nl(basis: DiagonalizedBasis, y, scheme: RoundingScheme, transform: Transformation,
               psi: float, sigma: float, tau_new, count: int, rng: np.random.Generator,
               return_latent: bool = False, v0=None):
    """Joint predictive draws at ``tau_new`` (a single point set or a list of sets).

    One truncated ``V_0`` batch is shared by every point set in the call.
    """
    multiple = isinstance(tau_new, (list, tuple)) and len(tau_new) and np.ndim(tau_new[0]) > 0
    sets = list(tau_new) if multiple else [tau_new]
    if v0 is None:
        v0 = latent_v0(basis, y, scheme, transform, psi, sigma).sample(count, rng)
    shrink = shrink_factors(psi, basis.d)
    proj = (v0 @ basis.X) * shrink  # count x p: diag{1/(1+psi d)} X' V_0
    outs = []
    for tau in sets:
        Xt = basis.design(np.asarray(tau, dtype=float).reshape(-1))
        m = Xt.shape[0]
        xi_p = rng.standard_normal((count, basis.p))
        xi_n = rng.standard_normal((count, m))
        v1 = sigma * ((xi_p * np.sqrt(psi * shrink)) @ Xt.T + xi_n)
        z = v1 + psi * proj @ Xt.T
        yt = latent_to_response(transform, scheme, z)
        outs.append((yt, z) if return_latent else yt)
    return outs if multiple else outs[0]
