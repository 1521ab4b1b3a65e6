import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from starcount import _pykernels as py
from starcount import kernels

cy = pytest.importorskip("starcount._ckernels")

finite = st.floats(-60, 60, allow_nan=False)


@given(finite, st.floats(1e-6, 50))
def test_ln_normal_prob(a, width):
    lo, hi = np.array([a]), np.array([a + width])
    assert np.allclose(cy.ln_normal_prob(lo, hi), py.ln_normal_prob(lo, hi), rtol=1e-10, atol=1e-12)


def test_ln_normal_prob_infinite():
    lo = np.array([-np.inf, 1e200, 40.0, -np.inf, 3.0])
    hi = np.array([np.inf, np.inf, np.inf, -1e200, np.inf])
    a, b = cy.ln_normal_prob(lo, hi), py.ln_normal_prob(lo, hi)
    assert np.array_equal(np.isneginf(a), np.isneginf(b))
    assert np.allclose(a[np.isfinite(a)], b[np.isfinite(b)], rtol=1e-12)


@settings(max_examples=200)
@given(finite, st.floats(1e-8, 30), st.floats(0, 1, exclude_max=True))
def test_truncnorm_icdf(a, width, u):
    lo, hi, uu = np.array([a]), np.array([a + width]), np.array([u])
    x, y = cy.truncnorm_icdf(lo, hi, uu), py.truncnorm_icdf(lo, hi, uu)
    assert lo[0] <= x[0] <= hi[0]
    assert np.allclose(x, y, rtol=1e-9, atol=1e-9)


def test_tilted_proposals(rng):
    n, N = 5, 300
    A = rng.standard_normal((n, n))
    L = np.tril(A, -1) * 0.4
    lb = rng.normal(-1, 1, n)
    ub = lb + rng.uniform(0.5, 3, n)
    ub[2] = np.inf
    mu = rng.normal(0, 0.3, n)
    U = rng.random((N, n))
    zc, wc = cy.tilted_proposals(L, lb, ub, mu, U)
    zp, wp = py.tilted_proposals(L, lb, ub, mu, U)
    assert np.allclose(zc, zp, rtol=1e-9, atol=1e-9)
    assert np.allclose(wc, wp, rtol=1e-9, atol=1e-9)


def test_gibbs_box(rng):
    n = 3
    A = rng.standard_normal((n, n))
    Q = A @ A.T + n * np.eye(n)
    mean = rng.standard_normal(n)
    lb, ub = np.full(n, -0.5), np.array([1.0, np.inf, 2.0])
    U = rng.random((60, n))
    a = cy.gibbs_box(Q, mean, lb, ub, np.zeros(n), U, 10)
    b = py.gibbs_box(Q, mean, lb, ub, np.zeros(n), U, 10)
    assert a.shape == (50, n) and np.allclose(a, b, rtol=1e-9, atol=1e-9)


def test_selected_backend():
    assert kernels.BACKEND == "cython"


def test_pure_python_switch():
    code = "from starcount import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, STARCOUNT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
