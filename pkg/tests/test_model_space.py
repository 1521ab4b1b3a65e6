import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from invariants import small_model
from starcount import model_space as ms
from starcount import star_linear as sl
from starcount.discretization import RoundingScheme, Transformation


def candidates(seed=0, k=2):
    base = small_model(seed)
    out = [ms.Candidate(base, "identity")]
    if k > 1:
        other = sl.StarLinearModel(base.X, base.y, base.scheme, Transformation.box_cox(0.5),
                                   sl.GPrior(10.0), 1.0)
        out.append(ms.Candidate(other, "sqrt"))
    return out


def test_single_model():
    probs = ms.posterior_model_probs(ms.CandidateSet(candidates(k=1)), n_samples=2000,
                                     rng=np.random.default_rng(0))
    assert probs.probs.tolist() == [1.0] and not probs.close_call


def test_identical_models_share_weight():
    c = candidates(k=1)[0]
    cset = ms.CandidateSet([c, c, c])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ms.ModelComparisonWarning)
        res = ms.posterior_model_probs(cset, n_samples=20_000, rng=np.random.default_rng(1))
    tol = 3 * math.sqrt(3) * res.rel_errs.max() + 1e-12
    assert np.allclose(res.probs, 1 / 3, atol=tol)


def test_identical_models_warn():
    c = candidates(k=1)[0]
    with pytest.warns(ms.ModelComparisonWarning):
        res = ms.posterior_model_probs(ms.CandidateSet([c, c]), n_samples=2000,
                                       rng=np.random.default_rng(2))
    assert res.close_call


def test_ratio_matches_marginals():
    cset = ms.CandidateSet(candidates(3))
    res = ms.posterior_model_probs(cset, n_samples=20_000, rng=np.random.default_rng(3))
    logs = [sl.marginal_likelihood(c.model, 20_000, np.random.default_rng(4)).log_value
            for c in cset.candidates]
    ratio = math.log(res.probs[0] / res.probs[1])
    assert abs(ratio - (logs[0] - logs[1])) <= 3 * 2 * res.rel_errs.max() + 1e-9


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=6), st.floats(1e-3, 1e3))
def test_weights_scale_free(logs, c):
    prior = np.linspace(1.0, 2.0, len(logs))
    a = ms.weights_from_log_marginals(logs, prior / prior.sum())
    b = ms.weights_from_log_marginals(logs, c * prior / (c * prior).sum())
    assert np.allclose(a, b, rtol=0, atol=1e-12)
    assert a.sum() == pytest.approx(1.0, abs=1e-15)


def test_all_underflow():
    with pytest.raises(FloatingPointError):
        ms.weights_from_log_marginals([-np.inf, -np.inf], [0.5, 0.5])


def test_select_ties_go_low():
    assert ms.select_model([0.4, 0.4, 0.2]) == 0
    assert ms.select_model([0.1, 0.5, 0.4]) == 1


def test_candidate_set_validation():
    with pytest.raises(ValueError):
        ms.CandidateSet([])
    with pytest.raises(ValueError):
        ms.CandidateSet(candidates(), prior_weights=[1.0])
    with pytest.raises(ValueError):
        ms.posterior_model_probs(ms.CandidateSet(candidates()), y=np.zeros(6, dtype=int))


def test_degenerate_weights(rng):
    cset = ms.CandidateSet(candidates())
    draws, ks = ms.model_averaged_predict(cset, cset.candidates[0].model.X[:2], 500, rng,
                                          probs=[1.0, 0.0])
    assert np.all(ks == 0) and draws.shape == (500, 2)


def test_model_frequencies(rng):
    cset = ms.CandidateSet(candidates())
    w = 0.3
    N = 4000
    _, ks = ms.model_averaged_predict(cset, cset.candidates[0].model.X[:1], N, rng, probs=[w, 1 - w])
    assert abs(np.mean(ks == 0) - w) <= 3 * math.sqrt(w * (1 - w) / N)


def test_single_model_average_matches_predict():
    cset = ms.CandidateSet(candidates(k=1))
    xt = cset.candidates[0].model.X[:1]
    a, _ = ms.model_averaged_predict(cset, xt, 40_000, np.random.default_rng(5), probs=[1.0])
    b = cset.candidates[0].predict(xt, 40_000, np.random.default_rng(6))
    fa = np.bincount(a[:, 0], minlength=6) / a.shape[0]
    fb = np.bincount(b[:, 0], minlength=6) / b.shape[0]
    se = np.sqrt((fa * (1 - fa) + fb * (1 - fb)) / a.shape[0])
    assert np.all(np.abs(fa - fb) <= 3 * se + 1e-12)
