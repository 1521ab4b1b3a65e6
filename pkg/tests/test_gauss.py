import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize, stats

from starcount import gauss
from starcount.gauss import BoxRegion, GaussianParams, ZeroMassError

INF = np.inf


def params(mean, cov):
    return GaussianParams(np.asarray(mean, float), np.asarray(cov, float))


class TestTypes:
    def test_asymmetric_cov_rejected(self):
        with pytest.raises(ValueError):
            params([0, 0], [[1, 0.5], [0.4, 1]])

    def test_negative_eigenvalue_rejected(self):
        with pytest.raises(ValueError):
            params([0, 0], [[1, 2], [2, 1]])

    def test_box_order_and_length(self):
        with pytest.raises(ValueError):
            BoxRegion(np.array([1.0]), np.array([0.0]))
        with pytest.raises(ValueError):
            BoxRegion(np.array([0.0, 1.0]), np.array([2.0]))

    def test_box_helpers(self):
        b = BoxRegion(np.array([0.0, -INF]), np.array([1.0, 2.0]))
        assert b.dim == 2 and not b.is_unbounded()
        assert BoxRegion.whole(3).is_unbounded()
        s = b.shift([1.0, 1.0])
        assert np.array_equal(s.lower, [-1.0, -INF]) and np.array_equal(s.upper, [0.0, 1.0])
        assert b.product(BoxRegion.whole(1)).dim == 3
        assert b.contains(np.array([[0.5, 0.0], [1.5, 0.0]])).tolist() == [True, False]


class TestCholesky:
    def test_identity(self):
        L, perm = gauss.cholesky_reordered(params(np.zeros(3), np.eye(3)), BoxRegion.whole(3))
        assert np.allclose(L, np.eye(3)) and sorted(perm) == [0, 1, 2]

    def test_diagonal(self):
        L, perm = gauss.cholesky_reordered(params([0, 0], np.diag([4.0, 1.0])), BoxRegion.whole(2))
        assert np.allclose(np.diag(L), np.sqrt(np.array([4.0, 1.0])[perm]))

    def test_correlated_reconstruction(self):
        cov = np.array([[1, 0.5], [0.5, 1]])
        L, perm = gauss.cholesky_reordered(params([0, 0], cov), BoxRegion(np.zeros(2), np.full(2, INF)))
        assert np.allclose(np.sum(L ** 2, axis=1), 1.0)
        assert np.max(np.abs(L @ L.T - cov[np.ix_(perm, perm)])) < 1e-10

    def test_greedy_picks_tightest_first(self):
        box = BoxRegion(np.array([-INF, 3.0, -1.0]), np.array([INF, INF, 1.0]))
        _, perm = gauss.cholesky_reordered(params(np.zeros(3), np.eye(3)), box)
        assert perm[0] == 1

    def test_non_psd_fails(self):
        with pytest.raises(np.linalg.LinAlgError):
            gauss.stable_cholesky(-np.eye(2))

    def test_jitter_rescues_singular(self):
        L = gauss.stable_cholesky(np.ones((2, 2)))
        assert np.allclose(L @ L.T, np.ones((2, 2)), atol=1e-6)


class TestBoxProbability:
    def test_univariate_exact(self, rng):
        res = gauss.box_probability(params([0], [[1]]), BoxRegion(np.zeros(1), np.full(1, INF)), 10, rng)
        assert res.estimate == 0.5 and res.rel_err == 0.0

    def test_diagonal_product(self, rng):
        sd = np.array([1.0, 2.0, 0.5])
        lo, hi = np.array([-1.0, 0.0, -INF]), np.array([0.5, INF, 0.2])
        est = gauss.box_probability(params(np.zeros(3), np.diag(sd ** 2)), BoxRegion(lo, hi), 2000, rng)
        exact = np.prod(stats.norm.cdf(hi / sd) - stats.norm.cdf(lo / sd))
        assert abs(est.estimate / exact - 1) < 1e-3

    def test_orthant(self, rng):
        res = gauss.box_probability(params([0, 0], [[1, 0.5], [0.5, 1]]),
                                    BoxRegion(np.zeros(2), np.full(2, INF)), 100_000, rng)
        assert abs(res.estimate - 1 / 3) < 3 * res.rel_err * res.estimate + 1e-4

    def test_whole_space(self, rng):
        res = gauss.box_probability(params(np.zeros(4), np.eye(4)), BoxRegion.whole(4), 100, rng)
        assert res.estimate == 1.0

    def test_underflow_flag(self, rng):
        box = BoxRegion(np.full(3, 60.0), np.full(3, INF))
        res = gauss.box_probability(params(np.zeros(3), np.eye(3) + 0.1), box, 1000, rng)
        assert res.underflow or res.estimate < 1e-300

    def test_deep_tail_log_scale(self, rng):
        # orthant at 10 sd: tiny but representable in logs
        box = BoxRegion(np.full(2, 10.0), np.full(2, INF))
        res = gauss.box_probability(params([0, 0], [[1, 0.3], [0.3, 1]]), box, 20_000, rng)
        assert np.isfinite(res.log_estimate) and res.rel_err < 0.05

    def test_against_scipy_mvn(self, rng):
        cov = np.array([[1.0, 0.6, 0.2], [0.6, 2.0, -0.3], [0.2, -0.3, 1.5]])
        lo, hi = np.array([-0.5, -1.0, 0.0]), np.array([1.0, 2.0, 3.0])
        res = gauss.box_probability(params(np.zeros(3), cov), BoxRegion(lo, hi), 50_000, rng)
        ref = stats.multivariate_normal(np.zeros(3), cov).cdf(hi, lower_limit=lo)
        assert abs(res.estimate - ref) < 4 * res.rel_err * res.estimate + 2e-5


class TestTilting:
    def test_whole_space_zero(self):
        sol = gauss.solve_tilting(params(np.zeros(3), np.eye(3) + 0.2), BoxRegion.whole(3))
        assert np.allclose(sol.tilt, 0) and sol.log_norm_const == pytest.approx(0.0, abs=1e-12)

    def test_univariate_tail(self):
        # the final coordinate's tilt is zero at the saddle point; with one
        # coordinate the proposal is the exact truncated law
        sol = gauss.solve_tilting(params([0], [[1]]), BoxRegion(np.array([5.0]), np.array([INF])))
        assert sol.expected_accept_rate > 0.5
        assert sol.log_norm_const == pytest.approx(stats.norm.logsf(5.0), rel=1e-10)
        assert sol.point[0] > 5.0

    def test_diagonal_separable(self):
        lo, hi = np.array([1.0, 2.0]), np.array([INF, 3.0])
        sol = gauss.solve_tilting(params([0, 0], np.eye(2)), BoxRegion(lo, hi))
        singles = [gauss.solve_tilting(params([0], [[1]]), BoxRegion(lo[i:i + 1], hi[i:i + 1]))
                   for i in range(2)]
        tilt = np.empty(2)
        tilt[sol.permutation] = sol.tilt
        assert np.allclose(tilt, [s.tilt[0] for s in singles])
        assert sol.log_norm_const == pytest.approx(sum(s.log_norm_const for s in singles), rel=1e-10)

    def test_correlated_positive_tilt_and_bound(self, rng):
        cov = np.array([[1, 0.9], [0.9, 1]])
        box = BoxRegion(np.ones(2), np.full(2, INF))
        sol = gauss.solve_tilting(params([0, 0], cov), box)
        assert sol.converged and sol.tilt[0] > 0
        p = gauss.box_probability(params([0, 0], cov), box, 50_000, rng)
        # psistar is an upper bound on the log probability
        assert sol.log_norm_const >= p.log_estimate - 3 * p.rel_err
        assert sorted(sol.permutation.tolist()) == [0, 1] and np.isfinite(sol.log_norm_const)


class TestSampling:
    def test_unbounded_moments(self, rng):
        cov = np.array([[2, 0.5], [0.5, 1]])
        x = gauss.sample_tmvn(params([1, -1], cov), BoxRegion.whole(2), 50_000, rng)
        se = np.sqrt(np.diag(cov) / 50_000)
        assert np.all(np.abs(x.mean(0) - [1, -1]) < 4 * se)
        assert np.allclose(np.cov(x, rowvar=False), cov, atol=0.05)

    def test_half_normal_mean(self, rng):
        x = gauss.sample_tmvn(params([0], [[1]]), BoxRegion(np.zeros(1), np.full(1, INF)), 50_000, rng)
        se = math.sqrt(1 - 2 / math.pi) / math.sqrt(50_000)
        assert abs(x.mean() - math.sqrt(2 / math.pi)) < 4 * se

    def test_orthant_correlation_against_quadrature(self, rng):
        rho = 0.5
        cov = np.array([[1, rho], [rho, 1]])
        N = 100_000
        x = gauss.sample_tmvn(params([0, 0], cov), BoxRegion(np.zeros(2), np.full(2, INF)), N, rng)
        pdf = stats.multivariate_normal(np.zeros(2), cov).pdf
        mass = integrate.dblquad(lambda b, a: pdf([a, b]), 0, 12, 0, 12)[0]
        m = [integrate.dblquad(lambda b, a, k=k: [a, b][k] * pdf([a, b]), 0, 12, 0, 12)[0] / mass
             for k in range(2)]
        e11 = integrate.dblquad(lambda b, a: a * a * pdf([a, b]), 0, 12, 0, 12)[0] / mass
        e12 = integrate.dblquad(lambda b, a: a * b * pdf([a, b]), 0, 12, 0, 12)[0] / mass
        corr = (e12 - m[0] * m[1]) / (e11 - m[0] ** 2)
        emp = np.corrcoef(x, rowvar=False)[0, 1]
        se = (1 - emp ** 2) / math.sqrt(N)
        assert abs(emp - corr) < 4 * se

    def test_rows_inside_and_exact_flag(self, rng):
        cov = np.array([[1, -0.7], [-0.7, 2]])
        box = BoxRegion(np.array([0.5, -INF]), np.array([2.0, -1.0]))
        tm = gauss.TruncatedMVN(params([0, 0], cov), box)
        x = tm.sample(5000, rng)
        assert not tm.approximate and np.all(box.contains(x))

    def test_gibbs_fallback_sets_flag(self, rng):
        box = BoxRegion(np.full(3, 2.0), np.full(3, INF))
        cov = np.eye(3) - 0.45 * (np.ones((3, 3)) - np.eye(3))
        tm = gauss.TruncatedMVN(params(np.zeros(3), cov), box, accept_floor=1.01)
        x = tm.sample(500, rng)
        assert tm.approximate and np.all(box.contains(x)) and x.shape == (500, 3)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_zero_mass_raises(self, rng):
        box = BoxRegion(np.full(2, 1e200), np.full(2, INF))
        with pytest.raises(ZeroMassError):
            gauss.sample_tmvn(params([0, 0], np.eye(2)), box, 10, rng)

    def test_concatenated_batches(self):
        # independent streams give independent batches of the same law
        box = BoxRegion(np.zeros(2), np.full(2, INF))
        p = params([0, 0], [[1, 0.3], [0.3, 1]])
        seqs = np.random.SeedSequence(7).spawn(2)
        a, b = (gauss.sample_tmvn(p, box, 20_000, np.random.default_rng(s)) for s in seqs)
        assert abs(a.mean() - b.mean()) < 0.03


class TestTruncnorm:
    def test_unbounded(self, rng):
        assert np.isfinite(gauss.sample_truncnorm_scalar(0.0, 1.0, -INF, INF, rng))
        xs = gauss.sample_truncnorm(np.zeros(40_000), 1.0, -INF, INF, rng)
        assert abs(xs.mean()) < 4 / math.sqrt(40_000) and abs(xs.var() - 1) < 0.03

    def test_far_tail(self, rng):
        x = gauss.sample_truncnorm(np.zeros(1000), 1.0, 8.0, INF, rng)
        assert np.all(np.isfinite(x)) and np.all(x >= 8.0)
        y = gauss.sample_truncnorm(np.zeros(1000), 1.0, 40.0, 41.0, rng)
        assert np.all((y >= 40.0) & (y <= 41.0))
        # mass far below double underflow is still sampled in log space
        z = gauss.sample_truncnorm(np.zeros(100), 1.0, 1e5, INF, rng)
        assert np.all((z >= 1e5) & (z < 1e5 + 1e-3))

    def test_symmetric_interval_variance(self, rng):
        N = 100_000
        x = gauss.sample_truncnorm(np.zeros(N), 1.0, -1.0, 1.0, rng)
        target = 1 - 2 * stats.norm.pdf(1) / (stats.norm.cdf(1) - stats.norm.cdf(-1))
        m4 = np.mean(x ** 4)
        se = math.sqrt((m4 - x.var() ** 2) / N)
        assert abs(x.var() - target) < 4 * se

    def test_scalar_wrapper(self, rng):
        v = gauss.sample_truncnorm_scalar(2.0, 0.5, 2.5, 3.0, rng)
        assert isinstance(v, float) and 2.5 <= v <= 3.0

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            gauss.sample_truncnorm(0.0, -1.0, 0.0, 1.0, rng)
        with pytest.raises(ValueError):
            gauss.sample_truncnorm(0.0, 1.0, 1.0, 1.0, rng)
        with pytest.raises(ZeroMassError):
            gauss.sample_truncnorm(0.0, 1.0, 1e200, INF, rng)

    @settings(max_examples=60, deadline=None)
    @given(a=st.floats(-30, 30), w=st.floats(1e-3, 20), mean=st.floats(-5, 5), sd=st.floats(0.1, 5))
    def test_draws_inside(self, a, w, mean, sd):
        lo, hi = mean + sd * a, mean + sd * (a + w)
        x = gauss.sample_truncnorm(np.full(50, mean), sd, lo, hi, np.random.default_rng(0))
        assert np.all((x >= lo) & (x <= hi))


def test_univariate_bound_is_exact():
    # with one coordinate the envelope equals the tail mass, checked by quadrature
    lo = 5.0
    bound = gauss.solve_tilting(params([0], [[1]]), BoxRegion(np.array([lo]), np.array([INF]))).log_norm_const
    exact = math.log(integrate.quad(stats.norm.pdf, lo, INF)[0])
    assert bound == pytest.approx(exact, rel=1e-6)


def test_bivariate_bound_against_shift_search():
    # the optimized bound is no larger than the bound at any fixed tilt
    cov = np.array([[1, 0.8], [0.8, 1]])
    box = BoxRegion(np.array([1.0, 0.5]), np.array([INF, INF]))
    sol = gauss.solve_tilting(params([0, 0], cov), box)
    L, l, u = sol.scaled_factor, sol.lower, sol.upper

    def bound(mu):
        # psi(x, mu) maximized over x inside the box equals the envelope at the saddle
        x = sol.point
        c = L[1, 0] * x[0]
        return (0.5 * mu * mu - x[0] * mu + stats.norm.logsf(l[0] - mu)
                + stats.norm.logsf(l[1] - c))

    res = optimize.minimize_scalar(bound, bounds=(-5, 5), method="bounded")
    assert sol.log_norm_const <= bound(res.x) + 1e-8
    assert sol.log_norm_const == pytest.approx(bound(sol.tilt[0]), abs=1e-8)
