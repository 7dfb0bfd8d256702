import numpy as np
import pytest
from scipy.integrate import quad

from bootsep.confidence import (
    ConfidenceError,
    cluster_size_equality,
    clustering_fit_jsd,
    combine,
    jsd_monte_carlo,
    posterior_confidence,
)
from bootsep.gmm import GmmModel


def hard_posteriors(fractions, m=200):
    """M x 2 posterior matrix with the given hard-assignment fractions."""
    n0 = int(round(fractions[0] * m))
    rows = [[1.0, 0.0]] * n0 + [[0.0, 1.0]] * (m - n0)
    return np.array(rows)


def gmm_1d(means, variances, weights):
    return GmmModel(
        np.asarray(means, dtype=float)[:, None],
        np.asarray(variances, dtype=float)[:, None, None],
        np.asarray(weights, dtype=float),
    )


def jsd_quadrature(p: GmmModel, q: GmmModel, lo=-60, hi=60):
    """High-resolution numerical quadrature oracle for 1-D models."""

    def density(model, x):
        out = 0.0
        for j in range(model.n_components):
            var = model.covariances[j, 0, 0]
            out += (
                model.mixing_weights[j]
                * np.exp(-0.5 * (x - model.means[j, 0]) ** 2 / var)
                / np.sqrt(2 * np.pi * var)
            )
        return out

    def integrand_p(x):
        dp, dq = density(p, x), density(q, x)
        m = 0.5 * (dp + dq)
        return dp * np.log2(dp / m) if dp > 0 else 0.0

    def integrand_q(x):
        dp, dq = density(p, x), density(q, x)
        m = 0.5 * (dp + dq)
        return dq * np.log2(dq / m) if dq > 0 else 0.0

    kp, _ = quad(integrand_p, lo, hi, limit=400)
    kq, _ = quad(integrand_q, lo, hi, limit=400)
    return 0.5 * (kp + kq)


class TestClusterSizeEquality:
    def test_balanced(self):
        assert cluster_size_equality(hard_posteriors([0.5, 0.5])) == pytest.approx(1.0)

    def test_mode_collapse(self):
        assert cluster_size_equality(hard_posteriors([1.0, 0.0])) == pytest.approx(0.0)

    def test_three_quarters(self):
        assert cluster_size_equality(hard_posteriors([0.75, 0.25])) == pytest.approx(0.5)

    def test_permutation_invariant(self):
        posts = hard_posteriors([0.3, 0.7])
        assert cluster_size_equality(posts) == pytest.approx(
            cluster_size_equality(posts[:, ::-1])
        )

    def test_tie_goes_to_lowest_index(self):
        posts = np.full((10, 2), 0.5)
        assert cluster_size_equality(posts) == pytest.approx(0.0)

    def test_empty_rejected(self):
        with pytest.raises(ConfidenceError):
            cluster_size_equality(np.zeros((0, 2)))


class TestJsd:
    def test_identical_distributions_near_zero(self):
        p = gmm_1d([0.0], [1.0], [1.0])
        q = gmm_1d([0.0, 0.0], [1.0, 1.0], [0.5, 0.5])
        assert clustering_fit_jsd(p, q, n_samples=10_000, seed=0) < 0.02

    def test_well_separated_mixture(self):
        p = gmm_1d([0.0], [1.0], [1.0])
        q = gmm_1d([-20.0, 20.0], [1.0, 1.0], [0.5, 0.5])
        est, stderr = jsd_monte_carlo(p, q, 10_000, seed=1)
        assert est >= 0.95
        oracle = jsd_quadrature(p, q)
        assert abs(est - oracle) <= max(3 * stderr, 1e-3)

    def test_moderate_overlap_matches_quadrature(self):
        p = gmm_1d([0.0], [2.0], [1.0])
        q = gmm_1d([-1.5, 1.5], [0.8, 1.2], [0.4, 0.6])
        est, stderr = jsd_monte_carlo(p, q, 40_000, seed=2)
        oracle = jsd_quadrature(p, q)
        assert abs(est - oracle) <= 3 * stderr

    def test_symmetry_within_mc_error(self):
        p = gmm_1d([0.0], [1.5], [1.0])
        q = gmm_1d([-2.0, 2.0], [1.0, 1.0], [0.5, 0.5])
        a, sa = jsd_monte_carlo(p, q, 20_000, seed=3)
        b, sb = jsd_monte_carlo(q, p, 20_000, seed=4)
        assert abs(a - b) <= 2 * (sa + sb)

    def test_deterministic(self):
        p = gmm_1d([0.0], [1.0], [1.0])
        q = gmm_1d([-3.0, 3.0], [1.0, 1.0], [0.5, 0.5])
        assert clustering_fit_jsd(p, q, 5000, seed=5) == clustering_fit_jsd(
            p, q, 5000, seed=5
        )

    def test_range_clamped(self):
        p = gmm_1d([0.0], [1.0], [1.0])
        q = gmm_1d([-50.0, 50.0], [0.01, 0.01], [0.5, 0.5])
        est = clustering_fit_jsd(p, q, 2000, seed=6)
        assert 0.0 <= est <= 1.0

    def test_dimension_mismatch(self):
        p = gmm_1d([0.0], [1.0], [1.0])
        q = GmmModel(np.zeros((2, 2)), np.stack([np.eye(2)] * 2), np.array([0.5, 0.5]))
        with pytest.raises(ConfidenceError):
            clustering_fit_jsd(p, q, 100, seed=0)

    def test_bad_sample_count(self):
        p = gmm_1d([0.0], [1.0], [1.0])
        with pytest.raises(ConfidenceError):
            clustering_fit_jsd(p, p, 0, seed=0)


class TestPosteriorConfidence:
    @pytest.mark.parametrize("gmax,expected", [(1.0, 1.0), (0.5, 0.0), (0.75, 0.5)])
    def test_two_component_values(self, gmax, expected):
        posts = np.array([[gmax, 1.0 - gmax]])
        assert posterior_confidence(posts)[0] == pytest.approx(expected)

    def test_equals_abs_difference_for_two(self):
        rng = np.random.default_rng(0)
        g = rng.uniform(0, 1, size=50)
        posts = np.stack([g, 1 - g], axis=1)
        np.testing.assert_allclose(posterior_confidence(posts), np.abs(g - (1 - g)))

    def test_three_component_clamped(self):
        posts = np.array([[0.34, 0.33, 0.33]])
        c = posterior_confidence(posts)
        assert 0.0 <= c[0] <= 1.0


class TestCombine:
    def test_alpha_zero_all_ones(self):
        cmap = combine(0.0, 0.0, np.zeros((3, 4)), alpha=0.0)
        np.testing.assert_array_equal(cmap.combined, 1.0)
        assert cmap.mean_confidence == pytest.approx(1.0)

    def test_product_alpha_one(self):
        cmap = combine(0.5, 0.8, np.full((2, 2), 0.5), alpha=1.0)
        np.testing.assert_allclose(cmap.combined, 0.2)

    def test_alpha_two_squares(self):
        cmap = combine(0.5, 0.8, np.full((2, 2), 0.5), alpha=2.0)
        np.testing.assert_allclose(cmap.combined, 0.04)

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(1)
        c_post = rng.uniform(0, 1, size=(6, 7))
        maps = [combine(0.9, 0.7, c_post, a).combined for a in (0.0, 0.5, 1.0, 2.0)]
        for lo, hi in zip(maps[1:], maps[:-1]):
            assert np.all(lo <= hi + 1e-12)

    def test_mean_over_active_bins_only(self):
        c_post = np.array([[1.0, 0.0], [0.0, 0.0]])
        mask = np.array([[True, False], [False, False]])
        cmap = combine(1.0, 1.0, c_post, 1.0, active_mask=mask)
        assert cmap.mean_confidence == pytest.approx(1.0)

    def test_negative_alpha_rejected(self):
        with pytest.raises(ConfidenceError):
            combine(0.5, 0.5, np.ones((2, 2)), alpha=-1.0)

    def test_all_fields_in_unit_interval(self):
        rng = np.random.default_rng(2)
        cmap = combine(0.6, 0.4, rng.uniform(0, 1, (5, 5)), alpha=0.5)
        assert np.all((cmap.combined >= 0) & (cmap.combined <= 1))
