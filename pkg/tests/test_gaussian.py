import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from idlink.gaussian import (
    GaussianEmbedding,
    VARIANCE_FLOOR,
    kl_divergence,
    kl_divergence_t,
    pairwise_kl,
    pairwise_sq_euclidean,
    pairwise_w2_squared,
    reparameterized_sample,
    reparameterized_sample_t,
    w2_squared,
    w2_squared_t,
)


def full_matrix_w2_squared(mu1, cov1, mu2, cov2):
    """General-covariance squared 2-Wasserstein via eigendecomposition square
    roots; independent oracle for the diagonal closed form."""

    def sqrtm(mat):
        vals, vecs = np.linalg.eigh(mat)
        return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T

    s1h = sqrtm(cov1)
    cross = sqrtm(s1h @ cov2 @ s1h)
    mean_term = float(np.sum((mu1 - mu2) ** 2))
    return mean_term + float(np.trace(cov1 + cov2 - 2.0 * cross))


def random_gaussian(rng, dim):
    return GaussianEmbedding(mean=rng.normal(size=dim), var=rng.uniform(0.1, 3.0, size=dim))


class TestW2Squared:
    def test_identical_is_zero(self):
        g = GaussianEmbedding(mean=np.array([1.0, -2.0]), var=np.array([0.5, 2.0]))
        assert w2_squared(g, g) == 0.0

    def test_equal_variances_reduce_to_mean_distance(self):
        g1 = GaussianEmbedding(mean=np.array([0.0, 0.0]), var=np.array([1.0, 1.0]))
        g2 = GaussianEmbedding(mean=np.array([3.0, 4.0]), var=np.array([1.0, 1.0]))
        assert w2_squared(g1, g2) == pytest.approx(25.0)

    def test_equal_means_variance_term(self):
        g1 = GaussianEmbedding(mean=np.zeros(2), var=np.array([1.0, 1.0]))
        g2 = GaussianEmbedding(mean=np.zeros(2), var=np.array([4.0, 4.0]))
        # oracle agrees: (sqrt(1)-sqrt(4))^2 per dimension
        oracle = full_matrix_w2_squared(g1.mean, np.diag(g1.var), g2.mean, np.diag(g2.var))
        assert w2_squared(g1, g2) == pytest.approx(2.0)
        assert w2_squared(g1, g2) == pytest.approx(oracle, abs=1e-10)

    @pytest.mark.parametrize("dim", [1, 2, 3, 5, 8])
    def test_matches_full_matrix_oracle(self, dim):
        rng = np.random.default_rng(dim)
        for _ in range(20):
            g1, g2 = random_gaussian(rng, dim), random_gaussian(rng, dim)
            oracle = full_matrix_w2_squared(g1.mean, np.diag(g1.var), g2.mean, np.diag(g2.var))
            assert w2_squared(g1, g2) == pytest.approx(oracle, abs=1e-8)

    def test_metric_properties_on_random_triples(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a, b, c = (random_gaussian(rng, 4) for _ in range(3))
            dab, dba = w2_squared(a, b), w2_squared(b, a)
            assert dab == pytest.approx(dba, abs=1e-9)
            assert dab > 0.0
            # triangle inequality holds for the (non-squared) distance
            ab, bc, ac = np.sqrt(dab), np.sqrt(w2_squared(b, c)), np.sqrt(w2_squared(a, c))
            assert ac <= ab + bc + 1e-9

    def test_dimension_mismatch(self):
        g1 = GaussianEmbedding(mean=np.zeros(2), var=np.ones(2))
        g2 = GaussianEmbedding(mean=np.zeros(3), var=np.ones(3))
        with pytest.raises(ValueError):
            w2_squared(g1, g2)

    def test_nonpositive_variance_rejected(self):
        with pytest.raises(ValueError):
            GaussianEmbedding(mean=np.zeros(2), var=np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            GaussianEmbedding(mean=np.zeros(2), var=np.array([1.0, -1.0]))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            GaussianEmbedding(mean=np.array([np.nan, 0.0]), var=np.ones(2))


class TestKLDivergence:
    def test_identical_is_zero(self):
        g = GaussianEmbedding(mean=np.array([0.3, -1.0]), var=np.array([0.5, 1.5]))
        assert kl_divergence(g, g) == pytest.approx(0.0, abs=1e-12)

    def test_unit_shift_hand_value(self):
        g1 = GaussianEmbedding(mean=np.array([0.0]), var=np.array([1.0]))
        g2 = GaussianEmbedding(mean=np.array([1.0]), var=np.array([1.0]))
        assert kl_divergence(g1, g2) == pytest.approx(0.5)

    def test_asymmetry(self):
        g1 = GaussianEmbedding(mean=np.array([0.0]), var=np.array([1.0]))
        g2 = GaussianEmbedding(mean=np.array([0.0]), var=np.array([4.0]))
        # hand evaluation: KL(g1||g2) = (1/4 - 1 + ln 4)/2, KL(g2||g1) = (4 - 1 - ln 4)/2
        assert kl_divergence(g1, g2) == pytest.approx((0.25 - 1 + np.log(4)) / 2)
        assert kl_divergence(g2, g1) == pytest.approx((4 - 1 - np.log(4)) / 2)
        assert kl_divergence(g1, g2) != pytest.approx(kl_divergence(g2, g1))

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_nonnegative_and_zero_iff_equal(self, seed):
        rng = np.random.default_rng(seed)
        g1, g2 = random_gaussian(rng, 3), random_gaussian(rng, 3)
        kl = kl_divergence(g1, g2)
        assert kl >= 0.0
        if kl < 1e-9:
            np.testing.assert_allclose(g1.mean, g2.mean, atol=1e-4)
            np.testing.assert_allclose(g1.var, g2.var, atol=1e-4)


class TestReparameterizedSample:
    def test_zero_noise_returns_mean(self):
        g = GaussianEmbedding(mean=np.array([1.0, 2.0]), var=np.array([0.3, 0.7]))
        np.testing.assert_array_equal(reparameterized_sample(g, np.zeros(2)), g.mean)

    def test_vanishing_variance_returns_mean(self):
        g = GaussianEmbedding(mean=np.array([1.0, -1.0]), var=np.full(2, 1e-30))
        sample = reparameterized_sample(g, np.array([5.0, -7.0]))
        np.testing.assert_allclose(sample, g.mean, atol=1e-10)

    def test_dimension_mismatch(self):
        g = GaussianEmbedding(mean=np.zeros(2), var=np.ones(2))
        with pytest.raises(ValueError):
            reparameterized_sample(g, np.zeros(3))

    def test_monte_carlo_moments(self):
        rng = np.random.default_rng(123)
        g = GaussianEmbedding(mean=np.array([1.5, -0.5, 2.0]), var=np.array([0.64, 2.25, 0.09]))
        n = 10_000
        samples = np.stack([reparameterized_sample(g, rng.standard_normal(3)) for _ in range(n)])
        stderr = np.sqrt(g.var / n)
        assert np.all(np.abs(samples.mean(axis=0) - g.mean) < 3 * stderr)
        assert np.all(np.abs(samples.var(axis=0) - g.var) / g.var < 0.10)


class TestTorchTwins:
    def test_match_numpy_implementations(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            g1, g2 = random_gaussian(rng, 5), random_gaussian(rng, 5)
            args = tuple(torch.as_tensor(x) for x in (g1.mean, g1.var, g2.mean, g2.var))
            assert float(w2_squared_t(*args)) == pytest.approx(w2_squared(g1, g2), abs=1e-12)
            assert float(kl_divergence_t(*args)) == pytest.approx(kl_divergence(g1, g2), abs=1e-12)
            eps = rng.standard_normal(5)
            got = reparameterized_sample_t(args[0], args[1], torch.as_tensor(eps)).numpy()
            np.testing.assert_allclose(got, reparameterized_sample(g1, eps), atol=1e-12)

    @pytest.mark.parametrize("fn", [w2_squared_t, kl_divergence_t])
    def test_distance_gradients_match_finite_differences(self, fn):
        rng = np.random.default_rng(5)
        mu1 = torch.tensor(rng.normal(size=4), requires_grad=True)
        var1 = torch.tensor(rng.uniform(0.2, 2.0, size=4), requires_grad=True)
        mu2 = torch.tensor(rng.normal(size=4), requires_grad=True)
        var2 = torch.tensor(rng.uniform(0.2, 2.0, size=4), requires_grad=True)
        out = fn(mu1, var1, mu2, var2)
        out.backward()
        step = 1e-5
        for tensor in (mu1, var1, mu2, var2):
            for i in range(4):
                with torch.no_grad():
                    tensor[i] += step
                    up = float(fn(mu1, var1, mu2, var2))
                    tensor[i] -= 2 * step
                    down = float(fn(mu1, var1, mu2, var2))
                    tensor[i] += step
                fd = (up - down) / (2 * step)
                an = float(tensor.grad[i])
                assert abs(an - fd) <= 1e-4 * max(abs(an), abs(fd), 1e-8)

    def test_sample_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        mu = torch.tensor(rng.normal(size=3), requires_grad=True)
        var = torch.tensor(rng.uniform(0.2, 2.0, size=3), requires_grad=True)
        eps = torch.tensor(rng.standard_normal(3))
        weights = torch.tensor(rng.normal(size=3))
        (reparameterized_sample_t(mu, var, eps) * weights).sum().backward()
        step = 1e-5
        for tensor in (mu, var):
            for i in range(3):
                with torch.no_grad():
                    tensor[i] += step
                    up = float((reparameterized_sample_t(mu, var, eps) * weights).sum())
                    tensor[i] -= 2 * step
                    down = float((reparameterized_sample_t(mu, var, eps) * weights).sum())
                    tensor[i] += step
                fd = (up - down) / (2 * step)
                an = float(tensor.grad[i])
                assert abs(an - fd) <= 1e-4 * max(abs(an), abs(fd), 1e-8)


class TestPairwise:
    def test_pairwise_matches_single(self):
        rng = np.random.default_rng(3)
        mu1, var1 = rng.normal(size=(4, 3)), rng.uniform(0.2, 2.0, size=(4, 3))
        mu2, var2 = rng.normal(size=(5, 3)), rng.uniform(0.2, 2.0, size=(5, 3))
        w2 = pairwise_w2_squared(mu1, var1, mu2, var2)
        kl = pairwise_kl(mu1, var1, mu2, var2)
        l2 = pairwise_sq_euclidean(mu1, mu2)
        for i in range(4):
            for j in range(5):
                g1 = GaussianEmbedding(mean=mu1[i], var=var1[i])
                g2 = GaussianEmbedding(mean=mu2[j], var=var2[j])
                assert w2[i, j] == pytest.approx(w2_squared(g1, g2), abs=1e-10)
                assert kl[i, j] == pytest.approx(kl_divergence(g1, g2), abs=1e-10)
                assert l2[i, j] == pytest.approx(float(((mu1[i] - mu2[j]) ** 2).sum()), abs=1e-10)

    def test_variance_floor_applied(self):
        g1 = GaussianEmbedding(mean=np.zeros(1), var=np.array([1e-12]))
        g2 = GaussianEmbedding(mean=np.zeros(1), var=np.array([1e-12]))
        # floored variances keep the divergence finite and zero for equal inputs
        assert np.isfinite(kl_divergence(g1, g2))
        assert w2_squared(g1, g2) == pytest.approx(0.0)
        floored = GaussianEmbedding(mean=np.zeros(1), var=np.array([VARIANCE_FLOOR]))
        assert w2_squared(g1, floored) == pytest.approx(0.0, abs=1e-12)
