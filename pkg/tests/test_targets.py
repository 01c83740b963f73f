import numpy as np
import pytest
from scipy.stats import multivariate_normal

from bdsampler.targets import (GaussianMixture, LogisticPosterior,
                               gmm_benchmark_target, load_dataset,
                               mixture_moment, torus_bimodal_target,
                               train_test_split)


class TestGaussianMixture:
    def test_standard_normal_log_density(self):
        gm = GaussianMixture.standard_normal(1)
        assert gm.log_density_unnorm(np.zeros(1)) == pytest.approx(
            -0.5 * np.log(2.0 * np.pi), abs=1e-14)

    def test_single_component_matches_scipy(self, rng):
        mean = np.array([0.4, -1.2])
        cov = np.array([[1.3, 0.2], [0.2, 0.7]])
        gm = GaussianMixture([1.0], [mean], [cov])
        pts = rng.standard_normal((20, 2))
        np.testing.assert_allclose(
            gm.log_density_unnorm(pts),
            multivariate_normal(mean, cov).logpdf(pts), rtol=1e-12)

    def test_component_permutation_invariance(self, rng):
        gm = gmm_benchmark_target()
        perm = [2, 0, 3, 1]
        gm2 = GaussianMixture(gm.weights[perm], gm.means[perm],
                              gm.covariances[perm])
        pts = rng.standard_normal((30, 2)) * 3.0
        np.testing.assert_allclose(gm.log_density_unnorm(pts),
                                   gm2.log_density_unnorm(pts), rtol=1e-13)

    def test_gradient_zero_at_component_mode(self):
        gm = GaussianMixture([1.0], [[1.0, -2.0]], [np.diag([0.5, 2.0])])
        np.testing.assert_allclose(gm.grad_log_density(np.array([1.0, -2.0])),
                                   np.zeros(2), atol=1e-14)

    def test_gradient_matches_finite_differences(self, rng):
        gm = gmm_benchmark_target()
        pts = rng.uniform(-4.0, 9.0, size=(100, 2))
        grad = gm.grad_log_density(pts)
        step = 1e-5
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = step
            fd = (gm.log_density_unnorm(pts + e)
                  - gm.log_density_unnorm(pts - e)) / (2.0 * step)
            np.testing.assert_allclose(grad[:, axis], fd, rtol=1e-5, atol=1e-7)

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            GaussianMixture([0.6, 0.6], [[0.0], [1.0]], [[1.0], [1.0]])

    def test_non_finite_input_rejected(self):
        gm = GaussianMixture.standard_normal(2)
        with pytest.raises(ValueError):
            gm.log_density_unnorm(np.array([np.nan, 0.0]))


class TestMixtureMoment:
    def test_benchmark_value(self, benchmark_mixture):
        # Recomputed by hand from the component table:
        # sum_i w_i * (c1 (m_i1^2 + S_i11) + c2 (m_i2^2 + S_i22)).
        expected = (0.5 * (0.8 / 3.0 + 4.01 / 5.0)
                    + 0.1 * (9.01 / 3.0 + 26.0 / 5.0)
                    + 0.1 * (0.8 / 3.0 + 64.01 / 5.0)
                    + 0.3 * (9.01 / 3.0 + 26.0 / 5.0))
        got = mixture_moment(benchmark_mixture, [1.0 / 3.0, 1.0 / 5.0])
        assert got == pytest.approx(expected, rel=1e-14)
        assert got == pytest.approx(5.122533333333333, rel=1e-12)

    @pytest.mark.parametrize("d", [1, 2, 4])
    def test_standard_normal_trace(self, d):
        gm = GaussianMixture.standard_normal(d)
        assert mixture_moment(gm, np.ones(d)) == pytest.approx(d, rel=1e-14)

    def test_zero_coefficients(self, benchmark_mixture):
        assert mixture_moment(benchmark_mixture, [0.0, 0.0]) == 0.0


class TestMixtureSampling:
    def test_seed_determinism(self, benchmark_mixture):
        a = benchmark_mixture.sample(50, np.random.default_rng(9))
        b = benchmark_mixture.sample(50, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_clt_mean_bound(self):
        gm = GaussianMixture.standard_normal(1)
        n = 100_000
        x = gm.sample(n, np.random.default_rng(7))
        assert abs(x.mean()) <= 4.0 / np.sqrt(n)

    def test_degenerate_covariance_concentrates(self):
        gm = GaussianMixture([0.5, 0.5], [[-5.0], [5.0]],
                             [[1e-10], [1e-10]])
        x = gm.sample(200, np.random.default_rng(3))
        assert np.all(np.minimum(np.abs(x - 5.0), np.abs(x + 5.0)) < 1e-3)


class TestTorusTarget:
    def test_potential_at_zero(self):
        target = torus_bimodal_target(256)
        assert target.log_density_unnorm(np.array([0.0])) == pytest.approx(0.0)

    def test_density_integrates_to_one(self):
        target = torus_bimodal_target(512)
        assert target.density.mass() == pytest.approx(1.0, abs=1e-10)

    def test_gradient_matches_finite_differences(self, rng):
        target = torus_bimodal_target(128)
        x = rng.uniform(0.0, 2.0 * np.pi, size=50)
        g = target.grad_log_density(x)
        step = 1e-6
        fd = (target.log_density_unnorm(x + step)
              - target.log_density_unnorm(x - step)) / (2.0 * step)
        np.testing.assert_allclose(g, fd, rtol=1e-7, atol=1e-7)

    def test_column_shaped_input(self):
        target = torus_bimodal_target(128)
        x = np.array([[0.3], [1.4]])
        assert target.log_density_unnorm(x).shape == (2,)
        assert target.grad_log_density(x).shape == (2, 1)


class TestLogisticPosterior:
    def _synthetic(self, rng, n=10, d=3):
        x = rng.standard_normal((n, d))
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        return LogisticPosterior(x, y)

    def test_gradient_matches_finite_differences(self, rng):
        post = self._synthetic(rng)
        z = np.zeros(post.dim)  # w = 0, log alpha = 0
        grad = post.grad_log_density(z)
        step = 1e-5
        for axis in range(post.dim):
            e = np.zeros(post.dim)
            e[axis] = step
            fd = (post.log_density_unnorm(z + e)
                  - post.log_density_unnorm(z - e)) / (2.0 * step)
            assert grad[axis] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_gradient_batched_matches_single(self, rng):
        post = self._synthetic(rng)
        states = rng.standard_normal((6, post.dim)) * 0.3
        batch = post.grad_log_density(states)
        for i, z in enumerate(states):
            np.testing.assert_allclose(batch[i], post.grad_log_density(z),
                                       rtol=1e-12)

    def test_label_flip_symmetry(self, rng):
        # Flipping labels mirrors the posterior in w, and the prediction rule
        # maps accuracy onto itself under (labels, w) -> (-labels, -w).
        x = rng.standard_normal((30, 2))
        y = np.where(x @ [1.0, -0.5] > 0, 1.0, -1.0)
        post = LogisticPosterior(x, y)
        flipped = LogisticPosterior(x, -y)
        states = rng.standard_normal((8, post.dim))
        mirrored = states.copy()
        mirrored[:, :-1] *= -1.0
        np.testing.assert_allclose(post.log_density_unnorm(states),
                                   flipped.log_density_unnorm(mirrored),
                                   rtol=1e-12)
        assert post.accuracy(states, x, y) == flipped.accuracy(mirrored, x, -y)

    def test_prior_sampling_shapes(self, rng):
        post = self._synthetic(rng)
        z = post.sample_prior(5, np.random.default_rng(0))
        assert z.shape == (5, post.dim)
        assert np.all(np.isfinite(z))


class TestLoadDataset:
    def test_csv_roundtrip(self, tmp_path):
        p = tmp_path / "tiny.csv"
        p.write_text("1,2,+1\n3,4,-1\n5,6,+1\n")
        x, y = load_dataset(p)
        np.testing.assert_array_equal(x, [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(y, [1.0, -1.0, 1.0])

    def test_libsvm_sparse_row(self, tmp_path):
        p = tmp_path / "tiny.svm"
        p.write_text("-1 1:0.5 3:2.0\n")
        x, y = load_dataset(p, fmt="libsvm", n_features=3)
        np.testing.assert_array_equal(x, [[0.5, 0.0, 2.0]])
        np.testing.assert_array_equal(y, [-1.0])

    def test_empty_file_is_error(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        with pytest.raises(ValueError, match="no data rows"):
            load_dataset(p)

    def test_bad_rows_reported_with_line_numbers(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2,1\nx,4,-1\n5,y,1\n")
        with pytest.raises(ValueError, match=r"\[2, 3\]"):
            load_dataset(p)

    def test_zero_one_labels_remapped(self, tmp_path):
        p = tmp_path / "01.csv"
        p.write_text("1,2,0\n3,4,1\n")
        _, y = load_dataset(p)
        np.testing.assert_array_equal(y, [-1.0, 1.0])

    def test_out_of_range_labels_rejected(self, tmp_path):
        p = tmp_path / "bad_labels.csv"
        p.write_text("1,2,3\n")
        with pytest.raises(ValueError, match="labels outside"):
            load_dataset(p)

    def test_standardization(self, tmp_path):
        p = tmp_path / "std.csv"
        p.write_text("1,10,1\n3,30,-1\n5,50,1\n")
        x, _ = load_dataset(p, standardize=True)
        np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=1e-14)
        np.testing.assert_allclose(x.std(axis=0), 1.0, rtol=1e-14)

    def test_split_is_seed_deterministic(self, rng):
        x = rng.standard_normal((50, 2))
        y = np.where(rng.random(50) < 0.5, 1.0, -1.0)
        a = train_test_split(x, y, test_fraction=0.2, seed=5)
        b = train_test_split(x, y, test_fraction=0.2, seed=5)
        for u, v in zip(a, b):
            assert np.array_equal(u, v)
        c = train_test_split(x, y, test_fraction=0.2, seed=6)
        assert not np.array_equal(a[0], c[0])
        assert a[3].shape[0] == 10
