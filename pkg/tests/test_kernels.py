import math

import numpy as np
import pytest

import oracles
from analogcast import (
    Dataset,
    KernelSpec,
    build_matrix,
    cross_matrix,
    embed,
    gaussian,
    join,
    median_pairwise_distance,
    median_pairwise_sq_distance,
    multiscale_family,
    nlsa,
    nlsa_multivariate,
    row_normalize,
    with_phase_velocities,
)
from analogcast.kernels import load_kernel_matrix, save_kernel_matrix


def embedded(values, name="x", q=3):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    ds = Dataset(values, np.arange(len(values), dtype=np.int64), 1, name)
    return with_phase_velocities(embed(ds, q))


@pytest.fixture(scope="module")
def small_embedded():
    return embedded(np.random.default_rng(0).normal(size=(55, 2)))


class TestScalarKernels:
    def test_gaussian_identical_points(self):
        x = np.array([1.0, -2.0])
        assert gaussian(x, x, 3.0) == 1.0

    def test_gaussian_unit_exponent(self):
        x = np.zeros(1)
        y = np.array([math.sqrt(0.7)])
        assert abs(gaussian(x, y, 0.7) - math.exp(-1)) < 1e-15

    def test_gaussian_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=4), rng.normal(size=4)
        reference = math.exp(-float(np.sum((x - y) ** 2)) / 1.7)
        oracles.record("gaussian_direct", [reference], [gaussian(x, y, 1.7)], 1e-15)

    def test_nlsa_is_gaussian_with_scaled_bandwidth(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=3), rng.normal(size=3)
        assert nlsa(x, y, 0.3, 0.6, 2.0) == pytest.approx(gaussian(x, y, 2.0 * 0.3 * 0.6), abs=1e-15)

    def test_nlsa_identical_points(self):
        x = np.ones(3)
        assert nlsa(x, x, 0.5, 0.5, 2.0) == 1.0

    def test_nlsa_scale_invariance(self):
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=3), rng.normal(size=3)
        xi, xj = 0.4, 0.9
        c = 37.5
        base = nlsa(x, y, xi, xj, 2.0)
        scaled = nlsa(c * x, c * y, c * xi, c * xj, 2.0)
        assert abs(base - scaled) < 1e-12

    def test_multivariate_single_component_reduces(self):
        rng = np.random.default_rng(4)
        x, y = rng.normal(size=3), rng.normal(size=3)
        assert nlsa_multivariate([x], [y], [0.5], [0.7], 2.0) == nlsa(x, y, 0.5, 0.7, 2.0)

    def test_multivariate_identical_samples(self):
        x = [np.ones(2), np.zeros(3)]
        assert nlsa_multivariate(x, x, [0.5, 0.3], [0.5, 0.3], 2.0) == 1.0

    def test_multivariate_component_mismatch(self):
        with pytest.raises(ValueError, match="component count"):
            nlsa_multivariate([np.ones(2)], [np.ones(2), np.ones(2)], [1.0], [1.0, 1.0], 2.0)


class TestBuildMatrix:
    def test_two_identical_samples(self):
        emb = embedded(np.array([[1.0, 1.0, 1.0, 1.0]]).T, q=1)
        K = build_matrix(emb, KernelSpec("nlsa", epsilon=2.0))
        assert np.allclose(K.values, 1.0)

    def test_max_entries_on_diagonal(self, small_embedded):
        K = build_matrix(small_embedded, KernelSpec("nlsa", epsilon=2.0))
        assert np.allclose(np.diag(K.values), 1.0)
        assert np.all(K.values <= 1.0)
        assert np.all(K.values > 0.0)

    def test_exact_symmetry(self, small_embedded):
        K = build_matrix(small_embedded, KernelSpec("nlsa", epsilon=2.0))
        assert np.max(np.abs(K.values - K.values.T)) == 0.0

    def test_matches_double_loop_oracle(self, small_embedded):
        K = build_matrix(small_embedded, KernelSpec("nlsa", epsilon=2.0))
        reference = oracles.oracle_pairwise_kernel(small_embedded, small_embedded, "nlsa", epsilon=2.0)
        oracles.record("kernel_matrix_nlsa", reference, K.values, 1e-10)

    def test_gaussian_matches_double_loop_oracle(self, small_embedded):
        sigma0 = median_pairwise_sq_distance(small_embedded)
        K = build_matrix(small_embedded, KernelSpec("gaussian", sigma0=sigma0))
        reference = oracles.oracle_pairwise_kernel(
            small_embedded, small_embedded, "gaussian", sigma0=sigma0
        )
        oracles.record("kernel_matrix_gaussian", reference, K.values, 1e-10)

    def test_epsilon_monotonicity(self, small_embedded):
        k1 = build_matrix(small_embedded, KernelSpec("nlsa", epsilon=1.0)).values
        k2 = build_matrix(small_embedded, KernelSpec("nlsa", epsilon=2.5)).values
        off = ~np.eye(len(k1), dtype=bool)
        assert np.all(k2[off] > k1[off])


class TestRowNormalize:
    def test_uniform_row(self):
        out = row_normalize(np.ones((4, 4)))
        assert np.allclose(out, 0.25)

    def test_single_entry(self):
        assert row_normalize(np.array([[7.0]])) == np.array([[1.0]])

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        out = row_normalize(rng.uniform(0.1, 1.0, size=(30, 30)))
        oracles.record("row_sums", np.ones(30), out.sum(axis=1), 1e-12)

    def test_zero_row_rejected(self):
        m = np.ones((3, 3))
        m[1] = 0.0
        with pytest.raises(ValueError, match="row 1"):
            row_normalize(m)


class TestMultiscale:
    def test_zero_levels(self):
        spec = KernelSpec("gaussian", sigma0=8.0)
        family = multiscale_family(spec, 0)
        assert family == [spec]

    def test_dyadic_scales(self):
        family = multiscale_family(KernelSpec("gaussian", sigma0=8.0), 3)
        assert [s.sigma0 for s in family] == [8.0, 4.0, 2.0, 1.0]

    def test_nlsa_epsilon_halved(self):
        family = multiscale_family(KernelSpec("nlsa", epsilon=2.0), 2)
        assert [s.epsilon for s in family] == [2.0, 1.0, 0.5]

    def test_level_matches_direct_gaussian(self, small_embedded):
        family = multiscale_family(KernelSpec("gaussian", sigma0=4.0), 2)
        direct = build_matrix(small_embedded, KernelSpec("gaussian", sigma0=1.0)).values
        level = build_matrix(small_embedded, family[2]).values
        assert np.array_equal(level, direct)


class TestCrossMatrix:
    def test_self_cross_equals_build(self, small_embedded):
        K = build_matrix(small_embedded, KernelSpec("nlsa", epsilon=2.0))
        C = cross_matrix(small_embedded, small_embedded, KernelSpec("nlsa", epsilon=2.0))
        assert np.array_equal(C, K.values)

    def test_coincident_test_point_maximizes_its_column(self, small_embedded):
        test = small_embedded.take(np.array([13]))
        row = cross_matrix(test, small_embedded, KernelSpec("nlsa", epsilon=2.0))[0]
        assert np.argmax(row) == 13

    def test_matches_double_loop_oracle(self, small_embedded):
        test = embedded(np.random.default_rng(6).normal(size=(20, 2)))
        C = cross_matrix(test, small_embedded, KernelSpec("nlsa", epsilon=2.0))
        reference = oracles.oracle_pairwise_kernel(test, small_embedded, "nlsa", epsilon=2.0)
        oracles.record("cross_matrix_nlsa", reference, C, 1e-10)

    def test_structure_mismatch_rejected(self, small_embedded):
        other = embedded(np.random.default_rng(7).normal(size=(20, 2)), name="other")
        with pytest.raises(ValueError, match="structure"):
            cross_matrix(other, small_embedded, KernelSpec("nlsa", epsilon=2.0))


class TestUnitInvariance:
    def multivariate_pair(self, scale=1.0):
        rng = np.random.default_rng(8)
        raw_a = rng.normal(size=(60, 2))
        raw_b = rng.normal(size=(60, 3))
        a = Dataset(raw_a, np.arange(60), 1, "a")
        b = Dataset(raw_b * scale, np.arange(60), 1, "b")
        return join([with_phase_velocities(embed(a, 4)), with_phase_velocities(embed(b, 4))])

    def test_rescaling_one_component_changes_nothing(self):
        spec = KernelSpec("nlsa-multivariate", epsilon=2.0)
        K1 = build_matrix(self.multivariate_pair(1.0), spec).values
        K2 = build_matrix(self.multivariate_pair(100.0), spec).values
        assert np.max(np.abs(K1 - K2)) < 1e-12

    def test_multivariate_matches_scalar_products(self):
        emb = self.multivariate_pair()
        spec = KernelSpec("nlsa-multivariate", epsilon=2.0)
        K = build_matrix(emb, spec).values
        reference = oracles.oracle_pairwise_kernel(emb, emb, "nlsa-multivariate", epsilon=2.0)
        oracles.record("kernel_matrix_multivariate", reference, K, 1e-10)


class TestSpecValidation:
    def test_gaussian_needs_sigma0(self):
        with pytest.raises(ValueError, match="sigma0"):
            KernelSpec("gaussian")

    def test_nlsa_needs_epsilon(self):
        with pytest.raises(ValueError, match="epsilon"):
            KernelSpec("nlsa")

    def test_alpha_domain(self):
        with pytest.raises(ValueError, match="alpha"):
            KernelSpec("nlsa", epsilon=2.0, alpha=0.3)

    def test_median_policies_consistent(self, small_embedded):
        # with an even pair count both medians interpolate, so the squared
        # relationship holds only approximately
        med_sq = median_pairwise_sq_distance(small_embedded)
        med = median_pairwise_distance(small_embedded)
        assert med_sq == pytest.approx(med**2, rel=1e-6)


class TestCacheFile:
    def test_round_trip(self, tmp_path, small_embedded):
        spec = KernelSpec("nlsa", epsilon=2.0)
        K = build_matrix(small_embedded, spec)
        save_kernel_matrix(K, tmp_path / "k.kmat")
        back = load_kernel_matrix(tmp_path / "k.kmat", spec, small_embedded.timestamps)
        assert np.array_equal(back.values, K.values)

    def test_stale_cache_rejected(self, tmp_path, small_embedded):
        spec = KernelSpec("nlsa", epsilon=2.0)
        K = build_matrix(small_embedded, spec)
        save_kernel_matrix(K, tmp_path / "k.kmat")
        with pytest.raises(ValueError, match="hash"):
            load_kernel_matrix(tmp_path / "k.kmat", KernelSpec("nlsa", epsilon=3.0), K.timestamps)
