import numpy as np
import pytest
from scipy import stats

from fbmcontrol import (
    ConfigError,
    NumericalError,
    FbmSampler,
    RngStream,
    SampledFunction,
    TimeGrid,
    empirical_covariance,
    isometry_norm,
    sample_fbm_cholesky,
    sample_fbm_volterra,
    wiener_integral_scalar,
)
from fbmcontrol.fbm_sampler import _factor_covariance, draw_noise, path_from_noise, refine_path

SEED = 20261015
M = 20000


def mean_se(x):
    """Mean of the samples and its standard error."""
    return float(np.mean(x)), float(np.std(x, ddof=1) / np.sqrt(len(x)))


class TestRngStream:
    def test_reproducible(self):
        a = RngStream(5, (1, 2)).normal(10)
        b = RngStream(5, (1, 2)).normal(10)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        base = RngStream(5)
        assert not np.array_equal(base.child(0).normal(10), base.child(1).normal(10))
        assert not np.array_equal(RngStream(5).normal(10), RngStream(6).normal(10))

    def test_independent_streams_uncorrelated(self):
        x = RngStream(1, 0).normal(M)
        y = RngStream(1, 1).normal(M)
        assert abs(np.corrcoef(x, y)[0, 1]) < 3 / np.sqrt(M)

    @pytest.mark.parametrize("seed", [-1, 1.5, True])
    def test_bad_seed(self, seed):
        with pytest.raises(ConfigError):
            RngStream(seed)


class TestPaths:
    @pytest.mark.parametrize("sampler", [sample_fbm_volterra, sample_fbm_cholesky])
    def test_shape_and_origin(self, sampler):
        grid = TimeGrid(2.0, 17)
        path = sampler(0.3, grid, RngStream(SEED, 4))
        assert path.values.shape == (18,)
        assert path.values[0] == 0.0
        assert path.seed == SEED

    def test_volterra_records_increments(self):
        path = sample_fbm_volterra(0.25, TimeGrid(1.0, 16), RngStream(SEED))
        assert path.driving_increments.shape == (16,)
        assert path.noise.shape[0] == 16

    @pytest.mark.parametrize("sampler", [sample_fbm_volterra, sample_fbm_cholesky])
    def test_deterministic(self, sampler):
        grid = TimeGrid(1.0, 32)
        a = sampler(0.1, grid, RngStream(SEED, 9))
        b = sampler(0.1, grid, RngStream(SEED, 9))
        assert np.array_equal(a.values, b.values)

    def test_sampler_batch_matches_single(self):
        sampler = FbmSampler(0.25, 1.0, 8).fit()
        batch = sampler.sample(3, SEED, 2)
        single = sample_fbm_volterra(0.25, TimeGrid(1.0, 8), RngStream(SEED, 2).child(1))
        np.testing.assert_allclose(batch[1], single.values, rtol=1e-12, atol=1e-14)

    def test_grid_must_start_at_zero(self):
        with pytest.raises(ConfigError):
            sample_fbm_volterra(0.25, TimeGrid(1.0, 4, start=-1.0), RngStream(0))

    def test_cholesky_has_no_brownian_path(self):
        path = sample_fbm_cholesky(0.25, TimeGrid(1.0, 8), RngStream(0))
        assert path.driving_increments is None
        with pytest.raises(ConfigError, match="Volterra"):
            path.cell_means
        with pytest.raises(ConfigError, match="sample_fbm_volterra"):
            wiener_integral_scalar(0.25, SampledFunction(path.grid, np.ones(9)), path)

    def test_jitter_failure_names_minor(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NumericalError, match="order 2"):
            _factor_covariance(bad)


class TestDistribution:
    @pytest.mark.parametrize("method", ["volterra", "cholesky"])
    @pytest.mark.parametrize("h", [0.1, 0.4])
    def test_single_step_variance(self, method, h):
        x = FbmSampler(h, 0.7, 1, method).fit().sample(M, SEED, 11)[:, 1]
        m, se = mean_se(x**2)
        assert abs(m - 0.7 ** (2 * h)) < 3 * se

    def test_terminal_variance(self):
        x = FbmSampler(0.25, 1.0, 32).fit().sample(M, SEED, 12)[:, -1]
        m, se = mean_se(x**2)
        assert abs(m - 1.0) < 3 * se

    @pytest.mark.parametrize("h", [0.1, 0.25, 0.4])
    def test_gaussian_moments(self, h):
        paths = FbmSampler(h, 1.0, 32).fit().sample(M, SEED, 13)[:, 1:]
        assert np.max(np.abs(stats.skew(paths, axis=0))) < 0.1
        assert np.max(np.abs(stats.kurtosis(paths, axis=0))) < 0.2

    def test_increment_roughness(self):
        h = 0.25
        paths = FbmSampler(h, 1.0, 32).fit().sample(M, SEED, 14)
        nodes = np.linspace(0, 1, 33)
        pairs = RngStream(SEED, 15).generator().choice(33, size=(5, 2), replace=True)
        for i, j in pairs:
            if i == j:
                continue
            m, se = mean_se((paths[:, i] - paths[:, j]) ** 2)
            assert abs(m - abs(nodes[i] - nodes[j]) ** (2 * h)) < 3 * se

    def test_empirical_covariance_zero_paths(self):
        cov, se = empirical_covariance(np.zeros((5, 4)))
        assert np.all(cov == 0) and np.all(se == 0)

    def test_empirical_covariance_needs_two(self):
        with pytest.raises(ConfigError):
            empirical_covariance(np.zeros((1, 4)))


class TestWienerIntegral:
    def setup_method(self):
        self.grid = TimeGrid(1.0, 512)
        self.path = sample_fbm_volterra(0.25, self.grid, RngStream(SEED, 21))

    def test_zero_integrand(self):
        phi = SampledFunction(self.grid, np.zeros(513))
        assert wiener_integral_scalar(0.25, phi, self.path) == 0.0

    @pytest.mark.parametrize("method", ["ibp", "kstar"])
    def test_unit_integrand_reproduces_path(self, method):
        phi = SampledFunction(self.grid, np.ones(513))
        got = wiener_integral_scalar(0.25, phi, self.path, method=method)
        assert got == pytest.approx(self.path.values[-1], rel=1e-2)

    def test_indicator_upto(self):
        phi = SampledFunction(self.grid, np.ones(513))
        assert wiener_integral_scalar(0.25, phi, self.path, upto=200) == pytest.approx(self.path.values[200])
        assert wiener_integral_scalar(0.25, phi, self.path, upto=0) == 0.0
        with pytest.raises(ConfigError):
            wiener_integral_scalar(0.25, phi, self.path, upto=600)

    def test_methods_agree(self):
        phi = SampledFunction(self.grid, np.cos(3 * self.grid.nodes))
        a = wiener_integral_scalar(0.25, phi, self.path, method="ibp")
        b = wiener_integral_scalar(0.25, phi, self.path, method="kstar")
        assert a == pytest.approx(b, rel=1e-2, abs=1e-3)

    def test_isometry_monte_carlo(self):
        grid = TimeGrid(1.0, 64)
        phi = SampledFunction(grid, np.cos(3 * grid.nodes))
        x = np.array([
            wiener_integral_scalar(0.25, phi, path_from_noise(0.25, grid, draw_noise(RngStream(SEED, (22, p)), 64)))
            for p in range(M)
        ])
        m, se = mean_se(x**2)
        assert abs(m - isometry_norm(0.25, phi) ** 2) < 3 * se


class TestRefinement:
    def test_refined_grid_and_origin(self):
        path = sample_fbm_volterra(0.25, TimeGrid(1.0, 8), RngStream(SEED, 31))
        fine = refine_path(path, RngStream(SEED, 32))
        assert fine.grid.n_steps == 16
        assert fine.values[0] == 0.0
        # the coarse increment over each cell is the sum of the two fine increments
        np.testing.assert_allclose(
            fine.driving_increments.reshape(8, 2).sum(axis=1), path.driving_increments, atol=1e-12
        )

    def test_cauchy_under_refinement(self):
        gaps = np.zeros(3)
        for p in range(200):
            path = sample_fbm_volterra(0.25, TimeGrid(1.0, 16), RngStream(SEED, (33, p)))
            for level in range(3):
                fine = refine_path(path, RngStream(SEED, (34, p, level)))
                gaps[level] += (fine.values[-1] - path.values[-1]) ** 2
                path = fine
        assert gaps[0] > gaps[1] > gaps[2]

    def test_cholesky_cannot_refine(self):
        path = sample_fbm_cholesky(0.25, TimeGrid(1.0, 4), RngStream(0))
        with pytest.raises(ConfigError):
            refine_path(path, RngStream(1))
