import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from fbmcontrol import (
    ConfigError,
    SampledFunction,
    TimeGrid,
    covariance,
    integrated_kernel,
    isometry_norm,
    kernel,
    kernel_dt,
    kstar_transform,
    normalization_constant,
)

# frozen from an independent Gamma-function evaluation and scipy.quad
C_QUARTER = 0.645998003740752
K_QUARTER = 0.8203226237647527

hursts = st.floats(0.02, 0.48)


def quad_kernel(h, t, s):
    """Kernel by brute-force quadrature of the inner integral."""
    c = normalization_constant(h)
    inner = quad(lambda u: u ** (h - 1.5), s, t, weight="alg", wvar=(h - 0.5, 0.0),
                 epsabs=1e-13, epsrel=1e-12)[0]
    return c * ((t / s) ** (h - 0.5) * (t - s) ** (h - 0.5) - (h - 0.5) * s ** (0.5 - h) * inner)


class TestCovariance:
    def test_examples(self):
        assert covariance(0.3, 1.0, 1.0) == pytest.approx(1.0)
        assert covariance(0.25, 0.0, 2.0) == 0.0
        assert covariance(0.25, 1.0, 2.0) == pytest.approx(0.5 * np.sqrt(2), rel=1e-12)

    def test_negative_time_rejected(self):
        with pytest.raises(ConfigError):
            covariance(0.25, -0.1, 1.0)

    @given(hursts, st.floats(0, 5), st.floats(0, 5))
    def test_symmetric_and_diagonal(self, h, s, t):
        assert covariance(h, s, t) == pytest.approx(covariance(h, t, s), abs=1e-14)
        assert covariance(h, t, t) >= 0


class TestNormalization:
    def test_quarter_oracle(self):
        assert normalization_constant(0.25) == pytest.approx(C_QUARTER, rel=1e-10)
        assert round(normalization_constant(0.25), 3) == 0.646

    def test_finite_positive(self):
        for h in (0.1, 0.25, 0.4, 0.49):
            c = normalization_constant(h)
            assert np.isfinite(c) and c > 0

    @pytest.mark.parametrize("h", [0.0, 0.5, 0.7, -0.1, True])
    def test_invalid_hurst(self, h):
        with pytest.raises(ConfigError):
            normalization_constant(h)


class TestKernel:
    def test_zero_convention(self):
        assert kernel(0.3, 1.0, 2.0) == 0.0
        assert kernel(0.3, 1.0, 1.0) == 0.0

    def test_quadrature_oracle(self):
        assert kernel(0.25, 1.0, 0.5) == pytest.approx(K_QUARTER, rel=1e-10)
        assert kernel(0.25, 1.0, 0.5) == pytest.approx(quad_kernel(0.25, 1.0, 0.5), rel=1e-4)

    @pytest.mark.parametrize("h,t,s", [(0.1, 0.7, 0.01), (0.4, 3.0, 2.9), (0.05, 1.0, 0.999)])
    def test_agrees_with_quadrature(self, h, t, s):
        assert kernel(h, t, s) == pytest.approx(quad_kernel(h, t, s), rel=1e-8)

    def test_origin_rejected(self):
        with pytest.raises(ConfigError):
            kernel(0.25, 1.0, 0.0)

    @settings(max_examples=200)
    @given(hursts, st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
    def test_bound(self, h, a, b):
        s, t = min(a, b), max(a, b)
        if t - s < 1e-9:
            return
        c = normalization_constant(h)
        assert abs(kernel(h, t, s)) <= 2 * c * ((t - s) ** (h - 0.5) + s ** (h - 0.5))

    @given(hursts, st.floats(0.0, 2.0), st.floats(0.0, 2.0))
    def test_zero_whenever_t_le_s(self, h, t, ds):
        assert kernel(h, t, t + ds) == 0.0

    @pytest.mark.parametrize("h,t,s", [(0.25, 1.0, 0.3), (0.1, 2.0, 0.05), (0.4, 0.5, 0.49)])
    def test_integrated_kernel(self, h, t, s):
        ref = quad(lambda r: quad_kernel(h, r, s), s, t, limit=200, epsabs=1e-12)[0]
        assert float(integrated_kernel(h, t, s)) == pytest.approx(ref, rel=1e-6)
        assert float(integrated_kernel(h, s, t)) == 0.0


class TestKernelDt:
    def test_bound_and_sign(self):
        d = kernel_dt(0.25, 2.0, 1.0)
        assert d < 0
        assert abs(d) <= normalization_constant(0.25) * 0.25

    def test_finite_difference(self):
        h, t, s, e = 0.3, 1.5, 0.5, 1e-5
        fd = (kernel(h, t + e, s) - kernel(h, t - e, s)) / (2 * e)
        assert kernel_dt(h, t, s) == pytest.approx(fd, rel=1e-4)

    @settings(max_examples=200)
    @given(hursts, st.floats(0.01, 1.0), st.floats(0.05, 0.95))
    def test_bound_and_consistency(self, h, t, frac):
        s = frac * t
        d = kernel_dt(h, t, s)
        assert d < 0
        assert abs(d) <= normalization_constant(h) * (0.5 - h) * (t - s) ** (h - 1.5) * (1 + 1e-12)
        e = 1e-6 * min(s, t - s)
        fd = (kernel(h, t + e, s) - kernel(h, t - e, s)) / (2 * e)
        assert d == pytest.approx(fd, rel=1e-3)

    @pytest.mark.parametrize("t,s", [(1.0, 1.0), (1.0, 2.0), (1.0, 0.0)])
    def test_rejects_invalid(self, t, s):
        with pytest.raises(ConfigError):
            kernel_dt(0.25, t, s)


class TestKstar:
    def test_constant_reduces_to_kernel(self):
        grid = TimeGrid(1.0, 64)
        out = kstar_transform(0.25, SampledFunction(grid, np.full(65, 3.0)))
        s = grid.nodes[1:-1]
        np.testing.assert_allclose(out.values[1:-1], 3.0 * kernel(0.25, 1.0, s), rtol=1e-10)

    def test_indicator_norm(self):
        grid = TimeGrid(1.0, 512)
        vals = np.zeros(513)
        vals[:256] = 1.0
        phi = SampledFunction(grid, vals, kind="step")
        assert isometry_norm(0.25, phi) == pytest.approx(0.5**0.25, rel=0.01)

    @pytest.mark.parametrize("h", [0.1, 0.25, 0.4])
    def test_unit_function_norm(self, h):
        phi = SampledFunction(TimeGrid(1.0, 512), np.ones(513))
        assert isometry_norm(h, phi) == pytest.approx(1.0, rel=0.01)

    def test_zero_function(self):
        phi = SampledFunction(TimeGrid(1.0, 32), np.zeros(33))
        assert isometry_norm(0.25, phi) == 0.0

    def test_holder_input_finite(self):
        grid = TimeGrid(1.0, 128)
        phi = SampledFunction(grid, np.sqrt(grid.nodes) * np.cos(5 * grid.nodes))
        out = kstar_transform(0.25, phi)
        assert np.all(np.isfinite(out.values[1:]))

    def test_points_outside_rejected(self):
        phi = SampledFunction(TimeGrid(1.0, 8), np.ones(9))
        with pytest.raises(ConfigError):
            kstar_transform(0.25, phi, [1.5])

    @settings(max_examples=10, deadline=None)
    @given(st.sampled_from([0.1, 0.25, 0.4]),
           st.lists(st.floats(-2, 2), min_size=1, max_size=4),
           st.lists(st.integers(1, 512), min_size=4, max_size=4))
    def test_step_isometry(self, h, coef, ends):
        n = 512
        grid = TimeGrid(1.0, n)
        coef = np.asarray(coef)
        ends = np.asarray(ends[: len(coef)])
        vals = np.zeros(n + 1)
        for c, k in zip(coef, ends):
            vals[:k] += c
        t = ends / n
        exact = float(coef @ covariance(h, t[:, None], t[None, :]) @ coef)
        got = isometry_norm(h, SampledFunction(grid, vals, kind="step")) ** 2
        assert got == pytest.approx(exact, rel=0.01, abs=1e-10)
