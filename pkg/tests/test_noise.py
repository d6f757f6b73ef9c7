import numpy as np
import pytest
from scipy import stats

from burstkpn.noise import (
    DEFAULT_GAIN_ANCHORS,
    GainSetting,
    NoiseParams,
    NoiseRanges,
    bayer_to_gray,
    estimate_sigma_map,
    params_at_gain,
    params_from_gains,
    sample_noise,
    sample_params,
    sigma_rms,
    stream,
)


class TestSampleNoise:
    def test_read_noise_only_variance(self):
        rng = stream(11, 0)
        clean = np.zeros(10**6)
        noisy = sample_noise(clean, NoiseParams(sigma_r=0.01, sigma_s=0.5), rng)
        assert noisy.var() == pytest.approx(1e-4, rel=0.02)

    def test_zero_params_identity(self):
        rng = stream(11, 1)
        clean = np.linspace(0, 1, 64).reshape(8, 8)
        noisy = sample_noise(clean, NoiseParams(0.0, 0.0), rng)
        np.testing.assert_array_equal(noisy, clean)

    def test_signal_dependent_variance_and_mean(self):
        # var = 0.01^2 + 0.001*0.5 = 6.0e-4
        rng = stream(11, 2)
        n = 10**6
        noisy = sample_noise(np.full(n, 0.5), NoiseParams(0.01, 0.001), rng)
        assert noisy.var() == pytest.approx(6.0e-4, rel=0.02)
        se = np.sqrt(6.0e-4 / n)
        assert abs(noisy.mean() - 0.5) < 3 * se

    def test_negative_clean_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            sample_noise(np.array([0.1, -0.2]), NoiseParams(0.01, 0.001), stream(11, 3))

    def test_output_not_clipped(self):
        noisy = sample_noise(np.zeros(1000), NoiseParams(0.1, 0.0), stream(11, 4))
        assert noisy.min() < 0

    def test_preserves_dtype(self):
        clean = np.zeros((4, 4), dtype=np.float32)
        assert sample_noise(clean, NoiseParams(0.01, 0.0), stream(11, 5)).dtype == np.float32


class TestSigmaMap:
    def test_negative_intensity_clamped(self):
        out = estimate_sigma_map(np.array([-0.01]), NoiseParams(sigma_r=0.1, sigma_s=0.5))
        assert out[0] == pytest.approx(0.1)

    def test_direct_value(self):
        out = estimate_sigma_map(np.array([0.25]), NoiseParams(sigma_r=0.02, sigma_s=0.004))
        assert out[0] == pytest.approx(np.sqrt(1.4e-3))
        assert out[0] == pytest.approx(0.0374166, abs=1e-6)

    def test_shot_free_is_uniform(self):
        ref = np.random.default_rng(0).uniform(-0.2, 1.0, (6, 6))
        out = estimate_sigma_map(ref, NoiseParams(sigma_r=0.03, sigma_s=0.0))
        np.testing.assert_allclose(out, 0.03)

    def test_monotone_and_bounded_below(self):
        params = NoiseParams(sigma_r=0.02, sigma_s=0.005)
        xs = np.linspace(-0.5, 1.5, 101)
        out = estimate_sigma_map(xs, params)
        assert np.all(np.diff(out) >= 0)
        assert np.all(out >= params.sigma_r)


class TestGains:
    def test_zero_readout(self):
        p = params_from_gains(GainSetting(g_a=1, g_d=1, r=0))
        assert (p.sigma_r, p.sigma_s) == (0.0, 1.0)

    def test_direct_substitution(self):
        p = params_from_gains(GainSetting(g_a=2, g_d=3, r=1))
        assert (p.sigma_s, p.sigma_r) == (6.0, 3.0)

    def test_digital_gain_linearity(self):
        base = params_from_gains(GainSetting(g_a=1.7, g_d=2.0, r=0.4))
        doubled = params_from_gains(GainSetting(g_a=1.7, g_d=4.0, r=0.4))
        assert doubled.sigma_s == pytest.approx(2 * base.sigma_s)
        assert doubled.sigma_r == pytest.approx(2 * base.sigma_r)

    def test_nonpositive_gain_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            GainSetting(g_a=0, g_d=1, r=0.1)
        with pytest.raises(ValueError, match="non-negative"):
            GainSetting(g_a=1, g_d=1, r=-0.1)


class TestSampleParams:
    def test_degenerate_range_exact(self):
        ranges = NoiseRanges(3e-3, 3e-3, 7e-3, 7e-3)
        p = sample_params(ranges, stream(11, 6))
        assert (p.sigma_s, p.sigma_r) == (3e-3, 7e-3)

    def test_log_uniform_ks(self):
        rng = stream(11, 7)
        ranges = NoiseRanges()
        draws = [sample_params(ranges, rng) for _ in range(10**5)]
        for vals, lo, hi in (
            ([p.sigma_s for p in draws], ranges.sigma_s_min, ranges.sigma_s_max),
            ([p.sigma_r for p in draws], ranges.sigma_r_min, ranges.sigma_r_max),
        ):
            logs = np.log10(vals)
            u = (logs - np.log10(lo)) / (np.log10(hi) - np.log10(lo))
            assert np.all((0 <= u) & (u <= 1))
            assert stats.kstest(u, "uniform").pvalue > 0.01

    def test_gain_levels(self):
        p = params_at_gain(8, DEFAULT_GAIN_ANCHORS)
        assert p.sigma_s == pytest.approx(8e-3)
        assert p.sigma_r == pytest.approx(2.4e-2)

    def test_invalid_range_rejected(self):
        with pytest.raises(ValueError, match="range"):
            NoiseRanges(sigma_s_min=1e-2, sigma_s_max=1e-3)
        with pytest.raises(ValueError, match="range"):
            NoiseRanges(sigma_r_min=0.0)


class TestSigmaRms:
    def test_uniform_four_pixels(self):
        assert sigma_rms(np.full((2, 2), 0.1)) == pytest.approx(0.2)

    def test_single_pixel(self):
        assert sigma_rms(np.array([[0.37]])) == pytest.approx(0.37)

    def test_all_zero(self):
        assert sigma_rms(np.zeros((3, 3))) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            sigma_rms(np.zeros((0, 4)))

    def test_normalized_is_scale_free(self):
        small = np.full((2, 2), 0.1)
        big = np.full((64, 64), 0.1)
        assert sigma_rms(small, normalized=True) == pytest.approx(0.1)
        assert sigma_rms(big, normalized=True) == pytest.approx(0.1)
        assert sigma_rms(big) > sigma_rms(small)


class TestBayerToGray:
    def test_constant_quad(self):
        gray, _ = bayer_to_gray(np.ones((2, 2)), NoiseParams(0.01, 0.001))
        assert gray.shape == (1, 1)
        assert gray[0, 0] == pytest.approx(1.0)

    def test_quad_mean_layout(self):
        raw = np.array([[1.0, 2.0, 10.0, 20.0], [3.0, 4.0, 30.0, 40.0]])
        gray, _ = bayer_to_gray(raw, NoiseParams(0.0, 0.0))
        np.testing.assert_allclose(gray, [[2.5, 25.0]])

    def test_updated_params(self):
        _, p = bayer_to_gray(np.ones((2, 2)), NoiseParams(sigma_r=0.02, sigma_s=0.004))
        assert p.sigma_r == pytest.approx(0.01)
        assert p.sigma_s == pytest.approx(0.001)

    def test_variance_quartering(self):
        params = NoiseParams(sigma_r=0.01, sigma_s=0.002)
        clean = np.full((2, 2), 0.5)
        rng = stream(11, 8)
        raw_px, gray_px = [], []
        for _ in range(20000):
            noisy = sample_noise(clean, params, rng)
            raw_px.append(noisy[0, 0])
            gray_px.append(bayer_to_gray(noisy, params)[0][0, 0])
        raw_var, gray_var = np.var(raw_px), np.var(gray_px)
        assert gray_var == pytest.approx(raw_var / 4, rel=0.03)
        # measured variance agrees with the updated-parameter prediction
        _, p2 = bayer_to_gray(clean, params)
        assert gray_var == pytest.approx(p2.sigma_r**2 + p2.sigma_s * 0.5, rel=0.03)

    def test_odd_extent_rejected(self):
        with pytest.raises(ValueError, match="even"):
            bayer_to_gray(np.ones((3, 4)), NoiseParams(0.01, 0.001))


class TestStream:
    def test_keyed_reproducibility(self):
        a = stream(42, 3, 1).standard_normal(8)
        b = stream(42, 3, 1).standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_distinct_paths_distinct_draws(self):
        a = stream(42, 3, 1).standard_normal(8)
        b = stream(42, 3, 2).standard_normal(8)
        c = stream(43, 3, 1).standard_normal(8)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)
