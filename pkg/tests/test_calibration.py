import importlib.resources as resources

import numpy as np
import pytest

from infersched.calibration import (
    CalibrationResult,
    DegenerateDesign,
    EmptySamples,
    MeasurementSet,
    build_profile,
    calibrate,
    fit_mixed,
    fit_solo,
    load_measurements,
)

from conftest import assert_close


def data_path(name):
    return resources.files("infersched") / "data" / name


def line(alpha, beta, chunks):
    return [(c, alpha + beta * c) for c in chunks]


class TestFitMixed:
    def test_noiseless_line_recovered_exactly(self):
        alpha, beta, r2 = fit_mixed(line(0.0174, 6.2e-5, [64, 128, 256, 512]))
        assert_close(alpha, 0.0174, rel=1e-12)
        assert_close(beta, 6.2e-5, rel=1e-12)
        assert r2 > 1 - 1e-12

    def test_noisy_recovery_within_one_percent(self):
        rng = np.random.default_rng(42)
        chunks = rng.uniform(32, 1024, 1000)
        taus = 0.0174 + 6.2e-5 * chunks + rng.normal(0, 1e-4, 1000)
        alpha, beta, r2 = fit_mixed(list(zip(chunks, taus)))
        assert abs(alpha - 0.0174) / 0.0174 < 0.01
        assert abs(beta - 6.2e-5) / 6.2e-5 < 0.01
        assert r2 > 0.99

    def test_order_invariance(self):
        rng = np.random.default_rng(3)
        samples = line(0.01, 1e-4, rng.uniform(10, 500, 50))
        shuffled = list(samples)
        rng.shuffle(shuffled)
        a1, b1, _ = fit_mixed(samples)
        a2, b2, _ = fit_mixed(shuffled)
        assert_close([a1, b1], [a2, b2], rel=1e-9)

    def test_degenerate_design(self):
        with pytest.raises(DegenerateDesign):
            fit_mixed([(128, 0.02), (128, 0.021), (128, 0.019)])
        with pytest.raises(DegenerateDesign):
            fit_mixed([(128, 0.02)])

    def test_nonpositive_slope_warns(self):
        with pytest.warns(UserWarning):
            fit_mixed([(64, 0.03), (128, 0.02), (256, 0.01)])


class TestFitSolo:
    def test_singleton_mean(self):
        assert fit_solo([45.45]) == pytest.approx(45.45)

    def test_two_point_mean(self):
        assert fit_solo([40.0, 50.0]) == pytest.approx(45.0)

    def test_empty(self):
        with pytest.raises(EmptySamples):
            fit_solo([])


class TestReplicaMeasurements:
    @pytest.mark.parametrize(
        "stem,alpha,beta,gamma",
        [
            ("qwen8b", 0.0174, 6.2e-5, 45.45),
            ("qwen4b", 0.0152, 3.6e-5, 52.63),
        ],
    )
    def test_bundled_files_recover_published_constants(self, stem, alpha, beta, gamma):
        measurements = load_measurements(
            data_path(f"{stem}_mixed.csv"), data_path(f"{stem}_solo.csv")
        )
        result = calibrate(measurements)
        assert abs(result.alpha - alpha) / alpha < 0.01
        assert abs(result.beta - beta) / beta < 0.01
        assert abs(result.gamma - gamma) / gamma < 0.01
        assert result.r_squared > 0.99
        assert result.n_mixed == len(measurements.mixed_samples)
        assert result.n_solo == len(measurements.solo_samples)


class TestBuildProfile:
    def result(self, alpha=0.0174, beta=6.2e-5, gamma=45.45):
        return CalibrationResult(alpha, beta, gamma, 0.999, 10, 5)

    def test_zero_threshold(self):
        profile = build_profile(self.result(), batch_cap=16, chunk_size=256)
        assert_close(profile.mixed_iteration_time, 0.0174 + 6.2e-5 * 256, rel=1e-12)
        assert profile.solo_rate == 45.45

    def test_threshold_back_projection(self):
        profile = build_profile(self.result(), batch_cap=16, chunk_size=256, threshold=100)
        assert_close(profile.fixed_overhead, 0.0174 + 6.2e-5 * 100, rel=1e-12)
        assert_close(profile.alpha, 0.0174, rel=1e-12)
        assert_close(profile.mixed_iteration_time, 0.0174 + 6.2e-5 * 256, rel=1e-12)

    def test_flat_slope_edge(self):
        profile = build_profile(self.result(beta=0.0), batch_cap=16, chunk_size=256, threshold=500)
        assert profile.fixed_overhead == pytest.approx(0.0174)


class TestCsvIngestion:
    def test_missing_column_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("chunk,iter_time\n64,0.02\n")
        with pytest.raises(ValueError, match="missing required columns"):
            load_measurements(bad, data_path("qwen8b_solo.csv"))

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            MeasurementSet(mixed_samples=((64, -0.1),), solo_samples=(45.0,))
        with pytest.raises(ValueError):
            MeasurementSet(mixed_samples=((64, 0.1),), solo_samples=(0.0,))
