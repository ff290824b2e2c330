import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from freqphys.errors import ConfigError, DegenerateSignalError, InsufficientDataError
from freqphys.metrics import EvalReport, hr_from_spectrum, hrv_rf, mae, pearson_metric, rmse, sd


def tone(freq, T=300, fs=30.0, phase=0.3):
    return np.cos(2 * np.pi * freq * np.arange(T) / fs + phase)


class TestHeartRate:
    def test_exact_bin(self):
        assert hr_from_spectrum(tone(1.2), 30.0) == pytest.approx(72.0, abs=1e-9)

    def test_drift_is_ignored(self):
        y = tone(1.2) + 4 * tone(0.2, phase=1.0)
        assert hr_from_spectrum(y, 30.0) == pytest.approx(72.0, abs=1e-9)
        # the naive full-spectrum readout is fooled
        assert hr_from_spectrum(y, 30.0, band=None) == pytest.approx(12.0, abs=1e-9)

    def test_near_upper_edge(self):
        # 2.99 Hz falls between bins at 0.1 Hz resolution; the nearest in-band bin is 3.0 Hz
        assert hr_from_spectrum(tone(2.99), 30.0) == pytest.approx(180.0, abs=1e-9)
        assert abs(hr_from_spectrum(tone(2.99), 30.0) - 179.4) <= 6.0

    def test_out_of_band_tone_ignored(self):
        y = tone(3.3) * 3 + tone(1.5)
        assert hr_from_spectrum(y, 30.0) == pytest.approx(90.0, abs=1e-9)

    def test_tie_goes_low(self):
        y = tone(1.0, phase=0) + tone(2.0, phase=0)
        assert hr_from_spectrum(y, 30.0) == pytest.approx(60.0, abs=1e-9)

    def test_padding_refines_grid(self):
        y = tone(1.23, T=128)
        coarse = hr_from_spectrum(y, 30.0)
        fine = hr_from_spectrum(y, 30.0, pad_factor=8)
        assert abs(fine - 73.8) < abs(coarse - 73.8)
        assert abs(fine - 73.8) <= 60 * 30.0 / (128 * 8)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.7, 2.95), st.floats(0, 2 * np.pi))
    def test_single_tone_within_one_bin(self, f, phase):
        assert abs(hr_from_spectrum(tone(f, phase=phase), 30.0) - 60 * f) <= 60 * 30.0 / 300 + 1e-9

    def test_empty_band(self):
        with pytest.raises(ConfigError):
            hr_from_spectrum(np.ones(8), 1.0)


class TestAggregates:
    def test_two_point(self):
        gt, pred = [70, 80], [72, 78]
        assert (mae(gt, pred), rmse(gt, pred), sd(gt, pred), pearson_metric(gt, pred)) == (2.0, 2.0, 2.0, 1.0)

    def test_perfect(self):
        gt = [60.0, 75.0, 90.0]
        assert (mae(gt, gt), rmse(gt, gt), sd(gt, gt)) == (0.0, 0.0, 0.0)
        assert pearson_metric(gt, gt) == pytest.approx(1.0)

    def test_constant_bias(self):
        gt = np.array([60.0, 75.0, 90.0, 100.0])
        assert mae(gt, gt + 5) == pytest.approx(5.0)
        assert rmse(gt, gt + 5) == pytest.approx(5.0)
        assert sd(gt, gt + 5) == pytest.approx(0.0, abs=1e-12)
        assert pearson_metric(gt, gt + 5) == pytest.approx(1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 40).flatmap(lambda n: st.tuples(
        arrays(np.float64, n, elements=st.floats(-300, 300)), arrays(np.float64, n, elements=st.floats(-300, 300)))))
    def test_mae_le_rmse(self, pair):
        a, b = pair
        assert mae(a, b) <= rmse(a, b) + 1e-9
        assert sd(a, b) >= 0

    def test_degenerate_pearson(self):
        with pytest.raises(DegenerateSignalError):
            pearson_metric([70.0], [71.0])
        with pytest.raises(ValueError):
            mae([1.0], [1.0, 2.0])


class TestReport:
    def test_csv_layout(self):
        rep = EvalReport.from_pairs(["a", "b"], [70, 80], [72, 78])
        lines = rep.to_csv().splitlines()
        assert lines[0] == "sample,hr_gt,hr_pred,abs_err"
        assert lines[1] == "a,70.000000,72.000000,2.000000"
        assert lines[4:] == ["metric,value", "mae_bpm,2.000000", "rmse_bpm,2.000000", "sd_bpm,2.000000",
                             "pearson_r,1.000000"]

    def test_single_pair_omits_r(self):
        rep = EvalReport.from_pairs(["a"], [70.0], [75.0])
        assert rep.pearson_r is None and rep.notes
        assert "pearson_r," in rep.to_csv() and "n/a" in rep.summary()


def beat_train(ibi_fn, duration=200.0, fs=100.0):
    """Narrow pulses at beat times whose spacing follows ``ibi_fn(t)``."""
    beats = [0.5]
    while beats[-1] < duration - 2:
        beats.append(beats[-1] + ibi_fn(beats[-1]))
    t = np.arange(int(duration * fs)) / fs
    y = np.zeros_like(t)
    for b in beats:
        y += np.exp(-0.5 * ((t - b) / 0.03) ** 2)
    return y


class TestHrv:
    def test_constant_ibi_is_degenerate(self):
        t = np.arange(30 * 60) / 30.0
        y = np.cos(2 * np.pi * 1.0 * t)
        res = hrv_rf(y, 30.0)
        assert res.degenerate and (res.lf_nu, res.hf_nu) == (0.5, 0.5)

    def test_respiratory_modulation(self):
        y = beat_train(lambda t: 0.8 + 0.05 * np.sin(2 * np.pi * 0.25 * t))
        res = hrv_rf(y, 100.0)
        assert res.rf_hz == pytest.approx(0.25, abs=0.01)
        assert res.hf_nu > res.lf_nu
        assert res.lf_nu + res.hf_nu == pytest.approx(1.0)

    def test_slow_modulation(self):
        y = beat_train(lambda t: 0.8 + 0.05 * np.sin(2 * np.pi * 0.1 * t))
        res = hrv_rf(y, 100.0)
        assert res.lf_nu > res.hf_nu
        assert res.lf_hf_ratio == pytest.approx(res.lf_nu / res.hf_nu)

    def test_too_few_beats(self):
        with pytest.raises(InsufficientDataError):
            hrv_rf(np.cos(2 * np.pi * 1.0 * np.arange(150) / 30.0), 30.0)
