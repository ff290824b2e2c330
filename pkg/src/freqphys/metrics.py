"""Heart-rate estimation, error metrics and a simplified HRV/respiration readout."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .errors import ConfigError, DegenerateSignalError, InsufficientDataError
from .numerics import amplitude_phase, rdft
from .pfd import HIGH_HZ, LOW_HZ

HRV_RESAMPLE_HZ = 4.0
LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.4)


def hr_from_spectrum(y, sample_rate: float, band: tuple[float, float] | None = (LOW_HZ, HIGH_HZ),
                     pad_factor: int = 1) -> float:
    """Heart rate in bpm from the dominant spectral peak.

    The search is restricted to ``band`` (inclusive); ``band=None`` searches
    every non-DC bin, which is the naive estimator a drifting signal fools.
    ``pad_factor`` zero-pads the window to refine the frequency grid. Ties go
    to the lowest frequency.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y) * int(pad_factor)
    padded = np.zeros(n)
    padded[: len(y)] = y
    amp, _ = amplitude_phase(rdft(padded, sample_rate))
    amp = amp.numpy()
    freqs = np.arange(len(amp)) * sample_rate / n
    if band is None:
        sel = np.arange(1, len(amp))
    else:
        sel = np.flatnonzero((freqs >= band[0]) & (freqs <= band[1]))
    if sel.size == 0:
        raise ConfigError(f"no frequency bin of T={len(y)}, fs={sample_rate} inside {band}")
    return 60.0 * float(freqs[sel[np.argmax(amp[sel])]])


def _pair(gt, pred):
    gt, pred = np.asarray(gt, dtype=np.float64), np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape or gt.ndim != 1 or gt.size == 0:
        raise ValueError("gt and pred must be equal-length non-empty vectors")
    return gt, pred


def mae(gt, pred) -> float:
    gt, pred = _pair(gt, pred)
    return float(np.mean(np.abs(gt - pred)))


def rmse(gt, pred) -> float:
    gt, pred = _pair(gt, pred)
    return float(np.sqrt(np.mean((gt - pred) ** 2)))


def sd(gt, pred) -> float:
    """Population spread of ``pred - gt`` around the mean error."""
    gt, pred = _pair(gt, pred)
    e = pred - gt
    return float(np.sqrt(np.mean((e - e.mean()) ** 2)))


def pearson_metric(gt, pred) -> float:
    gt, pred = _pair(gt, pred)
    if gt.size < 2:
        raise DegenerateSignalError("pearson needs at least two pairs")
    g, p = gt - gt.mean(), pred - pred.mean()
    den = np.sqrt(np.sum(g * g) * np.sum(p * p))
    if den == 0:
        raise DegenerateSignalError("constant input: correlation undefined")
    return float(np.clip(np.sum(g * p) / den, -1.0, 1.0))


@dataclass
class EvalReport:
    samples: list[str]
    hr_gt: np.ndarray
    hr_pred: np.ndarray
    mae_bpm: float
    rmse_bpm: float
    sd_bpm: float
    pearson_r: float | None
    notes: list[str] = field(default_factory=list)

    @classmethod
    def from_pairs(cls, samples, hr_gt, hr_pred) -> "EvalReport":
        gt, pred = _pair(hr_gt, hr_pred)
        notes = []
        try:
            r = pearson_metric(gt, pred)
        except DegenerateSignalError as exc:
            r = None
            notes.append(f"pearson_r omitted: {exc}")
        return cls(list(samples), gt, pred, mae(gt, pred), rmse(gt, pred), sd(gt, pred), r, notes)

    def to_csv(self) -> str:
        lines = ["sample,hr_gt,hr_pred,abs_err"]
        for s, g, p in zip(self.samples, self.hr_gt, self.hr_pred):
            lines.append(f"{s},{g:.6f},{p:.6f},{abs(g - p):.6f}")
        lines += ["", "metric,value", f"mae_bpm,{self.mae_bpm:.6f}", f"rmse_bpm,{self.rmse_bpm:.6f}",
                  f"sd_bpm,{self.sd_bpm:.6f}"]
        lines.append(f"pearson_r,{self.pearson_r:.6f}" if self.pearson_r is not None else "pearson_r,")
        lines += [f"# {n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        r = f"{self.pearson_r:.4f}" if self.pearson_r is not None else "n/a"
        text = (f"n={len(self.samples)}  MAE={self.mae_bpm:.3f} bpm  RMSE={self.rmse_bpm:.3f} bpm  "
                f"SD={self.sd_bpm:.3f} bpm  r={r}")
        return "\n".join([text, *self.notes])


@dataclass(frozen=True)
class HrvResult:
    lf_nu: float
    hf_nu: float
    lf_hf_ratio: float
    rf_hz: float
    degenerate: bool = False


def hrv_rf(y, sample_rate: float) -> HrvResult:
    """Simplified band-power HRV and respiration frequency from a pulse wave.

    Peaks above 0.4 of the maximum, at least one 180-bpm period apart, give the
    inter-beat intervals; these are resampled at 4 Hz, mean-removed and
    transformed. LF/HF powers are sums of squared amplitudes in 0.04-0.15 Hz
    and 0.15-0.4 Hz; RF is the HF-band peak. With no LF/HF power at all the
    normalised units fall back to 0.5/0.5 and ``degenerate`` is set.
    """
    y = np.asarray(y, dtype=np.float64)
    distance = max(1, int(60.0 / 180.0 * sample_rate))
    peaks, _ = find_peaks(y, height=0.4 * y.max(), distance=distance)
    if len(peaks) < 8:
        raise InsufficientDataError(f"found {len(peaks)} beats, need at least 8")
    beat_t = peaks / sample_rate
    ibi = np.diff(beat_t)
    ibi_t = beat_t[1:]
    grid = np.arange(ibi_t[0], ibi_t[-1], 1.0 / HRV_RESAMPLE_HZ)
    if len(grid) < 4:
        raise InsufficientDataError("inter-beat series too short to resample")
    series = np.interp(grid, ibi_t, ibi)
    series = series - series.mean()
    amp, _ = amplitude_phase(rdft(series, HRV_RESAMPLE_HZ))
    power = amp.numpy() ** 2
    freqs = np.arange(len(power)) * HRV_RESAMPLE_HZ / len(series)
    lf_sel = (freqs >= LF_BAND[0]) & (freqs < LF_BAND[1])
    hf_sel = (freqs >= HF_BAND[0]) & (freqs <= HF_BAND[1])
    lf, hf = float(power[lf_sel].sum()), float(power[hf_sel].sum())
    rf = float(freqs[hf_sel][np.argmax(power[hf_sel])]) if hf_sel.any() else float("nan")
    # relative to the squared mean interval: numerically constant series land here
    if lf + hf <= 1e-20 * len(series) ** 2 * float(np.mean(ibi)) ** 2:
        return HrvResult(0.5, 0.5, 1.0, rf, degenerate=True)
    return HrvResult(lf / (lf + hf), hf / (lf + hf), lf / hf if hf > 0 else float("inf"), rf)
