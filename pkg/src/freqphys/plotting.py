"""Figures written next to the CSV artifacts of the command-line tools.

Everything renders off-screen (Agg) and returns the path written.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .numerics import amplitude_phase, rdft  # noqa: E402
from .pfd import HIGH_HZ, LOW_HZ  # noqa: E402

BAND_COLOR = "#d9ead3"


def _amplitude(y, fs):
    amp, _ = amplitude_phase(rdft(np.asarray(y, dtype=np.float64), fs))
    return np.arange(len(amp)) * fs / len(y), amp.numpy()


def _shade_band(ax):
    ax.axvspan(LOW_HZ, HIGH_HZ, color=BAND_COLOR, zorder=0, label="physiological band")


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sample(path, raw, cond, target, fs: float, title: str = "") -> Path:
    """Raw mean trace, its bandpassed version and the clean pulse, in time and frequency."""
    t = np.arange(len(target)) / fs
    fig, (ax_t, ax_f) = plt.subplots(2, 1, figsize=(7, 5))
    ax_t.plot(t, raw, color="0.6", lw=1, label="raw mean trace")
    ax_t.plot(t, cond, color="tab:blue", lw=1, label="bandpassed")
    ax_t.plot(t, target, color="k", lw=1.2, label="pulse")
    ax_t.set_xlabel("time [s]")
    ax_t.legend(loc="upper right", fontsize=8)
    _shade_band(ax_f)
    for y, color, label in ((raw, "0.6", "raw"), (cond, "tab:blue", "bandpassed"), (target, "k", "pulse")):
        f, a = _amplitude(y, fs)
        ax_f.plot(f[1:], a[1:], color=color, lw=1, label=label)
    ax_f.set_xlabel("frequency [Hz]")
    ax_f.set_ylabel("amplitude")
    ax_f.legend(loc="upper right", fontsize=8)
    if title:
        ax_t.set_title(title)
    return _save(fig, path)


def plot_prediction(path, pred, fs: float, target=None, title: str = "") -> Path:
    t = np.arange(len(pred)) / fs
    fig, (ax_t, ax_f) = plt.subplots(2, 1, figsize=(7, 5))
    if target is not None:
        ax_t.plot(t, target, color="k", lw=1.2, label="ground truth")
    ax_t.plot(t, pred, color="tab:red", lw=1, label="prediction")
    ax_t.set_xlabel("time [s]")
    ax_t.legend(loc="upper right", fontsize=8)
    _shade_band(ax_f)
    if target is not None:
        f, a = _amplitude(target, fs)
        ax_f.plot(f, a, color="k", lw=1.2, label="ground truth")
    f, a = _amplitude(pred, fs)
    ax_f.plot(f, a, color="tab:red", lw=1, label="prediction")
    ax_f.set_xlabel("frequency [Hz]")
    ax_f.set_ylabel("amplitude")
    if title:
        ax_t.set_title(title)
    return _save(fig, path)


def plot_hr_agreement(path, hr_gt, hr_pred, title: str = "") -> Path:
    hr_gt, hr_pred = np.asarray(hr_gt), np.asarray(hr_pred)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    lo = min(hr_gt.min(), hr_pred.min()) - 5
    hi = max(hr_gt.max(), hr_pred.max()) + 5
    ax.plot([lo, hi], [lo, hi], color="0.7", lw=1)
    ax.scatter(hr_gt, hr_pred, s=14, color="tab:red")
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_xlabel("ground-truth HR [bpm]")
    ax.set_ylabel("predicted HR [bpm]")
    if title:
        ax.set_title(title, fontsize=9)
    return _save(fig, path)


def plot_training(path, steps, losses, taus=None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses, color="0.5", lw=0.6, label="loss")
    if len(losses) >= 20:
        w = 20
        smooth = np.convolve(losses, np.ones(w) / w, mode="valid")
        ax.plot(steps[w - 1:], smooth, color="k", lw=1.2, label="20-step mean")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if taus is not None:
        ax2 = ax.twinx()
        ax2.plot(steps, taus, color="tab:blue", lw=1)
        ax2.set_ylabel("mean threshold", color="tab:blue")
    ax.legend(loc="upper right", fontsize=8)
    return _save(fig, path)
