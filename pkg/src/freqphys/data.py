"""Synthetic pulse signals and multi-region temporal maps, plus file IO.

The corruption model has two parts: a slow drift below the physiological band
(illumination/motion trend) and band-limited white noise inside it, so a
bandpass alone cannot clean the maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .fileio import load_tensor, read_signal_csv, save_tensor, write_signal_csv
from .numerics import irdft, rdft
from .pfd import HIGH_HZ, LOW_HZ, apply_pbf, pbf_mask

__all__ = [
    "MSTmap",
    "PulseSignal",
    "SynthSpec",
    "gen_mstmap",
    "gen_pulse",
    "load_signal_csv",
    "load_tensor",
    "make_dataset",
    "make_freq_condition",
    "save_signal_csv",
    "save_tensor",
    "zscore",
]


@dataclass(frozen=True)
class PulseSignal:
    samples: np.ndarray
    sample_rate: float

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class MSTmap:
    values: np.ndarray  # (T, N, C)
    sample_rate: float

    def __post_init__(self):
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ValueError(f"MSTmap needs a (T, N, C) array, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("MSTmap contains non-finite values")

    def mean_trace(self) -> np.ndarray:
        return self.values.mean(axis=(1, 2))


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic sample.

    ``roi_phase_jitter`` is the maximum per-ROI time shift in seconds;
    ``roi_gain_jitter`` the maximum relative deviation of each trace's gain;
    ``inband_noise_std`` the standard deviation of the noise *after* it has been
    restricted to the physiological band.
    """

    T: int = 128
    fs: float = 30.0
    N: int = 4
    C: int = 3
    hr_bpm: float = 72.0
    harmonic_amps: tuple[float, ...] = (1.0, 0.3)
    drift_freq_hz: float = 0.3
    drift_amp: float = 2.0
    inband_noise_std: float = 0.5
    roi_gain_jitter: float = 0.2
    roi_phase_jitter: float = 0.05
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if self.T < 8:
            raise ConfigError(f"T must be >= 8, got {self.T}")
        if self.fs <= 0 or self.N < 1 or self.C < 1:
            raise ConfigError("fs, N and C must be positive")
        if not 40.0 <= self.hr_bpm <= 180.0 or not LOW_HZ <= self.hr_bpm / 60.0 <= HIGH_HZ:
            raise ConfigError(f"hr_bpm={self.hr_bpm} outside the physiological range [40, 180]")
        if not 0.0 <= self.drift_freq_hz < LOW_HZ:
            raise ConfigError(f"drift_freq_hz={self.drift_freq_hz} must be below {LOW_HZ} Hz")
        if not self.harmonic_amps or any(a < 0 for a in self.harmonic_amps):
            raise ConfigError("harmonic_amps must be non-empty and non-negative")
        for name in ("drift_amp", "inband_noise_std", "roi_gain_jitter", "roi_phase_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        return self


def zscore(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean()
    sd = np.sqrt(np.mean(x * x))
    if sd == 0:
        raise ConfigError("cannot z-score a constant signal")
    return x / sd


def gen_pulse(spec: SynthSpec, rng: np.random.Generator | None = None) -> PulseSignal:
    """Harmonic pulse with random phases, z-scored."""
    spec.validate()
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    t = np.arange(spec.T) / spec.fs
    f0 = spec.hr_bpm / 60.0
    y = np.zeros(spec.T)
    for h, amp in enumerate(spec.harmonic_amps):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        y += amp * np.cos(2.0 * np.pi * (h + 1) * f0 * t + phase)
    return PulseSignal(zscore(y), spec.fs)


def bandlimited_noise(n: int, fs: float, std: float, rng: np.random.Generator, shape=()) -> np.ndarray:
    """White Gaussian noise restricted to the physiological band, rescaled to ``std``."""
    white = rng.standard_normal((n, *shape))
    if std == 0:
        return np.zeros_like(white)
    band = pbf_mask(n, fs)
    noise = irdft(apply_pbf(rdft(white, fs, dim=0), band)).numpy()
    sd = noise.std(axis=0, keepdims=True)
    return std * noise / np.where(sd > 0, sd, 1.0)


def gen_mstmap(spec: SynthSpec, pulse: PulseSignal, rng: np.random.Generator | None = None) -> MSTmap:
    spec.validate()
    if len(pulse) != spec.T:
        raise ConfigError(f"pulse has {len(pulse)} samples, spec says T={spec.T}")
    rng = np.random.default_rng(spec.seed + 1) if rng is None else rng
    T, N, C = spec.T, spec.N, spec.C
    idx = np.arange(T, dtype=np.float64)
    t = idx / spec.fs
    out = np.empty((T, N, C))
    # one illumination trend shared by every region
    drift = spec.drift_amp * np.sin(2.0 * np.pi * spec.drift_freq_hz * t + rng.uniform(0.0, 2.0 * np.pi))
    for n in range(N):
        shift = rng.uniform(-spec.roi_phase_jitter, spec.roi_phase_jitter) * spec.fs
        shifted = np.interp(idx - shift, idx, pulse.samples) if shift else pulse.samples
        gains = 1.0 + rng.uniform(-spec.roi_gain_jitter, spec.roi_gain_jitter, size=C)
        out[:, n, :] = shifted[:, None] * gains[None, :] + drift[:, None]
    out += bandlimited_noise(T, spec.fs, spec.inband_noise_std, rng, shape=(N, C))
    return MSTmap(out, spec.fs)


def make_freq_condition(x: MSTmap) -> MSTmap:
    """Bandpass every (ROI, channel) trace of the map."""
    band = pbf_mask(x.values.shape[0], x.sample_rate)
    cp = irdft(apply_pbf(rdft(x.values, x.sample_rate, dim=0), band)).numpy()
    return MSTmap(cp, x.sample_rate)


@dataclass
class Dataset:
    x: np.ndarray  # (n, T, N, C)
    cp: np.ndarray  # (n, T, N, C)
    y: np.ndarray  # (n, T)
    hr_bpm: np.ndarray
    seeds: list[int] = field(default_factory=list)
    sample_rate: float = 30.0

    def __len__(self):
        return len(self.y)

    def tensors(self):
        return self.x, self.cp, self.y


def make_dataset(count: int, base: SynthSpec, seed: int, hr_range: tuple[float, float] | None = (60.0, 150.0),
                 drift_freq_range: tuple[float, float] | None = None) -> Dataset:
    """``count`` independent samples; per-sample seeds derive from ``seed``.

    With ``hr_range=None`` every sample uses ``base.hr_bpm``; likewise for the
    drift frequency.
    """
    base.validate()
    master = np.random.default_rng(seed)
    xs, cps, ys, hrs, seeds = [], [], [], [], []
    for _ in range(count):
        s = int(master.integers(0, 2**31 - 1))
        hr = float(master.uniform(*hr_range)) if hr_range else base.hr_bpm
        drift = float(master.uniform(*drift_freq_range)) if drift_freq_range else base.drift_freq_hz
        spec = replace(base, hr_bpm=hr, drift_freq_hz=drift, seed=s).validate()
        rng = np.random.default_rng(s)
        pulse = gen_pulse(spec, rng)
        x = gen_mstmap(spec, pulse, rng)
        xs.append(x.values)
        cps.append(make_freq_condition(x).values)
        ys.append(pulse.samples)
        hrs.append(hr)
        seeds.append(s)
    T, N, C = base.T, base.N, base.C
    stack = (lambda a, shape: np.stack(a) if a else np.zeros((0, *shape)))
    return Dataset(stack(xs, (T, N, C)), stack(cps, (T, N, C)), stack(ys, (T,)), np.array(hrs), seeds, base.fs)


def save_signal_csv(path, pulse: PulseSignal) -> None:
    write_signal_csv(path, pulse.samples, pulse.sample_rate)


def load_signal_csv(path, sample_rate: float | None = None) -> PulseSignal:
    t, v = read_signal_csv(path)
    if sample_rate is None:
        if len(t) < 2 or t[-1] <= t[0]:
            raise FormatError(f"{path}: cannot infer the sample rate from the time column")
        sample_rate = float(np.round((len(t) - 1) / (t[-1] - t[0]), 9))
    return PulseSignal(v, sample_rate)


def save_dataset(root, ds: Dataset) -> None:
    """Layout: ``manifest.csv`` and ``x/``, ``cp/``, ``y/`` keyed by sample id."""
    root = Path(root)
    for sub in ("x", "cp", "y"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    lines = ["sample,seed,hr_bpm"]
    for i in range(len(ds)):
        sid = sample_id(i)
        save_tensor(root / "x" / f"{sid}.fqpt", ds.x[i])
        save_tensor(root / "cp" / f"{sid}.fqpt", ds.cp[i])
        write_signal_csv(root / "y" / f"{sid}.csv", ds.y[i], ds.sample_rate)
        lines.append(f"{sid},{ds.seeds[i]},{ds.hr_bpm[i]:.17g}")
    (root / "manifest.csv").write_text("\n".join(lines) + "\n")


def sample_id(i: int) -> str:
    return f"sample_{i:04d}"


def read_manifest(root) -> list[tuple[str, int, float]]:
    path = Path(root) / "manifest.csv"
    rows = path.read_text().splitlines()
    if not rows or rows[0] != "sample,seed,hr_bpm":
        raise FormatError(f"{path}: bad manifest header")
    out = []
    for line in rows[1:]:
        if line.strip():
            sid, seed, hr = line.split(",")
            out.append((sid, int(seed), float(hr)))
    return out


def load_dataset(root, sample_rate: float | None = None) -> Dataset:
    root = Path(root)
    rows = read_manifest(root)
    xs = [load_tensor(root / "x" / f"{sid}.fqpt") for sid, _, _ in rows]
    cps = [load_tensor(root / "cp" / f"{sid}.fqpt") for sid, _, _ in rows]
    ys = [load_signal_csv(root / "y" / f"{sid}.csv", sample_rate) for sid, _, _ in rows]
    fs = ys[0].sample_rate if ys else (sample_rate or 30.0)
    return Dataset(
        np.stack(xs) if xs else np.zeros((0, 0, 0, 0)),
        np.stack(cps) if cps else np.zeros((0, 0, 0, 0)),
        np.stack([y.samples for y in ys]) if ys else np.zeros((0, 0)),
        np.array([hr for _, _, hr in rows]),
        [seed for _, seed, _ in rows],
        fs,
    )
