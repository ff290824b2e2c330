"""Physiological frequency denoiser: bandpass, spectrum modulation, selection.

The composition is ``irdft(select(modulate(bandpass(rdft(z)))))`` applied along
the time axis of a real latent tensor whose last axis holds ``D`` channels.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError
from .numerics import DTYPE, HalfSpectrum, bin_frequencies, complex_mul, irdft, rdft, relu

LOW_HZ = 0.66
HIGH_HZ = 3.0


@dataclass(frozen=True)
class BandpassMask:
    mask: torch.Tensor
    origin_len: int
    sample_rate: float
    low_hz: float = LOW_HZ
    high_hz: float = HIGH_HZ

    @property
    def passband(self) -> list[int]:
        return torch.nonzero(self.mask).flatten().tolist()


def pbf_mask(origin_len: int, sample_rate: float, low_hz: float = LOW_HZ, high_hz: float = HIGH_HZ) -> BandpassMask:
    """Ideal indicator of the physiological band, inclusive at both edges."""
    if sample_rate <= 0:
        raise ConfigError(f"sample_rate must be positive, got {sample_rate}")
    if origin_len < 2:
        raise ConfigError(f"origin_len must be >= 2, got {origin_len}")
    lam = bin_frequencies(origin_len, sample_rate)
    mask = ((lam >= low_hz) & (lam <= high_hz)).to(DTYPE)
    if not mask.any():
        raise ConfigError(
            f"empty passband: no bin of T={origin_len}, fs={sample_rate} lies in [{low_hz}, {high_hz}] Hz"
        )
    return BandpassMask(mask, origin_len, float(sample_rate), low_hz, high_hz)


def _along(vec: torch.Tensor, ndim: int, dim: int) -> torch.Tensor:
    shape = [1] * ndim
    shape[dim] = -1
    return vec.reshape(shape)


def apply_pbf(spec: HalfSpectrum, band: BandpassMask) -> HalfSpectrum:
    if band.mask.shape[0] != spec.re.shape[spec.dim]:
        raise ValueError(f"mask has {band.mask.shape[0]} bins, spectrum has {spec.re.shape[spec.dim]}")
    m = _along(band.mask, spec.re.ndim, spec.dim)
    return spec.with_bins(spec.re * m, spec.im * m)


def psm_forward(spec: HalfSpectrum, w_re, w_im, b_re, b_im) -> HalfSpectrum:
    """Complex modulation ``M = relu_parts(Z W + B)`` followed by ``M * Z``.

    The channel axis is the last one; ReLU acts on real and imaginary parts
    separately.
    """
    d = w_re.shape[0]
    if spec.re.shape[-1] != d:
        raise ValueError(f"last axis is {spec.re.shape[-1]}, weights expect {d}")
    zr, zi = spec.re, spec.im
    m_re = relu(zr @ w_re - zi @ w_im + b_re)
    m_im = relu(zr @ w_im + zi @ w_re + b_im)
    re, im = complex_mul(m_re, m_im, zr, zi)
    return spec.with_bins(re, im)


def modulation(spec: HalfSpectrum, w_re, w_im, b_re, b_im) -> HalfSpectrum:
    """The modulation ``M`` alone (used to check the convolution equivalence)."""
    zr, zi = spec.re, spec.im
    m_re = relu(zr @ w_re - zi @ w_im + b_re)
    m_im = relu(zr @ w_im + zi @ w_re + b_im)
    return spec.with_bins(m_re, m_im)


def ass_energy(spec: HalfSpectrum) -> torch.Tensor:
    """Per-bin magnitude, with a zero (not NaN) gradient at exactly-zero bins."""
    e2 = spec.re * spec.re + spec.im * spec.im
    nz = e2 > 0
    return torch.where(nz, torch.sqrt(torch.where(nz, e2, torch.ones_like(e2))), torch.zeros_like(e2))


def ass_select(spec: HalfSpectrum, energy, tau, temperature: float = 1.0, reference=None):
    """Hard threshold forward, sigmoid surrogate backward.

    Returns ``(selected_spectrum, hard_mask, soft_mask)``. With ``reference =
    (hard, soft_ref)`` the forward value becomes ``hard + soft - soft_ref``,
    i.e. the straight-through surrogate frozen at another operating point; this
    is what finite differences must be taken of to check the STE gradient.
    """
    tau = torch.as_tensor(tau, dtype=DTYPE)
    soft = torch.sigmoid((energy - tau) / temperature)
    if reference is None:
        hard = (energy.detach() >= tau.detach()).to(DTYPE)
        soft_ref = soft.detach()
    else:
        hard, soft_ref = reference
    mask = hard + (soft - soft_ref)
    return spec.with_bins(spec.re * mask, spec.im * mask), hard, soft


class SpectrumModulation(nn.Module):
    """Learnable complex weights; near-identity initialisation."""

    def __init__(self, dim: int, generator: torch.Generator | None = None, init_std: float = 0.02):
        super().__init__()
        eye = torch.eye(dim, dtype=DTYPE)
        self.w_re = nn.Parameter(eye + init_std * torch.randn(dim, dim, dtype=DTYPE, generator=generator))
        self.w_im = nn.Parameter(init_std * torch.randn(dim, dim, dtype=DTYPE, generator=generator))
        self.b_re = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.b_im = nn.Parameter(torch.zeros(dim, dtype=DTYPE))

    def forward(self, spec: HalfSpectrum) -> HalfSpectrum:
        return psm_forward(spec, self.w_re, self.w_im, self.b_re, self.b_im)


class AdaptiveSelection(nn.Module):
    """Single learnable threshold shared by every bin, position and channel."""

    def __init__(self, tau: float = 0.0, temperature: float = 1.0):
        super().__init__()
        if temperature <= 0:
            raise ConfigError("ste temperature must be positive")
        self.tau = nn.Parameter(torch.tensor(float(tau), dtype=DTYPE))
        self.temperature = float(temperature)
        self._ste_mode = None  # None | "record" | "replay"
        self._reference = None
        self.last_pass_fraction = None

    def forward(self, spec: HalfSpectrum) -> HalfSpectrum:
        energy = ass_energy(spec)
        ref = self._reference if self._ste_mode == "replay" else None
        out, hard, soft = ass_select(spec, energy, self.tau, self.temperature, reference=ref)
        if self._ste_mode == "record":
            self._reference = (hard, soft.detach())
            self._ste_mode = "replay"
        self.last_pass_fraction = float(hard.mean()) if hard.numel() else 0.0
        return out


@contextmanager
def frozen_ste(module: nn.Module):
    """Freeze every selection mask at the first forward pass inside the block.

    Later forwards evaluate the smooth surrogate ``hard_ref + soft - soft_ref``
    so finite differences see the same function the STE backward differentiates.
    """
    sels = [m for m in module.modules() if isinstance(m, AdaptiveSelection)]
    for s in sels:
        s._ste_mode, s._reference = "record", None
    try:
        yield
    finally:
        for s in sels:
            s._ste_mode, s._reference = None, None


def pfd_forward(z, band: BandpassMask, psm: SpectrumModulation, ass: AdaptiveSelection, dim: int = 0,
                check: bool = True) -> torch.Tensor:
    """Frequency prior of a real latent ``z`` whose time axis is ``dim``."""
    spec = rdft(z, band.sample_rate, dim=dim)
    spec = apply_pbf(spec, band)
    spec = ass(psm(spec))
    return irdft(drop_unpaired_imag(spec), check=check)


def drop_unpaired_imag(spec: HalfSpectrum) -> HalfSpectrum:
    """Zero the imaginary part of the DC and even-length Nyquist bins.

    Those bins are real for any real signal; modulation can make them complex
    when they fall inside the band (e.g. fs below 6 Hz).
    """
    keep = torch.ones(spec.n_bins, dtype=DTYPE)
    keep[0] = 0.0
    if spec.origin_len % 2 == 0:
        keep[-1] = 0.0
    return spec.with_bins(spec.re, spec.im * _along(keep, spec.im.ndim, spec.dim))


class FrequencyDenoiser(nn.Module):
    def __init__(self, dim: int, band: BandpassMask, generator=None, tau: float = 0.0, temperature: float = 1.0):
        super().__init__()
        self.band = band
        self.psm = SpectrumModulation(dim, generator)
        self.ass = AdaptiveSelection(tau, temperature)

    def forward(self, z: torch.Tensor, dim: int = 0) -> torch.Tensor:
        return pfd_forward(z, self.band, self.psm, self.ass, dim=dim)
