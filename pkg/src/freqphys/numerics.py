"""Real-input DFT, its inverse and complex helpers on float64 torch tensors.

Spectra are kept as half spectra (bins ``0..T//2``) with separate real and
imaginary tensors. The forward transform is unnormalised and the inverse
carries the ``1/T`` factor. Both are dense matrix products against a cached
cosine/sine basis, which keeps them exactly differentiable by autograd (the
backward pass is the adjoint matrix).
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import torch

from .errors import SymmetryError

DTYPE = torch.float64


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def num_bins(n: int) -> int:
    return n // 2 + 1


@dataclass(frozen=True)
class HalfSpectrum:
    """Bins ``0..origin_len//2`` of the DFT of a real signal.

    ``dim`` is the frequency axis of ``re``/``im``; every other axis is an
    independent channel.
    """

    re: torch.Tensor
    im: torch.Tensor
    origin_len: int
    sample_rate: float = 1.0
    dim: int = 0

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ValueError(f"re/im shape mismatch: {tuple(self.re.shape)} vs {tuple(self.im.shape)}")
        if self.re.shape[self.dim] != num_bins(self.origin_len):
            raise ValueError(
                f"frequency axis has {self.re.shape[self.dim]} bins, expected {num_bins(self.origin_len)}"
            )

    @property
    def n_bins(self) -> int:
        return num_bins(self.origin_len)

    def freqs(self) -> torch.Tensor:
        """Physical frequency of every bin in Hz."""
        return bin_frequencies(self.origin_len, self.sample_rate)

    def with_bins(self, re: torch.Tensor, im: torch.Tensor) -> "HalfSpectrum":
        return replace(self, re=re, im=im)

    def to_complex(self) -> np.ndarray:
        return self.re.detach().numpy() + 1j * self.im.detach().numpy()


def bin_frequencies(n: int, sample_rate: float) -> torch.Tensor:
    # (i * fs) / n keeps exact band edges such as 30 * 30 / 300 == 3.0
    return torch.arange(num_bins(n), dtype=DTYPE) * sample_rate / n


@lru_cache(maxsize=64)
def dft_basis(n: int) -> tuple[torch.Tensor, torch.Tensor]:
    """``(cos, sin)`` matrices of shape (n//2+1, n) for the forward DFT."""
    i = np.arange(num_bins(n))[:, None]
    t = np.arange(n)[None, :]
    # reduce i*t mod n before scaling so large products keep full precision
    angle = 2.0 * np.pi * ((i * t) % n) / n
    return torch.from_numpy(np.cos(angle)), torch.from_numpy(np.sin(angle))


@lru_cache(maxsize=64)
def idft_basis(n: int) -> tuple[torch.Tensor, torch.Tensor]:
    """``(cos, sin)`` matrices of shape (n, n//2+1) for the 1/n inverse."""
    cos, sin = dft_basis(n)
    w = torch.full((num_bins(n),), 2.0, dtype=DTYPE)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return (cos * w[:, None]).T.contiguous() / n, (sin * w[:, None]).T.contiguous() / n


def _apply_along(mat: torch.Tensor, x: torch.Tensor, dim: int) -> torch.Tensor:
    out = torch.tensordot(mat, x.movedim(dim, 0), dims=1)
    return out.movedim(0, dim)


def rdft(x, sample_rate: float = 1.0, dim: int = 0) -> HalfSpectrum:
    """Unnormalised DFT of a real tensor along ``dim``."""
    x = as_tensor(x)
    dim = dim % x.ndim
    n = x.shape[dim]
    if n < 2:
        raise ValueError(f"time axis must have length >= 2, got {n}")
    cos, sin = dft_basis(n)
    re = _apply_along(cos, x, dim)
    im = -_apply_along(sin, x, dim)
    return HalfSpectrum(re, im, n, float(sample_rate), dim)


def irdft(spec: HalfSpectrum, check: bool = True, tol: float = 1e-9) -> torch.Tensor:
    """Inverse of :func:`rdft`, expanding the half spectrum by conjugate symmetry.

    Only the DC and (even-length) Nyquist bins can carry an imaginary part
    that has no conjugate partner; it would surface as an imaginary residue in
    the output. With ``check`` the residue is bounded by ``tol`` relative to the
    signal scale, otherwise :class:`SymmetryError` is raised.
    """
    n = spec.origin_len
    icos, isin = idft_basis(n)
    x = _apply_along(icos, spec.re, spec.dim) - _apply_along(isin, spec.im, spec.dim)
    if check:
        im0 = spec.im.detach().select(spec.dim, 0)
        resid = im0.abs()
        if n % 2 == 0:
            im_nyq = spec.im.detach().select(spec.dim, spec.n_bins - 1)
            resid = torch.maximum((im0 + im_nyq).abs(), (im0 - im_nyq).abs())
        scale = max(1.0, float(x.detach().abs().max())) if x.numel() else 1.0
        worst = float(resid.max()) / n if resid.numel() else 0.0
        if worst > tol * scale:
            raise SymmetryError(f"imaginary residue {worst:.3e} exceeds {tol:g} x signal scale {scale:.3e}")
    return x


def complex_mul(a_re, a_im, b_re, b_im):
    """``(a_re + j a_im)(b_re + j b_im)`` as a ``(re, im)`` pair, elementwise."""
    return a_re * b_re - a_im * b_im, a_re * b_im + a_im * b_re


def amplitude_phase(spec: HalfSpectrum) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-bin magnitude and phase; the phase of an all-zero bin is 0."""
    return torch.hypot(spec.re, spec.im), torch.atan2(spec.im, spec.re)


def circular_convolve(m, z) -> torch.Tensor:
    """Direct O(T^2) circular convolution along axis 0 (test oracle)."""
    m, z = as_tensor(m), as_tensor(z)
    if m.shape != z.shape:
        raise ValueError(f"length mismatch: {tuple(m.shape)} vs {tuple(z.shape)}")
    n = m.shape[0]
    v = torch.arange(n)
    idx = (v[:, None] - v[None, :]) % n
    # out[v] = sum_u m[u] * z[(v - u) mod n]
    return (m.unsqueeze(0) * z[idx]).sum(1)


def full_spectrum(spec: HalfSpectrum) -> np.ndarray:
    """Length-T complex spectrum rebuilt by conjugate symmetry (1-D only)."""
    if spec.re.ndim != 1:
        raise ValueError("full_spectrum expects a 1-D half spectrum")
    half = spec.to_complex()
    n = spec.origin_len
    tail = np.conj(half[1 : n - n // 2][::-1])
    return np.concatenate([half, tail])


def parseval_energy(spec: HalfSpectrum) -> float:
    """``(1/T) * sum |X[i]|^2`` over the full symmetric spectrum (1-D only)."""
    full = full_spectrum(spec)
    return float(np.sum(np.abs(full) ** 2) / spec.origin_len)


__all__ = [
    "DTYPE",
    "HalfSpectrum",
    "amplitude_phase",
    "as_tensor",
    "bin_frequencies",
    "circular_convolve",
    "complex_mul",
    "dft_basis",
    "full_spectrum",
    "idft_basis",
    "irdft",
    "num_bins",
    "parseval_energy",
    "rdft",
]



class _ReluPatterns:
    """Activation patterns recorded by :func:`frozen_relu`; inactive when ``masks`` is None."""

    def __init__(self):
        self.masks = None
        self.recording = False
        self.cursor = 0


_RELU = _ReluPatterns()


def relu(x: torch.Tensor) -> torch.Tensor:
    """``max(x, 0)``, or ``x`` times a recorded 0/1 pattern inside :func:`frozen_relu`."""
    st = _RELU
    if st.masks is None:
        return torch.relu(x)
    if st.recording:
        mask = (x > 0).to(x.dtype)
        st.masks.append(mask)
        return x * mask
    mask = st.masks[st.cursor]
    st.cursor += 1
    return x * mask


@contextmanager
def frozen_relu():
    """Record ReLU patterns on the first forward pass and replay them afterwards.

    Yields a callable that ends recording and rewinds the replay cursor; call
    it before every later forward pass. The frozen function is linear where
    the ReLU was piecewise linear, and its gradient at the recorded point is
    the ReLU gradient, so finite differences cannot straddle a kink.
    """
    st = _RELU
    st.masks, st.recording, st.cursor = [], True, 0

    def rewind():
        st.recording, st.cursor = False, 0

    try:
        yield rewind
    finally:
        st.masks, st.recording, st.cursor = None, False, 0
