"""Cross-domain representation learning: frequency-guided cross-attention.

Each layer derives a frequency prior ``zp`` from the latent, then fuses it
back in twice: attention across ROIs at every timestamp, then attention across
time within every ROI. In both stages the prior supplies queries and keys, and
the latent supplies values.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .numerics import DTYPE, relu
from .pfd import BandpassMask, FrequencyDenoiser

LN_EPS = 1e-5


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = LN_EPS) -> torch.Tensor:
    mean = x.mean(-1, keepdim=True)
    var = ((x - mean) ** 2).mean(-1, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gain + bias


def _normal(shape, std, generator):
    return nn.Parameter(std * torch.randn(*shape, dtype=DTYPE, generator=generator))


class CrossAttention(nn.Module):
    """Post-norm multi-head cross-attention block with a ReLU feed-forward.

    ``forward(a, b)`` attends over axis -2: queries and keys come from ``a``,
    values from ``b``, and ``b`` is the residual stream. Scores are scaled by
    ``1/sqrt(D)`` with ``D`` the full model width.
    """

    def __init__(self, dim: int, heads: int = 4, hidden: int | None = None, generator=None, init_std: float = 0.02):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        hidden = 2 * dim if hidden is None else hidden
        self.dim, self.heads = dim, heads
        self.wq = _normal((dim, dim), init_std, generator)
        self.wk = _normal((dim, dim), init_std, generator)
        self.wv = _normal((dim, dim), init_std, generator)
        self.ffn_w1 = _normal((dim, hidden), init_std, generator)
        self.ffn_b1 = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        self.ffn_w2 = _normal((hidden, dim), init_std, generator)
        self.ffn_b2 = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.norm1_gain = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.norm1_bias = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.norm2_gain = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.norm2_bias = nn.Parameter(torch.zeros(dim, dtype=DTYPE))

    def _split(self, x):
        return x.unflatten(-1, (self.heads, self.dim // self.heads)).transpose(-3, -2)

    def attention_weights(self, query_source: torch.Tensor) -> torch.Tensor:
        # scale q rather than the (S, S) score matrix
        q = self._split(query_source @ (self.wq / math.sqrt(self.dim)))
        k = self._split(query_source @ self.wk)
        return torch.softmax(q @ k.transpose(-1, -2), dim=-1)

    def attend(self, query_source: torch.Tensor, value_source: torch.Tensor) -> torch.Tensor:
        """Softmax-weighted values before the residual and norms."""
        if query_source.shape != value_source.shape:
            raise ValueError(f"shape mismatch: {tuple(query_source.shape)} vs {tuple(value_source.shape)}")
        v = self._split(value_source @ self.wv)
        out = self.attention_weights(query_source) @ v
        return out.transpose(-3, -2).flatten(-2)

    def forward(self, query_source: torch.Tensor, value_source: torch.Tensor) -> torch.Tensor:
        z = layer_norm(self.attend(query_source, value_source) + value_source, self.norm1_gain, self.norm1_bias)
        ff = relu(z @ self.ffn_w1 + self.ffn_b1) @ self.ffn_w2 + self.ffn_b2
        return layer_norm(z + ff, self.norm2_gain, self.norm2_bias)


class CrlLayer(nn.Module):
    """One denoiser layer on a latent of shape (..., T, N, D)."""

    def __init__(self, dim: int, band: BandpassMask, heads: int = 4, generator=None,
                 tau: float = 0.0, temperature: float = 1.0):
        super().__init__()
        self.pfd = FrequencyDenoiser(dim, band, generator, tau=tau, temperature=temperature)
        self.space_attn = CrossAttention(dim, heads, generator=generator)
        self.time_attn = CrossAttention(dim, heads, generator=generator)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        zp = self.pfd(z, dim=-3)
        zs = self.space_attn(zp, z)
        zt = self.time_attn(zp.transpose(-3, -2), zs.transpose(-3, -2))
        return zt.transpose(-3, -2)
