"""The denoising network ``f(y_k, x, cp, k) -> y0_hat`` and its checkpoints."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn

from .crl import CrlLayer
from .errors import ConfigError, FormatError
from .fileio import read_checkpoint, write_checkpoint
from .numerics import DTYPE
from .pfd import AdaptiveSelection, pbf_mask

OUTPUT_STD_FLOOR = 1e-12


@dataclass
class ModelConfig:
    T: int = 128
    N: int = 4
    C: int = 3
    D: int = 16
    L: int = 2
    K: int = 50
    heads: int = 4
    seed: int = 0
    # the K=1000 linear schedule 1e-4..0.02 rescaled by 1000/K so that K=50 still ends near pure noise
    beta_start: float = 2e-3
    beta_end: float = 0.4
    sample_rate: float = 30.0

    def validate(self) -> "ModelConfig":
        if self.T < 8:
            raise ConfigError(f"T must be >= 8, got {self.T}")
        for name in ("N", "C", "D", "L", "K", "heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.D % self.heads:
            raise ConfigError(f"D={self.D} not divisible by heads={self.heads}")
        pbf_mask(self.T, self.sample_rate)  # raises on an empty passband
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ConfigError("need 0 < beta_start <= beta_end < 1")
        return self

    @classmethod
    def field_types(cls) -> list[tuple[str, type]]:
        return [(f.name, int if f.type in (int, "int") else float) for f in fields(cls)]


def timestep_table(K: int, dim: int) -> torch.Tensor:
    """Sinusoidal embeddings for steps 0..K, shape (K+1, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=DTYPE) / max(half, 1))
    k = torch.arange(K + 1, dtype=DTYPE)[:, None]
    table = torch.cat([torch.sin(k * freqs), torch.cos(k * freqs)], dim=1)
    if dim % 2:
        table = torch.cat([table, torch.zeros(K + 1, 1, dtype=DTYPE)], dim=1)
    return table


class Denoiser(nn.Module):
    """Embeddings, ``L`` frequency-guided layers, ROI-pooled linear head.

    Inputs: ``y_k`` (B, T), ``x`` and ``cp`` (B, T, N, C), ``k`` int or (B,).
    Unbatched inputs (no leading B) are accepted and return shape (T,).
    The output is z-scored over time.
    """

    def __init__(self, config: ModelConfig, init_std: float = 0.02):
        super().__init__()
        self.config = config.validate()
        c = config
        g = torch.Generator().manual_seed(c.seed)

        def normal(*shape):
            return nn.Parameter(init_std * torch.randn(*shape, dtype=DTYPE, generator=g))

        def zeros(*shape):
            return nn.Parameter(torch.zeros(*shape, dtype=DTYPE))

        self.band = pbf_mask(c.T, c.sample_rate)
        self.embed_x_w, self.embed_x_b = normal(c.C, c.D), zeros(c.D)
        self.embed_cp_w, self.embed_cp_b = normal(c.C, c.D), zeros(c.D)
        self.embed_y_w, self.embed_y_b = normal(c.D), zeros(c.D)
        self.register_buffer("time_table", timestep_table(c.K, c.D), persistent=False)
        self.time_w = normal(c.D, c.D)
        self.layers = nn.ModuleList(CrlLayer(c.D, self.band, c.heads, generator=g) for _ in range(c.L))
        self.head_w, self.head_b = normal(c.D), zeros(1)

    def forward(self, y_k, x, cp, k) -> torch.Tensor:
        c = self.config
        y_k, x, cp = (torch.as_tensor(a, dtype=DTYPE) for a in (y_k, x, cp))
        unbatched = x.ndim == 3
        if unbatched:
            y_k, x, cp = y_k[None], x[None], cp[None]
        if x.shape[1:] != (c.T, c.N, c.C) or cp.shape != x.shape or y_k.shape != x.shape[:2]:
            raise ValueError(
                f"shape mismatch: y_k {tuple(y_k.shape)}, x {tuple(x.shape)}, cp {tuple(cp.shape)}; "
                f"config expects T={c.T}, N={c.N}, C={c.C}"
            )
        k = torch.as_tensor(k).long().reshape(-1).expand(x.shape[0])
        if int(k.min()) < 1 or int(k.max()) > c.K:
            raise ValueError(f"step k outside [1, {c.K}]")

        z = x @ self.embed_x_w + self.embed_x_b + cp @ self.embed_cp_w + self.embed_cp_b
        z = z + (y_k[..., None] * self.embed_y_w + self.embed_y_b)[:, :, None, :]
        z = z + (self.time_table[k] @ self.time_w)[:, None, None, :]
        for layer in self.layers:
            z = layer(z)
        out = z.mean(-2) @ self.head_w + self.head_b
        out = out - out.mean(-1, keepdim=True)
        std = torch.sqrt((out * out).mean(-1, keepdim=True)).clamp_min(OUTPUT_STD_FLOOR)
        out = out / std
        return out[0] if unbatched else out

    def selections(self) -> list[AdaptiveSelection]:
        return [layer.pfd.ass for layer in self.layers]

    def taus(self) -> list[float]:
        return [s.tau.item() for s in self.selections()]


def init_params(config: ModelConfig) -> Denoiser:
    """Deterministic initialisation from ``config.seed``."""
    return Denoiser(config)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def expected_parameter_count(C: int, D: int, L: int) -> int:
    """Closed form of the parameter count (FFN hidden width 2D)."""
    H = 2 * D
    embeds = 2 * (C * D + D) + (D + D) + D * D
    psm = 2 * D * D + 2 * D + 1
    attn = 3 * D * D + (D * H + H) + (H * D + D) + 4 * D
    head = D + 1
    return embeds + L * (psm + 2 * attn) + head


def save_checkpoint(path, model: Denoiser, optimizer: torch.optim.Optimizer | None = None, step: int = 0) -> None:
    """Write parameters, and optionally Adam moments plus the step counter."""
    cfg = model.config
    # scalars (the thresholds) are stored with rank 1
    tensors = {name: p.reshape(-1) if p.ndim == 0 else p for name, p in model.named_parameters()}
    tensors["meta.step"] = torch.tensor([float(step)])
    if optimizer is not None:
        names = {id(p): name for name, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                st = optimizer.state.get(p)
                if st:
                    tensors[f"adam.exp_avg.{names[id(p)]}"] = st["exp_avg"].reshape(-1)
                    tensors[f"adam.exp_avg_sq.{names[id(p)]}"] = st["exp_avg_sq"].reshape(-1)
                    tensors[f"adam.step.{names[id(p)]}"] = torch.tensor([float(st["step"])])
    write_checkpoint(path, [(k, v) for k, v in asdict(cfg).items()], tensors)


def load_checkpoint(path, optimizer_factory=None):
    """Return ``(model, optimizer_or_None, step)``.

    ``optimizer_factory(params)`` builds the optimizer whose moments are then
    restored from the file.
    """
    raw_cfg, tensors = read_checkpoint(path, ModelConfig.field_types())
    model = Denoiser(ModelConfig(**raw_cfg))
    own = dict(model.named_parameters())
    with torch.no_grad():
        for name, p in own.items():
            if name not in tensors:
                raise FormatError(f"{path}: missing tensor {name!r}")
            arr = tensors[name]
            if p.ndim == 0 and arr.shape == (1,):
                arr = arr.reshape(())  # scalars are stored with rank 1
            if tuple(arr.shape) != tuple(p.shape):
                raise FormatError(f"{path}: tensor {name!r} has shape {arr.shape}, expected {tuple(p.shape)}")
            p.copy_(torch.from_numpy(np.array(arr, copy=True)))
    unknown = [n for n in tensors if n not in own and not n.startswith(("meta.", "adam."))]
    if unknown:
        raise FormatError(f"{path}: unknown tensors {unknown}")
    step = int(tensors["meta.step"][0]) if "meta.step" in tensors else 0
    optimizer = None
    if optimizer_factory is not None:
        optimizer = optimizer_factory(model.parameters())
        for name, p in own.items():
            key = f"adam.exp_avg.{name}"
            if key in tensors:
                optimizer.state[p] = {
                    "step": torch.tensor(float(tensors[f"adam.step.{name}"][0])),
                    "exp_avg": torch.from_numpy(tensors[key].reshape(p.shape).copy()),
                    "exp_avg_sq": torch.from_numpy(tensors[f"adam.exp_avg_sq.{name}"].reshape(p.shape).copy()),
                }
    return model, optimizer, step
