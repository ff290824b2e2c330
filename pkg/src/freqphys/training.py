"""Loss, gradient verification, Adam training loop.

Gradients come from torch autograd in float64. Two places need care:
the DFT is a real matrix product, so its backward is the adjoint matrix; the
hard spectrum selection is differentiated through its sigmoid surrogate
(see :func:`freqphys.pfd.frozen_ste` for how that is checked). Gradient
checks also freeze ReLU patterns so a probe cannot cross a kink.
"""

from __future__ import annotations

import logging
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .diffusion import NoiseSchedule
from .errors import DegenerateSignalError
from .numerics import DTYPE, as_tensor, frozen_relu, rdft
from .pfd import frozen_ste

log = logging.getLogger(__name__)

DEGENERATE_VAR = 1e-24


def pearson(a, b) -> torch.Tensor:
    """Centered correlation along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.shape[-1] < 2:
        raise ValueError("pearson needs at least 2 samples")
    ac = a - a.mean(-1, keepdim=True)
    bc = b - b.mean(-1, keepdim=True)
    saa, sbb = (ac * ac).sum(-1), (bc * bc).sum(-1)
    if bool((saa.detach() <= DEGENERATE_VAR).any() | (sbb.detach() <= DEGENERATE_VAR).any()):
        raise DegenerateSignalError("constant signal: correlation undefined")
    return (ac * bc).sum(-1) / torch.sqrt(saa * sbb)


def spectral_mse(y_hat, y0) -> torch.Tensor:
    """Mean over half-spectrum bins of ``|F(y_hat) - F(y0)|^2``."""
    d = rdft(as_tensor(y_hat) - as_tensor(y0), dim=-1)
    return (d.re * d.re + d.im * d.im).mean(-1)


def loss_per_sample(y_hat, y0) -> torch.Tensor:
    return (1.0 - pearson(y_hat, y0)) + spectral_mse(y_hat, y0)


def loss(y_hat, y0) -> torch.Tensor:
    """Correlation plus spectral loss, averaged over any leading batch axes."""
    return loss_per_sample(y_hat, y0).mean()


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    coords_checked: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


# central differences cannot resolve derivatives below about eps * |f| / step
ROUNDOFF_SAFETY = 1e5


def grad_check(f, params, step: float = 1e-5, coords: int = 64, rng=None, floor: float | None = None,
               module=None) -> GradCheckResult:
    """Compare autograd gradients of the scalar ``f()`` with central differences.

    ``params`` is a dict ``name -> tensor requiring grad`` (or an iterable of
    pairs). At most ``coords`` random coordinates per tensor are probed; the
    relative error is ``|g - fd| / max(|g|, |fd|, floor)``. The default floor
    is the roundoff resolution of the difference quotient scaled by
    ``ROUNDOFF_SAFETY``, so derivatives that are exactly zero (for example
    parameters the output normalisation cancels) are compared in absolute
    terms at that resolution. If ``module`` is
    given, selection masks inside it are frozen at the unperturbed point so the
    differences are taken of the straight-through surrogate. ReLU activation
    patterns are always frozen at the unperturbed point.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    named = list(params.items()) if isinstance(params, dict) else list(params)
    tensors = [p for _, p in named]

    with frozen_ste(module) if module is not None else nullcontext(), frozen_relu() as rewind:
        value = f()
        rewind()
        grads = torch.autograd.grad(value, tensors, allow_unused=True)
        if floor is None:
            floor = max(1e-12, ROUNDOFF_SAFETY * np.finfo(np.float64).eps * abs(value.item()) / step)
        result = GradCheckResult(0.0)
        with torch.no_grad():
            for (name, p), g in zip(named, grads):
                g = torch.zeros_like(p) if g is None else g
                flat, gflat = p.view(-1), g.reshape(-1)
                idx = np.arange(flat.numel())
                if flat.numel() > coords:
                    idx = rng.choice(flat.numel(), size=coords, replace=False)
                worst = 0.0
                for i in idx:
                    orig = float(flat[i])
                    flat[i] = orig + step
                    rewind()
                    fp = float(f())
                    flat[i] = orig - step
                    rewind()
                    fm = float(f())
                    flat[i] = orig
                    fd = (fp - fm) / (2 * step)
                    an = float(gflat[i])
                    err = abs(an - fd) / max(abs(an), abs(fd), floor)
                    worst = max(worst, err)
                result.per_tensor[name] = worst
                result.max_rel_error = max(result.max_rel_error, worst)
                result.coords_checked += len(idx)
    return result


def make_optimizer(params, lr: float = 1e-3) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8)


def corrupt(y0: torch.Tensor, sched: NoiseSchedule, rng: np.random.Generator):
    """Draw ``k`` uniformly in 1..K and eps per row; return ``(y_k, k, eps)``."""
    B = y0.shape[0]
    k = rng.integers(1, sched.K + 1, size=B)
    eps = torch.from_numpy(rng.standard_normal(tuple(y0.shape)))
    ab = torch.from_numpy(sched.alpha_bar[k]).to(DTYPE)[:, None]
    return torch.sqrt(ab) * y0 + torch.sqrt(1.0 - ab) * eps, torch.from_numpy(k), eps


def augment(x, cp, y0, rng: np.random.Generator):
    """Random sign flip and time reversal per sample.

    Both leave the synthetic distribution unchanged (random pulse and drift
    phases, stationary noise) and commute with the bandpass, so ``cp`` stays
    the condition of ``x``.
    """
    B = x.shape[0]
    sign = torch.from_numpy(rng.choice([-1.0, 1.0], size=B))
    flip = torch.from_numpy(rng.random(B) < 0.5)
    x, cp, y0 = (sign.view(-1, *[1] * (t.ndim - 1)) * t for t in (x, cp, y0))
    x = torch.where(flip.view(-1, 1, 1, 1), x.flip(1), x)
    cp = torch.where(flip.view(-1, 1, 1, 1), cp.flip(1), cp)
    y0 = torch.where(flip.view(-1, 1), y0.flip(1), y0)
    return x, cp, y0


def train_step(model, batch, sched: NoiseSchedule, optimizer, rng: np.random.Generator,
               zero_condition: bool = False, augment_batch: bool = False) -> float:
    """One Adam update on a batch ``(x, cp, y0)`` with leading batch axis."""
    x, cp, y0 = (as_tensor(t) for t in batch)
    if augment_batch:
        x, cp, y0 = augment(x, cp, y0, rng)
    var = y0.var(-1, unbiased=False)
    keep = var > DEGENERATE_VAR
    if not bool(keep.all()):
        log.warning("skipping %d degenerate target(s) in batch", int((~keep).sum()))
        x, cp, y0 = x[keep], cp[keep], y0[keep]
    if y0.shape[0] == 0:
        return float("nan")
    if zero_condition:
        cp = torch.zeros_like(cp)
    y_k, k, _ = corrupt(y0, sched, rng)
    optimizer.zero_grad(set_to_none=True)
    value = loss(model(y_k, x, cp, k), y0)
    value.backward()
    optimizer.step()
    return value.item()


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


def train(model, dataset, sched: NoiseSchedule, steps: int, lr: float = 1e-3, batch_size: int = 8,
          seed: int = 0, optimizer=None, start_step: int = 0, log_path=None,
          zero_condition: bool = False, augment_batch: bool = False) -> tuple[TrainLog, torch.optim.Optimizer]:
    """Run ``steps`` updates on ``dataset = (x, cp, y0)`` stacked tensors.

    Appends ``step,loss,tau,lr`` lines to ``log_path`` when given (``tau`` is
    the mean threshold over layers).
    """
    x, cp, y0 = (as_tensor(t) for t in dataset)
    n = x.shape[0]
    rng = np.random.default_rng(seed + start_step)
    optimizer = make_optimizer(model.parameters(), lr) if optimizer is None else optimizer
    for group in optimizer.param_groups:
        group["lr"] = lr
    out = TrainLog()
    fh = None
    if log_path is not None:
        path = Path(log_path)
        new = not path.exists()
        fh = path.open("a")
        if new:
            fh.write("step,loss,tau,lr\n")
    try:
        for s in range(start_step + 1, start_step + steps + 1):
            idx = rng.choice(n, size=min(batch_size, n), replace=False)
            value = train_step(model, (x[idx], cp[idx], y0[idx]), sched, optimizer, rng, zero_condition,
                               augment_batch)
            out.steps.append(s)
            out.losses.append(value)
            if fh is not None:
                tau = float(np.mean(model.taus()))
                fh.write(f"{s},{value:.10g},{tau:.10g},{lr:.10g}\n")
    finally:
        if fh is not None:
            fh.close()
    return out, optimizer


@torch.no_grad()
def heldout_loss(model, dataset, sched: NoiseSchedule, seed: int = 0, draws: int = 4,
                 zero_condition: bool = False) -> float:
    """Mean loss over fixed random corruptions of every held-out sample."""
    x, cp, y0 = (as_tensor(t) for t in dataset)
    if zero_condition:
        cp = torch.zeros_like(cp)
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(draws):
        y_k, k, _ = corrupt(y0, sched, rng)
        total += float(loss(model(y_k, x, cp, k), y0))
    return total / draws
