"""Executable property suite run by ``freqphys check``.

Each check returns a :class:`CheckResult`; none of them raise on failure.
Functions from other modules are looked up through their module at call time
so that a patched implementation is what gets checked.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from dataclasses import replace as dc_replace

import numpy as np
import torch

from . import diffusion, fileio, metrics, numerics, training
from .model import Denoiser, ModelConfig


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _timed(name, fn) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


def check_convolution_theorem(pairs: int = 100, lengths=(8, 64, 300), seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for T in lengths:
        for _ in range(pairs):
            m, z = rng.normal(size=(2, T))
            lhs = numerics.rdft(numerics.circular_convolve(m, z))
            sm, sz = numerics.rdft(m), numerics.rdft(z)
            re, im = numerics.complex_mul(sm.re, sm.im, sz.re, sz.im)
            worst = max(worst, float(torch.max(torch.hypot(lhs.re - re, lhs.im - im))))
    return worst < 1e-9, f"max |F(m*z) - F(m)F(z)| = {worst:.2e} (< 1e-9)"


def check_round_trip(signals: int = 100, lengths=(8, 127, 300), seed: int = 1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for T in lengths:
        for _ in range(signals):
            x = rng.normal(size=T) * rng.uniform(0.1, 100)
            err = float(np.max(np.abs(numerics.irdft(numerics.rdft(x)).numpy() - x)))
            worst = max(worst, err / (1 + np.max(np.abs(x))))
    return worst < 1e-10, f"max relative round-trip error = {worst:.2e} (< 1e-10)"


def check_closed_form(trials: int = 100_000, K: int = 10, seed: int = 2):
    sched = diffusion.make_schedule(K, 1e-4, 0.2)
    rng = np.random.default_rng(seed)
    # coordinates well away from 0 so a 1% relative tolerance is far above Monte-Carlo error
    y0 = np.array([1.5, -2.0, 2.5, -1.8])
    y = np.tile(y0, (trials, 1))
    worst_mean = worst_var = 0.0
    for k in range(1, K + 1):
        y = diffusion.q_step(y, k, rng.standard_normal(y.shape), sched)
        if k in (1, 5, 10):
            ab = sched.alpha_bar[k]
            worst_mean = max(worst_mean, float(np.max(np.abs(y.mean(0) / (math.sqrt(ab) * y0) - 1))))
            worst_var = max(worst_var, float(np.max(np.abs(y.var(0) / (1 - ab) - 1))))
    ok = worst_mean < 0.01 and worst_var < 0.03
    return ok, f"recursion vs closed form: mean rel {worst_mean:.2e} (< 1%), var rel {worst_var:.2e} (< 3%)"


def check_posterior(K: int = 1000):
    sched = diffusion.make_schedule(K, 1e-4, 0.02)
    rng = np.random.default_rng(3)
    y_k, y0_hat = rng.normal(size=(2, 16))
    problems = []
    if not np.array_equal(diffusion.posterior_mean(y_k, y0_hat, 1, sched), y0_hat):
        problems.append("k=1 posterior mean differs from the prediction")
    if sched.sigma2[1] != 0.0:
        problems.append("sigma_1^2 != 0")
    for k in range(1, K + 1):
        b, a, ab, ab_prev = sched.beta[k], sched.alpha[k], sched.alpha_bar[k], sched.alpha_bar[k - 1]
        if a != 1.0 - b or ab != ab_prev * a:
            problems.append(f"schedule identity broken at k={k}")
            break
        # conditional Gaussian of y_{k-1} given y_k, from the joint law given y0
        cov = math.sqrt(a) * (1.0 - ab_prev)
        mean = math.sqrt(ab_prev) * y0_hat + cov / (1.0 - ab) * (y_k - math.sqrt(ab) * y0_hat)
        var = (1.0 - ab_prev) - cov * cov / (1.0 - ab)
        got = diffusion.posterior_mean(y_k, y0_hat, k, sched)
        if np.max(np.abs(got - mean)) > 1e-12 * (1 + np.max(np.abs(mean))):
            problems.append(f"posterior mean wrong at k={k}")
            break
        if abs(sched.sigma2[k] - var) > 1e-12:
            problems.append(f"posterior variance wrong at k={k}")
            break
    if not sched.alpha_bar[K] < 1e-4:
        problems.append(f"alpha_bar_K = {sched.alpha_bar[K]:.2e} not < 1e-4")
    return not problems, "; ".join(problems) or f"exact at k=1, identities hold, alpha_bar_{K} = {sched.alpha_bar[K]:.2e}"


GRAD_CONFIG = ModelConfig(T=16, N=2, C=2, D=8, L=1, K=10, heads=4, sample_rate=8.0)


def check_gradients(seed: int = 0, coords: int = 64):
    cfg = dc_replace(GRAD_CONFIG, seed=seed)
    rng = np.random.default_rng(seed)
    model = Denoiser(cfg, init_std=0.5)
    with torch.no_grad():
        for sel in model.selections():
            sel.tau.fill_(1.0)
    y0 = torch.from_numpy(rng.normal(size=cfg.T))
    y0 = (y0 - y0.mean()) / y0.std(unbiased=False)
    x, cp = torch.from_numpy(rng.normal(size=(2, cfg.T, cfg.N, cfg.C)))
    y_k = torch.from_numpy(rng.normal(size=cfg.T))

    def f():
        return training.loss(model(y_k, x, cp, 3), y0)

    res = training.grad_check(f, dict(model.named_parameters()), step=1e-5, coords=coords, rng=rng, module=model)
    worst = max(res.per_tensor, key=res.per_tensor.get)
    return res.passed(1e-4), (f"max rel error {res.max_rel_error:.2e} (< 1e-4) over {len(res.per_tensor)} tensors, "
                              f"{res.coords_checked} coords; worst {worst}")


def check_metrics():
    gt, pred = [70.0, 80.0], [72.0, 78.0]
    vals = (metrics.mae(gt, pred), metrics.rmse(gt, pred), metrics.sd(gt, pred), metrics.pearson_metric(gt, pred))
    ok = vals == (2.0, 2.0, 2.0, 1.0)
    rng = np.random.default_rng(4)
    for _ in range(1000):
        a, b = rng.normal(size=(2, int(rng.integers(1, 50)))) * 30
        ok &= metrics.mae(a, b) <= metrics.rmse(a, b) + 1e-12
    return ok, f"two-point (MAE, RMSE, SD, r) = {vals}; MAE <= RMSE on 1000 random vectors"


def check_formats(tmpdir):
    from pathlib import Path

    rng = np.random.default_rng(5)
    x = rng.normal(size=(16, 4, 3))
    p = Path(tmpdir) / "x.fqpt"
    fileio.save_tensor(p, x)
    ok = fileio.load_tensor(p).tobytes() == x.tobytes()
    raw = p.read_bytes()
    p.write_bytes(b"XQPT" + raw[4:])
    try:
        fileio.load_tensor(p)
        ok = False
    except fileio.BadMagicError:
        pass
    p.write_bytes(raw[:-3])
    try:
        fileio.load_tensor(p)
        ok = False
    except fileio.TruncatedFileError:
        pass
    return ok, "bit-exact tensor round trip; bad magic and truncation rejected"


def run_checks(include_slow: bool = True) -> list[CheckResult]:
    import tempfile

    results = [
        _timed("convolution theorem", check_convolution_theorem),
        _timed("DFT round trip", check_round_trip),
        _timed("diffusion closed form", check_closed_form),
        _timed("posterior algebra and schedule", check_posterior),
        _timed("metric formulas", check_metrics),
    ]
    with tempfile.TemporaryDirectory() as tmp:
        results.append(_timed("file formats", lambda: check_formats(tmp)))
    if include_slow:
        results.append(_timed("model gradients", check_gradients))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  time     detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:6.2f}s  {r.detail}")
    return "\n".join(lines)
