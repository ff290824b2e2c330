"""Command-line entry point: ``freqphys {gen,train,denoise,eval,check,experiment}``.

Exit codes: 0 success, 1 a property check failed, 2 usage or input error.
Every command is deterministic given its flags.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .data import SynthSpec, load_dataset, make_dataset, read_manifest, save_dataset
from .diffusion import make_schedule, sample
from .errors import FreqPhysError, ParseError
from .fileio import load_tensor, read_signal_csv, write_signal_csv
from .metrics import EvalReport, hr_from_spectrum
from .model import Denoiser, ModelConfig, load_checkpoint, save_checkpoint
from .numerics import amplitude_phase, bin_frequencies, rdft
from .training import make_optimizer, train

log = logging.getLogger("freqphys")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags or inputs; reported on stderr with exit code 2."""


def _set_threads():
    value = os.environ.get("FREQPHYS_THREADS")
    if value:
        try:
            n = int(value)
        except ValueError:
            raise UsageError(f"FREQPHYS_THREADS must be an integer, got {value!r}") from None
        if n < 1:
            raise UsageError("FREQPHYS_THREADS must be >= 1")
        torch.set_num_threads(n)


# -- config files -------------------------------------------------------------


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    types = dict(ModelConfig.field_types())
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}: expected 'key = value'", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ParseError(f"{source}: unknown key {key!r} (known: {', '.join(types)})", lineno)
        if key in out:
            raise ParseError(f"{source}: duplicate key {key!r}", lineno)
        try:
            out[key] = types[key](value)
        except ValueError:
            raise ParseError(f"{source}: {key} needs a {types[key].__name__}, got {value!r}", lineno) from None
    return out


def format_config(cfg: ModelConfig) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in asdict(cfg).items())


# -- gen ----------------------------------------------------------------------


def cmd_gen(args) -> int:
    base = SynthSpec(T=args.t, fs=args.fs, N=args.rois, C=args.channels,
                     hr_bpm=args.hr if args.hr is not None else 72.0,
                     drift_amp=args.drift_amp, inband_noise_std=args.inband_std,
                     drift_freq_hz=args.drift_freq if args.drift_freq is not None else 0.3,
                     roi_gain_jitter=args.gain_jitter, roi_phase_jitter=args.phase_jitter)
    base.validate()
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    hr_range = None if args.hr is not None else (args.hr_min, args.hr_max)
    drift_range = None if args.drift_freq is not None else (0.2, 0.5)
    if hr_range:
        for hr in hr_range:
            replace(base, hr_bpm=hr).validate()
    ds = make_dataset(args.count, base, seed=args.seed, hr_range=hr_range, drift_freq_range=drift_range)
    out = Path(args.out)
    save_dataset(out, ds)
    print(f"wrote {len(ds)} samples to {out}")
    if args.plot and len(ds):
        from .plotting import plot_sample

        path = plot_sample(out / "sample_0000.png", ds.x[0].mean(axis=(1, 2)), ds.cp[0].mean(axis=(1, 2)),
                           ds.y[0], ds.sample_rate, title=f"sample_0000, {ds.hr_bpm[0]:.1f} bpm")
        print(f"figure: {path}")
    return EXIT_OK


# -- train --------------------------------------------------------------------


def _load_train_data(path):
    root = Path(path)
    if not (root / "manifest.csv").is_file():
        raise UsageError(f"no dataset at {root} (missing manifest.csv)")
    ds = load_dataset(root)
    if len(ds) == 0:
        raise UsageError(f"dataset {root} is empty")
    return ds


def cmd_train(args) -> int:
    ds = _load_train_data(args.data)
    T, N, C = ds.x.shape[1:]
    if args.resume:
        model, optimizer, start = load_checkpoint(args.resume, lambda ps: make_optimizer(ps, args.lr))
        cfg = model.config
        if args.config:
            log.warning("--config ignored when resuming; the checkpoint's config is used")
    else:
        values = {"T": T, "N": N, "C": C, "sample_rate": ds.sample_rate}
        if args.config:
            cfg_path = Path(args.config)
            if not cfg_path.is_file():
                raise UsageError(f"config file {cfg_path} not found")
            values.update(parse_config(cfg_path.read_text(), str(cfg_path)))
        cfg = ModelConfig(**values)
        model, optimizer, start = Denoiser(cfg), None, 0
    if (cfg.T, cfg.N, cfg.C) != (T, N, C):
        raise UsageError(f"data has (T, N, C) = {(T, N, C)} but the model expects {(cfg.T, cfg.N, cfg.C)}")
    if abs(cfg.sample_rate - ds.sample_rate) > 1e-9:
        raise UsageError(f"data sampled at {ds.sample_rate} Hz, model configured for {cfg.sample_rate} Hz")

    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")
    sched = make_schedule(cfg.K, cfg.beta_start, cfg.beta_end)
    hist, optimizer = train(model, ds.tensors(), sched, args.steps, lr=args.lr, batch_size=args.batch_size,
                            seed=args.seed, optimizer=optimizer, start_step=start, log_path=log_path,
                            zero_condition=args.zero_condition, augment_batch=args.augment)
    step = start + args.steps
    save_checkpoint(out, model, optimizer, step=step)
    last = np.mean(hist.losses[-20:]) if hist.losses else float("nan")
    print(f"trained steps {start + 1}..{step}; mean loss of last 20 steps {last:.4f}")
    print(f"checkpoint: {out}\nlog: {log_path}")
    if args.plot and log_path.exists():
        from .plotting import plot_training

        rows = np.loadtxt(log_path, delimiter=",", skiprows=1, ndmin=2)
        if len(rows):
            print(f"figure: {plot_training(out.with_suffix('.loss.png'), rows[:, 0], rows[:, 1], rows[:, 2])}")
    return EXIT_OK


# -- denoise ------------------------------------------------------------------


def cmd_denoise(args) -> int:
    model_path = Path(args.model)
    if not model_path.is_file():
        raise UsageError(f"checkpoint {model_path} not found")
    model, _, _ = load_checkpoint(model_path)
    model.eval()
    cfg = model.config
    root = Path(args.input)
    if not (root / "manifest.csv").is_file():
        raise UsageError(f"no sample set at {root} (missing manifest.csv)")
    ids = [sid for sid, _, _ in read_manifest(root)]
    if args.steps < 1 or args.steps > cfg.K:
        raise UsageError(f"--steps must be in [1, {cfg.K}]")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sched = make_schedule(cfg.K, cfg.beta_start, cfg.beta_end)
    fs = cfg.sample_rate
    for i, sid in enumerate(ids):
        x, cp = load_tensor(root / "x" / f"{sid}.fqpt"), load_tensor(root / "cp" / f"{sid}.fqpt")
        if x.shape != (cfg.T, cfg.N, cfg.C) or cp.shape != x.shape:
            raise UsageError(f"{sid}: map shape {x.shape} does not match the checkpoint config "
                             f"{(cfg.T, cfg.N, cfg.C)}")
        if args.zero_condition:
            cp = np.zeros_like(cp)
        # one generator per sample so results do not depend on the set's order
        rng = np.random.default_rng([args.seed, i])
        pred = sample(model, torch.from_numpy(x), torch.from_numpy(cp), sched, args.steps, rng).numpy()
        write_signal_csv(out / f"{sid}.csv", pred, fs)
        amp, _ = amplitude_phase(rdft(pred, fs))
        freqs = bin_frequencies(cfg.T, fs)
        lines = ["freq_hz,amplitude"] + [f"{f:.17g},{a:.17g}" for f, a in zip(freqs.tolist(), amp.tolist())]
        (out / f"{sid}.spectrum.csv").write_text("\n".join(lines) + "\n")
        if args.plot and i < args.plot_count:
            from .plotting import plot_prediction

            gt_path = root / "y" / f"{sid}.csv"
            target = read_signal_csv(gt_path)[1] if gt_path.is_file() else None
            plot_prediction(out / f"{sid}.png", pred, fs, target, title=sid)
    print(f"denoised {len(ids)} samples into {out}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------


def _signal_files(path: Path) -> dict[str, Path]:
    if (path / "y").is_dir():
        path = path / "y"
    if not path.is_dir():
        raise UsageError(f"{path} is not a directory")
    return {p.stem: p for p in sorted(path.glob("*.csv"))
            if not p.name.endswith(".spectrum.csv") and p.name != "eval_report.csv"}


def cmd_eval(args) -> int:
    pred, gt = _signal_files(Path(args.pred)), _signal_files(Path(args.gt))
    if set(pred) != set(gt):
        only_p, only_g = sorted(set(pred) - set(gt)), sorted(set(gt) - set(pred))
        raise UsageError(f"unmatched signal files: only in --pred {only_p[:5]}, only in --gt {only_g[:5]}")
    if not pred:
        raise UsageError("no signal files to evaluate")
    ids = sorted(pred)
    hr_gt, hr_pred = [], []
    for sid in ids:
        for table, dest in ((gt, hr_gt), (pred, hr_pred)):
            _, values = read_signal_csv(table[sid])
            dest.append(hr_from_spectrum(values, args.fs, pad_factor=args.pad))
    report = EvalReport.from_pairs(ids, hr_gt, hr_pred)
    out = Path(args.out) if args.out else Path(args.pred) / "eval_report.csv"
    out.write_text(report.to_csv())
    print(report.summary())
    print(f"report: {out}")
    if args.plot:
        from .plotting import plot_hr_agreement

        fig = plot_hr_agreement(out.with_suffix(".png"), hr_gt, hr_pred, title=report.summary().splitlines()[0])
        print(f"figure: {fig}")
    return EXIT_OK


# -- check / experiment -------------------------------------------------------


def cmd_check(args) -> int:
    from .checks import format_table, run_checks

    results = run_checks(include_slow=not args.quick)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_experiment(args) -> int:
    from .experiment import DESK_CONFIG, run_experiment

    res = run_experiment(DESK_CONFIG, steps=args.steps, seed=args.seed, ddim_steps=args.ddim_steps,
                         zero_condition=args.zero_condition)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(res.report.to_csv())
    (out / "baseline.csv").write_text(res.baseline.to_csv())
    lines = ["metric,value", f"mae_bpm,{res.mae_bpm:.6f}", f"baseline_mae_bpm,{res.baseline_mae_bpm:.6f}",
             f"mean_pearson,{res.mean_pearson:.6f}", f"heldout_loss,{res.heldout_loss:.6f}",
             f"seconds,{res.seconds:.1f}"]
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    print(f"model:    {res.report.summary()}")
    print(f"baseline: {res.baseline.summary()}")
    print(f"mean pulse correlation {res.mean_pearson:.3f}; held-out loss {res.heldout_loss:.4f}")
    if args.plot:
        from .plotting import plot_hr_agreement, plot_training

        plot_hr_agreement(out / "hr_model.png", res.report.hr_gt, res.report.hr_pred, "model")
        plot_hr_agreement(out / "hr_baseline.png", res.baseline.hr_gt, res.baseline.hr_pred, "bandpass baseline")
        steps = np.arange(1, len(res.train_losses) + 1)
        plot_training(out / "loss.png", steps, np.asarray(res.train_losses))
    print(f"artifacts in {out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freqphys", description="Frequency-guided diffusion for pulse recovery.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def plot_flags(sp):
        sp.add_argument("--no-plot", dest="plot", action="store_false", help="skip the PNG figures")

    g = sub.add_parser("gen", help="generate a synthetic sample set")
    g.add_argument("--t", type=int, default=128)
    g.add_argument("--fs", type=float, default=30.0)
    g.add_argument("--rois", type=int, default=4)
    g.add_argument("--channels", type=int, default=3)
    g.add_argument("--hr", type=float, default=None, help="fixed heart rate; default draws from --hr-min..--hr-max")
    g.add_argument("--hr-min", type=float, default=60.0)
    g.add_argument("--hr-max", type=float, default=150.0)
    g.add_argument("--drift-amp", type=float, default=2.0)
    g.add_argument("--drift-freq", type=float, default=None, help="fixed drift frequency; default 0.2..0.5 Hz")
    g.add_argument("--inband-std", type=float, default=0.5)
    g.add_argument("--gain-jitter", type=float, default=0.2)
    g.add_argument("--phase-jitter", type=float, default=0.05, help="max per-ROI time shift in seconds")
    g.add_argument("--count", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    plot_flags(g)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train the denoiser on a sample set")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="key = value file of model settings")
    t.add_argument("--steps", type=int, default=1000)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", help="checkpoint to continue from (step counter and Adam state)")
    t.add_argument("--log", help="training log CSV (default: next to the checkpoint)")
    t.add_argument("--zero-condition", action="store_true", help="train with the frequency condition zeroed")
    t.add_argument("--augment", action="store_true", help="random sign flips and time reversals")
    t.add_argument("--out", required=True)
    plot_flags(t)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("denoise", help="sample pulse signals for a sample set")
    d.add_argument("--model", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--steps", type=int, default=10, help="DDIM steps")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--zero-condition", action="store_true")
    d.add_argument("--plot-count", type=int, default=4, help="figures for the first N samples")
    d.add_argument("--out", required=True)
    plot_flags(d)
    d.set_defaults(func=cmd_denoise)

    e = sub.add_parser("eval", help="heart-rate metrics of predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--fs", type=float, default=30.0)
    e.add_argument("--pad", type=int, default=1, help="zero-padding factor for the spectral HR readout")
    e.add_argument("--out", help="report CSV (default: PRED/eval_report.csv)")
    plot_flags(e)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check", help="run the numerical property suite")
    c.add_argument("--quick", action="store_true", help="skip the model gradient check")
    c.set_defaults(func=cmd_check)

    x = sub.add_parser("experiment", help="desk-scale train/sample/score run")
    x.add_argument("--steps", type=int, default=2000)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--ddim-steps", type=int, default=10)
    x.add_argument("--zero-condition", action="store_true")
    x.add_argument("--out", required=True)
    plot_flags(x)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_default_dtype(torch.float64)
    try:
        _set_threads()
        return args.func(args)
    except (UsageError, FreqPhysError, ValueError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"freqphys {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PermissionError as exc:
        print(f"freqphys {args.command}: cannot write: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
