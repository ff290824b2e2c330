"""Frequency-guided conditional diffusion for recovering pulse signals from
multi-region temporal maps, with the signal-processing pieces it is built on.
"""

__version__ = "0.1.0"

from .data import MSTmap, PulseSignal, SynthSpec, gen_mstmap, gen_pulse, make_dataset, make_freq_condition
from .diffusion import NoiseSchedule, make_schedule, sample
from .errors import (
    BadMagicError,
    ConfigError,
    DegenerateSignalError,
    FormatError,
    FreqPhysError,
    InsufficientDataError,
    ParseError,
    SymmetryError,
    TruncatedFileError,
)
from .metrics import EvalReport, hr_from_spectrum, hrv_rf
from .model import Denoiser, ModelConfig, load_checkpoint, save_checkpoint
from .numerics import HalfSpectrum, irdft, rdft
from .training import grad_check, loss, pearson, train
