import numpy as np
import pytest
import torch

torch.set_default_dtype(torch.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def brute_dft(x):
    """Direct double-loop DFT over bins 0..T//2 (complex numpy)."""
    x = np.asarray(x, dtype=np.float64)
    T = len(x)
    out = np.zeros(T // 2 + 1, dtype=complex)
    for i in range(T // 2 + 1):
        for t in range(T):
            out[i] += x[t] * np.exp(-2j * np.pi * i * t / T)
    return out


def brute_idft_full(full):
    T = len(full)
    out = np.zeros(T, dtype=complex)
    for t in range(T):
        for i in range(T):
            out[t] += full[i] * np.exp(2j * np.pi * i * t / T)
    return out / T


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
