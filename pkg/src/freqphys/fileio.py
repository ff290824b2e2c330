"""Binary tensor/checkpoint formats and the signal CSV format.

Tensor file (``.fqpt``)::

    b"FQPT" | u32 version=1 | u32 rank | u32 dims[rank] | f64 payload (row-major)

Checkpoint file (``.fqpm``)::

    b"FQPM" | u32 version | config block | records until EOF

where the config block is each ``ModelConfig`` field in declaration order
(ints as i64, floats as f64) and a record is
``u32 name_len | name bytes (utf-8) | u32 rank | u32 dims[rank] | f64 payload``.
Everything is little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, FormatError, ParseError, TruncatedFileError

TENSOR_MAGIC = b"FQPT"
TENSOR_VERSION = 1
CHECKPOINT_MAGIC = b"FQPM"
CHECKPOINT_VERSION = 1
# guards against absurd headers before allocating
MAX_ELEMENTS = 1 << 32

_U32 = struct.Struct("<I")


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"{self.path}: truncated at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def unpack(self, fmt: str):
        st = struct.Struct(fmt)
        return st.unpack(self.take(st.size))

    @property
    def at_end(self) -> bool:
        return self.pos >= len(self.buf)


def _to_array(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    # np.ascontiguousarray would promote 0-d input to 1-d
    return np.array(x, dtype="<f8", order="C", copy=True)


def _pack_array(arr: np.ndarray) -> bytes:
    if arr.ndim == 0:
        raise FormatError("zero-rank tensors are not representable")
    head = _U32.pack(arr.ndim) + b"".join(_U32.pack(d) for d in arr.shape)
    return head + arr.tobytes(order="C")


def _read_array(r: _Reader) -> np.ndarray:
    rank = r.u32()
    if rank == 0:
        raise FormatError(f"{r.path}: zero-rank tensor")
    if rank > 32:
        raise FormatError(f"{r.path}: rank {rank} too large")
    dims = [r.u32() for _ in range(rank)]
    count = 1
    for d in dims:
        count *= d
        if count > MAX_ELEMENTS:
            raise FormatError(f"{r.path}: dimensions {dims} overflow")
    payload = r.take(8 * count)
    return np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)


def _check_magic(r: _Reader, magic: bytes) -> int:
    got = r.take(4)
    if got != magic:
        raise BadMagicError(f"{r.path}: bad magic {got!r}, expected {magic!r}")
    return r.u32()


def save_tensor(path, tensor) -> None:
    arr = _to_array(tensor)
    data = TENSOR_MAGIC + _U32.pack(TENSOR_VERSION) + _pack_array(arr)
    Path(path).write_bytes(data)


def load_tensor(path) -> np.ndarray:
    r = _Reader(Path(path).read_bytes(), path)
    version = _check_magic(r, TENSOR_MAGIC)
    if version != TENSOR_VERSION:
        raise FormatError(f"{path}: unsupported tensor version {version}")
    arr = _read_array(r)
    if not r.at_end:
        raise FormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return arr


def write_checkpoint(path, config_fields: list[tuple[str, object]], tensors: dict) -> None:
    """``config_fields`` is an ordered list of (name, int|float) pairs."""
    parts = [CHECKPOINT_MAGIC, _U32.pack(CHECKPOINT_VERSION)]
    for _, value in config_fields:
        parts.append(struct.pack("<q", value) if isinstance(value, int) else struct.pack("<d", value))
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)) + raw + _pack_array(_to_array(t)))
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path, config_types: list[tuple[str, type]]):
    """Return ``(config_dict, {name: array})``."""
    r = _Reader(Path(path).read_bytes(), path)
    version = _check_magic(r, CHECKPOINT_MAGIC)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    config = {}
    for name, typ in config_types:
        (config[name],) = r.unpack("<q" if typ is int else "<d")
    tensors = {}
    while not r.at_end:
        n = r.u32()
        name = r.take(n).decode("utf-8")
        tensors[name] = _read_array(r)
    return config, tensors


def write_signal_csv(path, values, sample_rate: float) -> None:
    values = np.asarray(values, dtype=np.float64)
    lines = ["t,value"]
    lines += [f"{i / sample_rate:.17g},{v:.17g}" for i, v in enumerate(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_signal_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(t, values)``; raises :class:`ParseError` with line numbers."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "t,value":
        raise ParseError(f"{path}: expected header 't,value'", line=1)
    ts, vs = [], []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != 2:
            raise ParseError(f"{path}: expected 2 cells, got {len(cells)}", line=lineno)
        try:
            t, v = float(cells[0]), float(cells[1])
        except ValueError:
            raise ParseError(f"{path}: non-numeric cell in {line!r}", line=lineno) from None
        if not (np.isfinite(t) and np.isfinite(v)):
            raise ParseError(f"{path}: non-finite value", line=lineno)
        ts.append(t)
        vs.append(v)
    if not vs:
        raise FormatError(f"{path}: empty signal")
    return np.array(ts), np.array(vs)
