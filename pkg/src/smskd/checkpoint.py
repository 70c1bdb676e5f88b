"""Binary checkpoint format.

Layout (little-endian)::

    b"SMSK" | u32 version=1 | u32 count
    count x ( u32 name_len | name utf-8 | u8 rank | u32 dims[rank] | u8 dtype | raw bytes )
    u32 crc32 of everything above

dtype codes: 0 = float32, 1 = float64.
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .errors import FormatError, IntegrityError, ShapeError
from .losses import AuxiliaryHeads
from .models import Model

MAGIC = b"SMSK"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}
HEAD_PREFIX = "heads/"


def encode(state: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in DTYPE_CODES:
            raise FormatError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        if arr.ndim > 255:
            raise FormatError(f"tensor {name!r}: rank {arr.ndim} exceeds 255")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(struct.pack("<B", DTYPE_CODES[dt]))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise FormatError("not a checkpoint: bad magic or file too short")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise IntegrityError(f"CRC mismatch: stored {crc:08x}, computed {zlib.crc32(body):08x}")
    r = _Reader(body)
    r.take(4, "magic")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    state: dict[str, np.ndarray] = {}
    for i in range(count):
        (n,) = r.unpack("<I", f"name length of tensor {i}")
        try:
            name = r.take(n, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"tensor {i}: name is not UTF-8") from exc
        (rank,) = r.unpack("<B", f"rank of {name!r}")
        dims = r.unpack(f"<{rank}I", f"dims of {name!r}")
        (code,) = r.unpack("<B", f"dtype of {name!r}")
        if code not in CODE_DTYPES:
            raise FormatError(f"tensor {name!r}: unknown dtype code {code}")
        dt = CODE_DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        data = np.frombuffer(r.take(size, f"data of {name!r}"), dtype=dt).reshape(dims)
        if name in state:
            raise FormatError(f"duplicate tensor name {name!r}")
        state[name] = data.astype(dt.newbyteorder("="), copy=True)
    if r.pos != len(body):
        raise FormatError(f"{len(body) - r.pos} trailing bytes after last tensor")
    return state


def save_checkpoint(path, model: Optional[Model] = None, heads: Optional[AuxiliaryHeads] = None) -> bytes:
    """Write model parameters (and auxiliary heads under ``heads/``) to ``path``; returns the bytes."""
    state: dict[str, np.ndarray] = {}
    if model is not None:
        state.update(model.state_dict())
    if heads is not None:
        state.update({HEAD_PREFIX + k: v for k, v in heads.state_dict().items()})
    blob = encode(state)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return blob


def load_checkpoint(path) -> dict[str, np.ndarray]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(buf)


def split_state(state: Mapping[str, np.ndarray]) -> tuple[dict, dict]:
    model_state = {k: v for k, v in state.items() if not k.startswith(HEAD_PREFIX)}
    head_state = {k[len(HEAD_PREFIX) :]: v for k, v in state.items() if k.startswith(HEAD_PREFIX)}
    return model_state, head_state


def restore(model: Model, state: Mapping[str, np.ndarray], heads: Optional[AuxiliaryHeads] = None) -> Model:
    """Load ``state`` into ``model`` (and ``heads``); mismatches raise ShapeError naming the tensor."""
    model_state, head_state = split_state(state)
    for name, arr in model_state.items():
        if name in model.params and arr.shape != model.params[name].shape:
            raise ShapeError(
                f"tensor {name!r}: checkpoint shape {arr.shape} does not match model shape {model.params[name].shape}"
            )
    model.load_state_dict(model_state)
    if heads is not None:
        heads.load_state_dict(head_state)
    return model
