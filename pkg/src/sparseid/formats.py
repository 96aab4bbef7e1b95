"""Binary asset formats: STTF transforms, STCB codebooks, STSL selections.

All integers and floats are little-endian.

* STTF: ``b"STTF"``, u8 version=1, u32 L, u32 N, L*N f64 row-major.
* STCB: ``b"STCB"``, u8 version=1, u8 layer_index, u32 L, u32 M, u32 S,
  f64 gain, then M rows of 2-bit packed codes padded to a byte.
* STSL: ``b"STSL"``, u32 L, u32 L_p, L_p u32 indices (0-based).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatError
from .stc import Transform

VERSION = 1
_STTF = struct.Struct("<4sBII")
_STCB = struct.Struct("<4sBBIIId")
_STSL = struct.Struct("<4sII")


def _check_magic(buf, magic, hdr):
    if len(buf) < hdr.size:
        raise FormatError(f"truncated {magic.decode()} header")
    fields = hdr.unpack_from(buf)
    if fields[0] != magic:
        raise FormatError(f"bad magic {fields[0]!r}, expected {magic!r}")
    return fields


def dumps_transform(W: Transform) -> bytes:
    L, N = W.matrix.shape
    return _STTF.pack(b"STTF", VERSION, L, N) + W.matrix.astype("<f8").tobytes()


def loads_transform(buf: bytes, pinv_policy: str | None = None) -> Transform:
    """Parse STTF bytes; the policy is detected from the rows unless given."""
    _, version, L, N = _check_magic(buf, b"STTF", _STTF)
    if version != VERSION:
        raise FormatError(f"unsupported STTF version {version}")
    body = buf[_STTF.size:]
    if len(body) != 8 * L * N:
        raise FormatError("STTF payload length does not match L*N")
    W = np.frombuffer(body, dtype="<f8").reshape(L, N).astype(np.float64)
    if pinv_policy is None:
        return Transform.detect(W)
    return Transform(W, pinv_policy)


@dataclass(eq=False)
class CodebookFile:
    layer_index: int
    L: int
    M: int
    S: int
    gain: float
    codes: np.ndarray


def dumps_codebook(codes, layer_index: int, S: int, gain: float) -> bytes:
    codes = np.asarray(codes, dtype=np.int8)
    M, L = codes.shape
    head = _STCB.pack(b"STCB", VERSION, layer_index, L, M, S, gain)
    return head + kernels.pack_ternary(codes).tobytes()


def loads_codebook(buf: bytes) -> CodebookFile:
    _, version, layer_index, L, M, S, gain = _check_magic(buf, b"STCB", _STCB)
    if version != VERSION:
        raise FormatError(f"unsupported STCB version {version}")
    width = (L + 3) // 4
    body = buf[_STCB.size:]
    if len(body) != width * M:
        raise FormatError("STCB payload length does not match M rows")
    packed = np.frombuffer(body, dtype=np.uint8).reshape(M, width)
    try:
        codes = kernels.unpack_ternary(packed, L)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    return CodebookFile(layer_index, L, M, S, gain, codes)


def dumps_selection(L: int, selection) -> bytes:
    sel = np.asarray(selection, dtype=np.int64)
    return _STSL.pack(b"STSL", L, sel.size) + sel.astype("<u4").tobytes()


def loads_selection(buf: bytes):
    """Return ``(L, selection)``."""
    _, L, L_p = _check_magic(buf, b"STSL", _STSL)
    body = buf[_STSL.size:]
    if len(body) != 4 * L_p:
        raise FormatError("STSL payload length does not match L_p")
    sel = np.frombuffer(body, dtype="<u4").astype(np.int64)
    if sel.size and (sel.max() >= L or np.unique(sel).size != sel.size):
        raise FormatError("selection indices out of range or repeated")
    return L, sel


def write_bytes(path, data: bytes):
    Path(path).write_bytes(data)


def read_bytes(path) -> bytes:
    return Path(path).read_bytes()
