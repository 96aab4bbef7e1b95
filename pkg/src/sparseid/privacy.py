"""Ambiguization of ternary codes and public subspace selection.

Noise is written only into the zero positions of a code, so the true code
and the noise have disjoint supports and the true code can be read back by
anyone holding the clean codebook.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .errors import FormatError, InvalidArgument
from .stc import Transform, code_rate


def noise_count(fraction: float, L: int, S: int) -> int:
    """``ceil(fraction * (L - S))``, the number of noise entries for a fractional setting."""
    if not 0 <= fraction <= 1:
        raise InvalidArgument("noise fraction must lie in [0, 1]")
    return math.ceil(round(fraction * (L - S), 9))


def ambiguize_codes(codes, S_n: int, rng) -> np.ndarray:
    """Add ``S_n`` random +-1 entries to the zero positions of every row of ``codes``.

    Positions are uniform without replacement over each row's co-support and
    values are independent fair signs.
    """
    codes = np.asarray(codes, dtype=np.int8)
    if codes.ndim != 2:
        raise InvalidArgument("codes must be (M, L)")
    out = codes.copy()
    if S_n == 0 or codes.shape[0] == 0:
        return out
    if S_n < 0:
        raise InvalidArgument("S_n must be >= 0")
    free = codes.shape[1] - np.count_nonzero(codes, axis=1)
    if S_n > free.min():
        raise InvalidArgument(f"S_n={S_n} exceeds the co-support size {int(free.min())}")
    # the S_n smallest iid keys over the zero positions form a uniform subset
    keys = rng.random(codes.shape)
    keys[codes != 0] = 2.0
    pos = np.argpartition(keys, S_n - 1, axis=1)[:, :S_n]
    signs = (2 * rng.integers(0, 2, size=pos.shape) - 1).astype(np.int8)
    np.put_along_axis(out, pos, signs, axis=1)
    return out


def ambiguize_code(u, S_n: int, rng) -> np.ndarray:
    u = np.asarray(u, dtype=np.int8)
    return ambiguize_codes(u[None, :], S_n, rng)[0]


def ambiguize_query(b, S_nq: int, rng) -> np.ndarray:
    """Client-side ambiguization; identical mechanics to :func:`ambiguize_code`, full length."""
    return ambiguize_code(b, S_nq, rng)


def make_selection(L: int, L_p: int, permutation_seed) -> np.ndarray:
    """Sorted uniformly random subset of ``L_p`` coordinates out of ``L``."""
    if not 1 <= L_p <= L:
        raise InvalidArgument(f"L_p={L_p} outside [1, {L}]")
    perm = np.random.default_rng(permutation_seed).permutation(L)
    return np.sort(perm[:L_p]).astype(np.int64)


def select_subspace(u, selection) -> np.ndarray:
    """Restrict a code (or the rows of a codebook) to the coordinates in ``selection``."""
    u = np.asarray(u)
    sel = np.asarray(selection, dtype=np.int64)
    L = u.shape[-1]
    if sel.ndim != 1 or sel.size == 0:
        raise InvalidArgument("selection must be a non-empty 1-D index list")
    if sel.min() < 0 or sel.max() >= L:
        raise IndexError("selection index out of range")
    if np.unique(sel).size != sel.size:
        raise InvalidArgument("selection indices must be distinct")
    return u[..., sel]


@dataclass(frozen=True)
class AmbiguizationConfig:
    noise: int = 0  # S_n
    public_length: int | None = None  # L_p; None keeps full length
    permutation_seed: int = 0
    rng_seed: int = 0

    @classmethod
    def from_fraction(cls, fraction, L, S, **kw) -> "AmbiguizationConfig":
        return cls(noise=noise_count(fraction, L, S), **kw)


@dataclass(frozen=True, eq=False)
class PublicBundle:
    """What the public server holds: ambiguized codes, the shared transform and the selection."""

    codes: np.ndarray  # (M, L_p) int8
    transform: Transform
    selection: np.ndarray
    nominal_support: int

    @property
    def L(self) -> int:
        return self.transform.rows

    @property
    def L_p(self) -> int:
        return int(self.selection.size)

    @property
    def M(self) -> int:
        return self.codes.shape[0]

    @property
    def rate(self) -> float:
        """Bits per public code entry at the nominal support."""
        return code_rate(self.L_p, self.nominal_support)

    def save(self, directory) -> list:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = {
            d / "codebook.stcb": formats.dumps_codebook(self.codes, 1, self.nominal_support, 1.0),
            d / "transform.sttf": formats.dumps_transform(self.transform),
            d / "selection.stsl": formats.dumps_selection(self.L, self.selection),
        }
        for path, data in files.items():
            formats.write_bytes(path, data)
        return list(files)

    @classmethod
    def load(cls, directory) -> "PublicBundle":
        d = Path(directory)
        cbf = formats.loads_codebook(formats.read_bytes(d / "codebook.stcb"))
        W = formats.loads_transform(formats.read_bytes(d / "transform.sttf"))
        L, sel = formats.loads_selection(formats.read_bytes(d / "selection.stsl"))
        if L != W.rows or sel.size != cbf.L:
            raise FormatError("public bundle files disagree on L / L_p")
        cbf.codes.setflags(write=False)
        return cls(cbf.codes, W, sel, cbf.S)


def ambiguize_codebook(codes, cfg: AmbiguizationConfig, transform: Transform, sparsity=None) -> PublicBundle:
    """Ambiguize every code with its own noise, then keep one shared coordinate subset.

    Args:
        codes: clean ``(M, L)`` codebook.
        cfg: noise count, public length and the two seeds.
        transform: the layer-1 transform, shipped to clients as-is.
        sparsity: clean sparsity ``S_x``; defaults to the largest support found.
    """
    codes = np.asarray(codes, dtype=np.int8)
    M, L = codes.shape
    L_p = L if cfg.public_length is None else cfg.public_length
    selection = make_selection(L, L_p, cfg.permutation_seed)
    noisy = ambiguize_codes(codes, cfg.noise, np.random.default_rng(cfg.rng_seed))
    public = np.ascontiguousarray(select_subspace(noisy, selection))
    public.setflags(write=False)
    if sparsity is None:
        sparsity = int(np.count_nonzero(codes, axis=1).max()) if M else 0
    nominal = min(L_p, round((sparsity + cfg.noise) * L_p / L))
    return PublicBundle(public, transform, selection, nominal)
