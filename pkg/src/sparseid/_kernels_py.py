"""Pure numpy implementations of the hot kernels.

Same signatures and results as the compiled ``_kernels`` module; used when
the extension is not built or ``SPARSEID_PURE_PYTHON`` is set.
"""
import numpy as np


def support_mask(F, S):
    """Boolean mask of the ``S`` largest-magnitude entries of each row of ``F``.

    Ties at the cutoff magnitude go to the lowest column index.
    """
    F = np.ascontiguousarray(F, dtype=np.float64)
    M, L = F.shape
    if S <= 0:
        return np.zeros((M, L), dtype=bool)
    if S >= L:
        return np.ones((M, L), dtype=bool)
    # stable sort on -|f| keeps equal magnitudes in index order
    order = np.argsort(-np.abs(F), axis=1, kind="stable")[:, :S]
    mask = np.zeros((M, L), dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def score_codebook(codes, b):
    """Similarity and dissimilarity counts of every row of ``codes`` against ``b``."""
    codes = np.ascontiguousarray(codes, dtype=np.int8)
    b = np.ascontiguousarray(b, dtype=np.int8)
    idx = np.flatnonzero(b)
    M = codes.shape[0]
    if idx.size == 0:
        return np.zeros(M, dtype=np.int64), np.zeros(M, dtype=np.int64)
    prod = codes[:, idx] * b[idx]
    sim = np.count_nonzero(prod > 0, axis=1).astype(np.int64)
    dis = np.count_nonzero(prod < 0, axis=1).astype(np.int64)
    return sim, dis


def pack_ternary(codes):
    """Pack ternary rows at 2 bits/entry (00=0, 01=+1, 10=-1), MSB first."""
    codes = np.ascontiguousarray(codes, dtype=np.int8)
    M, L = codes.shape
    sym = np.zeros((M, L + (-L) % 4), dtype=np.uint8)
    sym[:, :L][codes == 1] = 1
    sym[:, :L][codes == -1] = 2
    sym = sym.reshape(M, -1, 4)
    return (sym[..., 0] << 6) | (sym[..., 1] << 4) | (sym[..., 2] << 2) | sym[..., 3]


def unpack_ternary(packed, L):
    """Inverse of :func:`pack_ternary`; raises ``ValueError`` on symbol 11 or dirty padding."""
    packed = np.ascontiguousarray(packed, dtype=np.uint8)
    M, nbytes = packed.shape
    if nbytes != (L + 3) // 4:
        raise ValueError("packed row width does not match L")
    sym = np.stack(
        [(packed >> 6) & 3, (packed >> 4) & 3, (packed >> 2) & 3, packed & 3], axis=-1
    ).reshape(M, -1)
    if np.any(sym == 3):
        raise ValueError("invalid ternary symbol 0b11")
    if np.any(sym[:, L:]):
        raise ValueError("non-zero padding bits")
    sym = sym[:, :L]
    out = np.zeros((M, L), dtype=np.int8)
    out[sym == 1] = 1
    out[sym == 2] = -1
    return out
