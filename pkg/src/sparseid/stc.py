"""Sparse ternary encoder/decoder and sparsifying transform learning.

Vectors follow the column convention: a data matrix ``X`` is ``(N, M)`` with
one item per column, and a transform ``W`` is ``(L, N)``. Codebooks of
ternary codes are stored row-wise as ``(M, L)`` int8 arrays, which is the
layout used for scoring and for the packed file format.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import InvalidArgument, NumericError

ORTHONORMAL = "orthonormal"
SVD = "svd"
ORTHO_TOL = 1e-8
PINV_RCOND = 1e-10


@dataclass(frozen=True, eq=False)
class Transform:
    """Linear map ``W`` of shape ``(L, N)`` with its pseudo-inverse policy.

    With ``pinv_policy="orthonormal"`` the rows must be orthonormal (checked
    here) and the pseudo-inverse is ``W.T``. With ``"svd"`` the pseudo-inverse
    drops singular values below ``1e-10 * sigma_max``.
    """

    matrix: np.ndarray
    pinv_policy: str = ORTHONORMAL

    def __post_init__(self):
        W = np.array(self.matrix, dtype=np.float64, copy=True)
        if W.ndim != 2 or W.shape[0] < 1 or W.shape[1] < 1:
            raise InvalidArgument(f"transform must be a non-empty 2-D matrix, got shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise InvalidArgument("transform has non-finite entries")
        if self.pinv_policy not in (ORTHONORMAL, SVD):
            raise InvalidArgument(f"unknown pinv_policy {self.pinv_policy!r}")
        if self.pinv_policy == ORTHONORMAL and not has_orthonormal_rows(W):
            raise InvalidArgument("rows are not orthonormal; use pinv_policy='svd'")
        W.setflags(write=False)
        object.__setattr__(self, "matrix", W)

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @cached_property
    def pinv(self) -> np.ndarray:
        if self.pinv_policy == ORTHONORMAL:
            P = self.matrix.T.copy()
        else:
            P = _svd_pinv(self.matrix)
        P.setflags(write=False)
        return P

    @classmethod
    def identity(cls, n: int) -> "Transform":
        return cls(np.eye(n))

    @classmethod
    def random_orthonormal(cls, rows: int, cols: int, seed=None) -> "Transform":
        """Haar-random ``(rows, cols)`` transform with orthonormal rows (QR of a Gaussian)."""
        if rows > cols:
            raise InvalidArgument("orthonormal rows need rows <= cols")
        rng = np.random.default_rng(seed)
        Q, R = np.linalg.qr(rng.standard_normal((cols, rows)))
        Q = Q * np.where(np.diag(R) < 0, -1.0, 1.0)
        return cls(Q.T)

    @classmethod
    def detect(cls, matrix) -> "Transform":
        """Build with the orthonormal fast path when the rows allow it."""
        W = np.asarray(matrix, dtype=np.float64)
        return cls(W, ORTHONORMAL if has_orthonormal_rows(W) else SVD)


def has_orthonormal_rows(W, tol=ORTHO_TOL) -> bool:
    W = np.asarray(W, dtype=np.float64)
    if W.shape[0] > W.shape[1]:
        return False
    return bool(np.max(np.abs(W @ W.T - np.eye(W.shape[0]))) < tol)


def _svd_pinv(W):
    try:
        U, s, Vt = np.linalg.svd(W, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}") from exc
    if s.size == 0 or s[0] <= 0:
        raise NumericError("pseudo-inverse of a zero matrix")
    keep = s >= PINV_RCOND * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def _check_sparsity(S, L):
    if S < 0 or S > L:
        raise InvalidArgument(f"sparsity {S} outside [0, {L}]")


def _as_vector(f):
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1:
        raise InvalidArgument("expected a 1-D vector")
    return f


def hard_threshold(f, S: int) -> np.ndarray:
    """Keep the ``S`` largest-magnitude entries of ``f``, zero the rest.

    Ties at the cutoff magnitude keep the lowest indices.
    """
    f = _as_vector(f)
    _check_sparsity(S, f.size)
    return np.where(kernels.support_mask(f[None, :], S)[0], f, 0.0)


def ternarize(f, S: int) -> np.ndarray:
    """Sign of the hard-thresholded vector, as an int8 code over {-1, 0, +1}."""
    f = _as_vector(f)
    _check_sparsity(S, f.size)
    return ternarize_rows(f[None, :], S)[0]


def ternarize_rows(F, S: int) -> np.ndarray:
    """Row-wise :func:`ternarize` of an ``(M, L)`` array."""
    F = np.asarray(F, dtype=np.float64)
    _check_sparsity(S, F.shape[1])
    mask = kernels.support_mask(F, S)
    return (np.sign(F) * mask).astype(np.int8)


def hard_threshold_columns(F, S: int) -> np.ndarray:
    """Column-wise :func:`hard_threshold` of an ``(L, M)`` array."""
    F = np.asarray(F, dtype=np.float64)
    _check_sparsity(S, F.shape[0])
    mask = kernels.support_mask(F.T, S).T
    return np.where(mask, F, 0.0)


def support_size(u) -> int:
    return int(np.count_nonzero(u))


def encode(x, W: Transform, S: int) -> np.ndarray:
    """Ternary code of one item: ``ternarize(W @ x, S)``."""
    x = _as_vector(x)
    if x.size != W.cols:
        raise InvalidArgument(f"item has length {x.size}, transform expects {W.cols}")
    return ternarize(W.matrix @ x, S)


def encode_batch(X, W: Transform, S: int) -> np.ndarray:
    """Codes of every column of ``X`` (``(N, M)``) as an ``(M, L)`` int8 codebook."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != W.cols:
        raise InvalidArgument(f"data shape {X.shape} does not match transform cols {W.cols}")
    return ternarize_rows((W.matrix @ X).T, S)


def decode(u, W: Transform, gain: float = 1.0) -> np.ndarray:
    """Reconstruction ``gain * pinv(W) @ u``."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != W.rows:
        raise InvalidArgument(f"code length {u.shape[0]} does not match transform rows {W.rows}")
    return gain * (W.pinv @ u)


def fit_gain(target, unscaled) -> float:
    """Least-squares scalar ``a`` minimizing ``||target - a * unscaled||^2`` (0 for a zero ``unscaled``)."""
    t = np.asarray(target, dtype=np.float64).ravel()
    u = np.asarray(unscaled, dtype=np.float64).ravel()
    if t.size != u.size:
        raise InvalidArgument("length mismatch")
    den = float(u @ u)
    if den == 0.0:
        return 0.0
    return float(t @ u) / den


def code_rate(L: int, S: int) -> float:
    """Bits per code entry of an ``S``-sparse ternary code of length ``L``: ``log2(C(L,S) 2^S) / L``."""
    if L < 1:
        raise InvalidArgument("L must be positive")
    _check_sparsity(S, L)
    log_binom = math.lgamma(L + 1) - math.lgamma(S + 1) - math.lgamma(L - S + 1)
    return (log_binom / math.log(2) + S) / L


@dataclass(frozen=True)
class LearningConfig:
    sparsity: int = 1
    max_iterations: int = 50
    convergence_tol: float = 1e-6
    seed: int = 0
    n_rows: int | None = None  # L; None means square

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidArgument("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise InvalidArgument("convergence_tol must be > 0")
        if self.sparsity < 0:
            raise InvalidArgument("sparsity must be >= 0")


class LearningResult(NamedTuple):
    transform: Transform
    sparse_codes: np.ndarray
    objectives: list


def _procrustes(A, X):
    try:
        U, _, Vt = np.linalg.svd(A @ X.T, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed in transform update: {exc}") from exc
    return U @ Vt


def learn_transform(X, cfg: LearningConfig) -> LearningResult:
    """Alternating minimization of ``||W X - A||_F^2`` over orthonormal-row ``W`` and S-sparse ``A``.

    Args:
        X: training data, shape ``(N, M)``.
        cfg: sparsity, iteration budget, tolerance and seed.

    Returns:
        ``(transform, sparse_codes, objectives)`` where ``sparse_codes`` is the
        real-valued ``(L, M)`` matrix ``H_S(W X)`` and ``objectives`` holds the
        objective after initialization and after each accepted update.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise InvalidArgument("X must be (N, M) with M >= 1")
    if not np.all(np.isfinite(X)):
        raise InvalidArgument("X has non-finite entries")
    N = X.shape[0]
    L = N if cfg.n_rows is None else cfg.n_rows
    if L > N:
        raise InvalidArgument("overcomplete transforms are not supported")
    _check_sparsity(cfg.sparsity, L)

    W = Transform.random_orthonormal(L, N, cfg.seed).matrix
    F = W @ X
    A = hard_threshold_columns(F, cfg.sparsity)
    obj = float(np.sum((F - A) ** 2))
    objectives = [obj]
    for _ in range(cfg.max_iterations):
        W_new = _procrustes(A, X)
        F = W_new @ X
        A_new = hard_threshold_columns(F, cfg.sparsity)
        obj_new = float(np.sum((F - A_new) ** 2))
        if obj_new > obj:
            # only rounding noise can get here; keep the previous iterate
            break
        rel = (obj - obj_new) / obj if obj > 0 else 0.0
        W, A, obj = W_new, A_new, obj_new
        objectives.append(obj)
        if rel < cfg.convergence_tol:
            break
    return LearningResult(Transform(W), A, objectives)
