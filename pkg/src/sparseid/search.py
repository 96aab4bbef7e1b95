"""Support-intersection scoring of ternary codes and candidate-list extraction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidArgument

PUBLIC = "public"


@dataclass(frozen=True)
class ScorePair:
    sim: int
    dis: int

    @property
    def nu(self) -> float:
        total = self.sim + self.dis
        return self.sim / total if total else 0.0


def normalized_similarity(sim, dis) -> np.ndarray:
    """``sim / (sim + dis)`` with ``0/0 -> 0``."""
    sim = np.asarray(sim, dtype=np.float64)
    total = sim + np.asarray(dis, dtype=np.float64)
    return np.divide(sim, total, out=np.zeros_like(sim), where=total > 0)


def score(u, b) -> ScorePair:
    """Sim = |u+ . b+|_1 + |u- . b-|_1 and Dis = |u+ . b-|_1 + |u- . b+|_1."""
    u = np.asarray(u, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if u.shape != b.shape:
        raise InvalidArgument(f"length mismatch {u.shape} vs {b.shape}")
    up, un = np.maximum(u, 0), np.maximum(-u, 0)
    bp, bn = np.maximum(b, 0), np.maximum(-b, 0)
    return ScorePair(int(up @ bp + un @ bn), int(up @ bn + un @ bp))


@dataclass(frozen=True, eq=False)
class CandidateList:
    """Ordered candidates from one search stage.

    Public lists carry normalized similarities (descending); private lists
    carry distances (ascending).
    """

    indices: np.ndarray
    scores: np.ndarray
    stage: str
    rule: str
    truncated: bool = False

    def __len__(self):
        return int(self.indices.size)

    def __contains__(self, m):
        return bool(np.any(self.indices == m))

    def as_set(self) -> set:
        return set(int(i) for i in self.indices)


class InvertedIndex:
    """Posting lists per (position, sign) over a ternary codebook.

    Stored CSR-style: ``postings[sign][offsets[sign][l]:offsets[sign][l + 1]]``
    are the ascending item ids whose code has that signed entry at ``l``.
    """

    def __init__(self, codes):
        codes = np.asarray(codes, dtype=np.int8)
        if codes.ndim != 2:
            raise InvalidArgument("codes must be (M, L)")
        self.M, self.L = codes.shape
        self.postings, self.offsets = {}, {}
        for sign in (1, -1):
            pos, items = np.nonzero(codes.T == sign)  # sorted by position, then item
            self.postings[sign] = items.astype(np.int64)
            self.offsets[sign] = np.concatenate(([0], np.cumsum(np.bincount(pos, minlength=self.L))))

    @property
    def total_postings(self) -> int:
        return int(self.postings[1].size + self.postings[-1].size)

    def posting(self, position: int, sign: int) -> np.ndarray:
        o = self.offsets[sign]
        return self.postings[sign][o[position]:o[position + 1]]

    def query(self, b):
        b = np.asarray(b, dtype=np.int8)
        if b.shape != (self.L,):
            raise InvalidArgument(f"query length {b.shape} does not match index length {self.L}")
        hits = {True: [], False: []}
        for pos in np.flatnonzero(b):
            s = int(b[pos])
            hits[True].append(self.posting(pos, s))
            hits[False].append(self.posting(pos, -s))
        sim, dis = (
            np.bincount(np.concatenate(hits[flag]), minlength=self.M).astype(np.int64)
            if hits[flag]
            else np.zeros(self.M, dtype=np.int64)
            for flag in (True, False)
        )
        return sim, dis


def build_index(codes) -> InvertedIndex:
    return InvertedIndex(codes)


def query_index(idx: InvertedIndex, b):
    """``(sim, dis)`` arrays over all items, equal to brute-force scoring."""
    return idx.query(b)


def score_all(codebook, b):
    """``(sim, dis)`` of ``b`` against every item of a codebook array or an :class:`InvertedIndex`."""
    if isinstance(codebook, InvertedIndex):
        return codebook.query(b)
    codes = np.asarray(codebook, dtype=np.int8)
    b = np.asarray(b, dtype=np.int8)
    if codes.ndim != 2 or b.shape != (codes.shape[1],):
        raise InvalidArgument("query length does not match codebook")
    return kernels.score_codebook(codes, b)


def _rank(sim, dis):
    nu = normalized_similarity(sim, dis)
    order = np.lexsort((np.arange(sim.size), -sim, -nu))
    return order, nu


def top_gamma(codebook, b, gamma: int) -> CandidateList:
    """The ``gamma`` items with largest nu; ties by larger sim, then lower index."""
    if gamma < 1:
        raise InvalidArgument("gamma must be >= 1")
    sim, dis = score_all(codebook, b)
    order, nu = _rank(sim, dis)
    truncated = gamma > sim.size
    keep = order[:gamma]
    return CandidateList(keep, nu[keep], PUBLIC, f"top-gamma({gamma})", truncated)


def threshold_list(codebook, b, sim_min: int, dis_max: int) -> CandidateList:
    """Items with ``sim >= sim_min`` and ``dis <= dis_max``, ordered like :func:`top_gamma`."""
    sim, dis = score_all(codebook, b)
    order, nu = _rank(sim, dis)
    ok = (sim[order] >= sim_min) & (dis[order] <= dis_max)
    keep = order[ok]
    return CandidateList(keep, nu[keep], PUBLIC, f"threshold({sim_min},{dis_max})")
