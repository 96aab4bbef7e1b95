"""Identification pipeline: owner preparation, client query, public search, private refinement."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AuthorizationError, InvalidArgument
from .layered import LayeredCodebooks, build_layers, load_codebooks, save_codebooks
from .privacy import (
    AmbiguizationConfig,
    PublicBundle,
    ambiguize_codebook,
    ambiguize_query,
    select_subspace,
)
from .search import CandidateList, InvertedIndex, threshold_list, top_gamma
from .stc import Transform, ternarize

TOP_GAMMA = "top_gamma"
THRESHOLD = "threshold"


@dataclass(frozen=True)
class SearchRule:
    """Public list rule: ``top_gamma`` keeps ``gamma`` items, ``threshold`` filters on sim/dis."""

    kind: str = TOP_GAMMA
    gamma: int = 10
    sim_min: int = 0
    dis_max: int = 0

    def __post_init__(self):
        if self.kind not in (TOP_GAMMA, THRESHOLD):
            raise InvalidArgument(f"unknown search rule {self.kind!r}")


@dataclass(frozen=True)
class RefinementThresholds:
    """Per-level private list rules.

    ``budgets[j]`` is a per-dimension budget; level ``j + 1`` keeps items whose
    squared distance (or distance, with ``squared=False``) to the query is at
    most ``budgets[j] * N``. ``None`` or ``inf`` disables filtering at that
    level. ``top_counts`` optionally caps each level's list length.
    """

    budgets: tuple | None = None
    squared: bool = True
    top_counts: tuple | None = None

    def __post_init__(self):
        for b in self.budgets or ():
            if b is not None and not b > 0:
                raise InvalidArgument("refinement budgets must be positive")

    def budget(self, level: int, N: int) -> float:
        if not self.budgets or level > len(self.budgets) or self.budgets[level - 1] is None:
            return math.inf
        return self.budgets[level - 1] * N

    def cap(self, level: int):
        if not self.top_counts or level > len(self.top_counts):
            return None
        return self.top_counts[level - 1]


@dataclass(frozen=True, eq=False)
class PrivateQuery:
    y: np.ndarray
    auth: int
    public_list: np.ndarray


@dataclass(eq=False)
class OwnerAssets:
    public: PublicBundle
    private: LayeredCodebooks
    config: dict = field(default_factory=dict)

    def save(self, directory) -> list:
        d = Path(directory)
        files = self.public.save(d / "public") + save_codebooks(self.private, d / "private")
        snap = d / "owner.json"
        snap.write_text(json.dumps(self.config, indent=2, sort_keys=True) + "\n")
        return files + [snap]

    @classmethod
    def load(cls, directory) -> "OwnerAssets":
        d = Path(directory)
        config = json.loads((d / "owner.json").read_text()) if (d / "owner.json").exists() else {}
        return cls(PublicBundle.load(d / "public"), load_codebooks(d / "private"), config)


def owner_prepare(X, specs, amb: AmbiguizationConfig) -> OwnerAssets:
    """Build the K private codebooks and the ambiguized public codebook from layer 1."""
    private = build_layers(X, specs)
    first = private.layers[0]
    public = ambiguize_codebook(first.codes, amb, first.transform, first.sparsity)
    config = {
        "layers": [
            {
                "sparsity": s.sparsity,
                "fit_gain": s.fit_gain,
                "learning_seed": s.learning.seed + i,
                "max_iterations": s.learning.max_iterations,
                "convergence_tol": s.learning.convergence_tol,
            }
            for i, s in enumerate(specs)
        ],
        "ambiguization": {
            "noise": amb.noise,
            "public_length": public.L_p,
            "permutation_seed": amb.permutation_seed,
            "rng_seed": amb.rng_seed,
        },
    }
    return OwnerAssets(public, private, config)


def client_query(y, transform: Transform, sparsity: int, noise: int, selection, rng):
    """Encode, ambiguize and subspace-select a query.

    Returns:
        ``(b_p, y)``: the public query code of length ``L_p`` and the raw query
        destined for the private server.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (transform.cols,):
        raise InvalidArgument(f"query length {y.shape} does not match transform cols {transform.cols}")
    b = ternarize(transform.matrix @ y, sparsity)
    b_p = select_subspace(ambiguize_query(b, noise, rng), selection)
    return np.ascontiguousarray(b_p), y


def public_search(bundle, b_p, rule: SearchRule = SearchRule()) -> CandidateList:
    """Run the public list rule against a :class:`PublicBundle` (or a prebuilt index over one)."""
    target = bundle.codes if isinstance(bundle, PublicBundle) else bundle
    L_p = target.L if isinstance(target, InvertedIndex) else target.shape[1]
    b_p = np.asarray(b_p, dtype=np.int8)
    if b_p.shape != (L_p,):
        raise InvalidArgument(f"public query length {b_p.shape} does not match L_p={L_p}")
    if rule.kind == TOP_GAMMA:
        return top_gamma(target, b_p, rule.gamma)
    return threshold_list(target, b_p, rule.sim_min, rule.dis_max)


def private_refine(cb: LayeredCodebooks, q: PrivateQuery, thresholds=RefinementThresholds()) -> list:
    """Successively filter the public list with 1..auth layer reconstructions.

    Layers deeper than ``q.auth`` are never read. Each returned list is a
    subset of the previous one, ordered by ascending distance then index.
    """
    k = int(q.auth)
    if not 1 <= k <= cb.K:
        raise AuthorizationError(f"authorization level {k} outside [1, {cb.K}]")
    y = np.asarray(q.y, dtype=np.float64)
    if y.shape != (cb.N,):
        raise InvalidArgument(f"query length {y.shape} does not match N={cb.N}")
    current = np.asarray(q.public_list, dtype=np.int64)
    if current.size and (current.min() < 0 or current.max() >= cb.M):
        raise InvalidArgument("public list index out of range")
    recon = np.zeros((cb.N, current.size))
    lists = []
    for level in range(1, k + 1):
        layer = cb.layers[level - 1]
        recon += layer.gain * (layer.transform.pinv @ layer.codes[current].T)
        dist = np.sum((y[:, None] - recon) ** 2, axis=0)
        if not thresholds.squared:
            dist = np.sqrt(dist)
        order = np.lexsort((current, dist))
        keep = order[dist[order] <= thresholds.budget(level, cb.N)]
        cap = thresholds.cap(level)
        if cap is not None:
            keep = keep[:cap]
        current, recon, dist = current[keep], recon[:, keep], dist[keep]
        lists.append(CandidateList(current, dist, f"private-{level}", "squared" if thresholds.squared else "distance"))
    return lists


def final_decision(lists):
    """Top-1 item of the deepest list, or ``None`` when it is empty."""
    deepest = lists[-1]
    return int(deepest.indices[0]) if len(deepest) else None
