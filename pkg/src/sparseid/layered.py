"""Successive-refinement stack of sparse ternary codebooks.

Layer 1 codes the data, layer ``i + 1`` codes the residual left after
layers ``1..i``. Each layer has its own learned transform and one scalar
least-squares gain.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats
from .errors import FormatError, InvalidArgument
from .stc import (
    LearningConfig,
    Transform,
    code_rate,
    encode_batch,
    fit_gain,
    learn_transform,
)


@dataclass(frozen=True)
class LayerSpec:
    """How to build one layer.

    ``learning.sparsity`` and ``learning.seed`` are overridden per layer (the
    seed becomes ``learning.seed + layer_index``). A fixed ``transform`` skips
    learning. ``fit_gain=False`` keeps the raw decoder (gain 1).
    """

    sparsity: int
    learning: LearningConfig = field(default_factory=LearningConfig)
    transform: Transform | None = None
    fit_gain: bool = True

    def __post_init__(self):
        if self.sparsity < 1:
            raise InvalidArgument("layer sparsity must be >= 1")


@dataclass(frozen=True, eq=False)
class Layer:
    transform: Transform
    codes: np.ndarray  # (M, L) int8
    gain: float
    sparsity: int


@dataclass(frozen=True, eq=False)
class LayeredCodebooks:
    layers: tuple
    residual_history: tuple

    def __post_init__(self):
        if not self.layers:
            raise InvalidArgument("need at least one layer")
        shapes = {layer.codes.shape for layer in self.layers}
        if len(shapes) != 1:
            raise InvalidArgument(f"layers disagree on (M, L): {shapes}")

    @property
    def K(self) -> int:
        return len(self.layers)

    @property
    def M(self) -> int:
        return self.layers[0].codes.shape[0]

    @property
    def L(self) -> int:
        return self.layers[0].codes.shape[1]

    @property
    def N(self) -> int:
        return self.layers[0].transform.cols

    def check_level(self, k: int) -> int:
        if not 1 <= k <= self.K:
            raise InvalidArgument(f"level {k} outside [1, {self.K}]")
        return k


def build_layers(X, specs) -> LayeredCodebooks:
    """Train and encode ``len(specs)`` layers over successive residuals of ``X`` (``(N, M)``)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise InvalidArgument("X must be a finite (N, M) matrix")
    if not specs:
        raise InvalidArgument("specs must be non-empty")
    R = X.copy()
    layers, history = [], []
    for i, spec in enumerate(specs):
        W = spec.transform
        if W is None:
            cfg = replace(spec.learning, sparsity=spec.sparsity, seed=spec.learning.seed + i)
            W = learn_transform(R, cfg).transform
        codes = encode_batch(R, W, spec.sparsity)
        unscaled = W.pinv @ codes.T
        gain = fit_gain(R, unscaled) if spec.fit_gain else 1.0
        R = R - gain * unscaled
        codes.setflags(write=False)
        layers.append(Layer(W, codes, gain, spec.sparsity))
        history.append(float(np.linalg.norm(R)))
    return LayeredCodebooks(tuple(layers), tuple(history))


def residual_norms(cb: LayeredCodebooks, X) -> list:
    """Frobenius residual norms of new data ``X`` coded by the trained layers.

    Transforms, sparsities and gains stay as trained, so this measures the
    codec on data it was not fitted to.
    """
    R = np.array(X, dtype=np.float64)
    norms = []
    for layer in cb.layers:
        codes = encode_batch(R, layer.transform, layer.sparsity)
        R -= layer.gain * (layer.transform.pinv @ codes.T)
        norms.append(float(np.linalg.norm(R)))
    return norms


def reconstruct(cb: LayeredCodebooks, indices, level: int) -> np.ndarray:
    """Reconstructions of items ``indices`` from layers ``1..level``, shape ``(N, len(indices))``."""
    cb.check_level(level)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= cb.M):
        raise IndexError("item index out of range")
    out = np.zeros((cb.N, idx.size))
    for layer in cb.layers[:level]:
        out += layer.gain * (layer.transform.pinv @ layer.codes[idx].T)
    return out


def reconstruct_item(cb: LayeredCodebooks, m: int, level: int) -> np.ndarray:
    return reconstruct(cb, [m], level)[:, 0]


def layer_rates(cb: LayeredCodebooks) -> list:
    return [code_rate(cb.L, layer.sparsity) for layer in cb.layers]


def save_codebooks(cb: LayeredCodebooks, directory) -> list:
    """Write ``layer_<i>.stcb`` and ``layer_<i>.sttf`` per layer plus ``layers.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for i, layer in enumerate(cb.layers, 1):
        stcb, sttf = d / f"layer_{i}.stcb", d / f"layer_{i}.sttf"
        formats.write_bytes(stcb, formats.dumps_codebook(layer.codes, i, layer.sparsity, layer.gain))
        formats.write_bytes(sttf, formats.dumps_transform(layer.transform))
        written += [stcb, sttf]
    manifest = {
        "K": cb.K,
        "pinv_policies": [layer.transform.pinv_policy for layer in cb.layers],
        "residual_history": list(cb.residual_history),
    }
    path = d / "layers.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return written + [path]


def load_codebooks(directory) -> LayeredCodebooks:
    d = Path(directory)
    manifest = json.loads((d / "layers.json").read_text())
    layers = []
    for i in range(1, manifest["K"] + 1):
        cbf = formats.loads_codebook(formats.read_bytes(d / f"layer_{i}.stcb"))
        if cbf.layer_index != i:
            raise FormatError(f"layer_{i}.stcb declares layer {cbf.layer_index}")
        W = formats.loads_transform(
            formats.read_bytes(d / f"layer_{i}.sttf"), manifest["pinv_policies"][i - 1]
        )
        cbf.codes.setflags(write=False)
        layers.append(Layer(W, cbf.codes, cbf.gain, cbf.S))
    return LayeredCodebooks(tuple(layers), tuple(manifest["residual_history"]))
