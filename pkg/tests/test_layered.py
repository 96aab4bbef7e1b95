import numpy as np
import pytest

from sparseid import formats
from sparseid.bench import shannon_dr
from sparseid.errors import FormatError, InvalidArgument
from sparseid.layered import (
    Layer,
    LayeredCodebooks,
    LayerSpec,
    build_layers,
    layer_rates,
    load_codebooks,
    reconstruct,
    reconstruct_item,
    residual_norms,
    save_codebooks,
)
from sparseid.stc import LearningConfig, Transform, code_rate, decode

from conftest import random_codes


def specs(K, S, iters=15, seed=0):
    return [LayerSpec(S, LearningConfig(max_iterations=iters, seed=seed)) for _ in range(K)]


@pytest.fixture(scope="module")
def small_stack():
    X = np.random.default_rng(7).standard_normal((24, 300))
    return X, build_layers(X, specs(3, 4))


def test_exact_sparse_data_zero_residual(backend, rng):
    X = 2.5 * random_codes(rng, 50, 12, 3).T.astype(np.float64)
    cb = build_layers(X, [LayerSpec(3, transform=Transform.identity(12))])
    assert cb.residual_history[0] < 1e-10
    assert cb.layers[0].gain == pytest.approx(2.5)


def test_residuals_non_increasing(small_stack):
    X, cb = small_stack
    h = cb.residual_history
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert h[0] < np.linalg.norm(X)
    assert (cb.K, cb.M, cb.L, cb.N) == (3, 300, 24, 24)


def test_residual_history_matches_reconstruction(small_stack):
    X, cb = small_stack
    every = np.arange(cb.M)
    for k in range(1, cb.K + 1):
        assert np.linalg.norm(X - reconstruct(cb, every, k)) == pytest.approx(cb.residual_history[k - 1])


def test_layer_seeds_distinct(small_stack):
    _, cb = small_stack
    W = [layer.transform.matrix for layer in cb.layers]
    assert not np.allclose(W[0], W[1])


def test_reconstruct_item_level_one_is_decode(small_stack):
    _, cb = small_stack
    layer = cb.layers[0]
    for m in (0, 17, 299):
        np.testing.assert_allclose(reconstruct_item(cb, m, 1), decode(layer.codes[m], layer.transform, layer.gain))


def test_zero_column_reconstructs_to_zero():
    X = np.random.default_rng(1).standard_normal((8, 40))
    X[:, 5] = 0
    cb = build_layers(X, specs(2, 2))
    np.testing.assert_array_equal(reconstruct_item(cb, 5, 2), np.zeros(8))


def test_mean_mse_non_increasing_in_level(small_stack):
    X, cb = small_stack
    every = np.arange(cb.M)
    mse = [np.mean(np.sum((X - reconstruct(cb, every, k)) ** 2, axis=0)) for k in range(1, cb.K + 1)]
    assert all(b <= a for a, b in zip(mse, mse[1:]))


def test_markov_property(small_stack):
    _, cb = small_stack
    garbage = Layer(Transform.random_orthonormal(24, 24, seed=77),
                    -cb.layers[2].codes, 123.0, cb.layers[2].sparsity)
    mutated = LayeredCodebooks(cb.layers[:2] + (garbage,), cb.residual_history)
    idx = np.arange(0, 300, 7)
    for k in (1, 2):
        np.testing.assert_array_equal(reconstruct(mutated, idx, k), reconstruct(cb, idx, k))
    assert not np.allclose(reconstruct(mutated, idx, 3), reconstruct(cb, idx, 3))


def test_gain_perturbation_never_helps(small_stack):
    X, cb = small_stack
    R = X.copy()
    for layer in cb.layers:
        unscaled = layer.transform.pinv @ layer.codes.T
        best = np.linalg.norm(R - layer.gain * unscaled)
        for factor in (0.9, 1.1):
            assert np.linalg.norm(R - factor * layer.gain * unscaled) >= best
        R = R - layer.gain * unscaled


def test_unit_gain_option(rng):
    X = rng.standard_normal((10, 60))
    cb = build_layers(X, [LayerSpec(3, LearningConfig(max_iterations=5), fit_gain=False)])
    assert cb.layers[0].gain == 1.0


def test_paper_scale_distortion_above_bound():
    X = np.random.default_rng(0).standard_normal((128, 2000))
    cb = build_layers(X, specs(3, 16, iters=20))
    D = [r**2 / X.size for r in cb.residual_history]
    assert D[0] > D[1] > D[2]
    rate = code_rate(128, 16)
    for k, d in enumerate(D, 1):
        assert d >= shannon_dr(k * rate)


def test_residual_norms_on_training_data_match_history(small_stack):
    X, cb = small_stack
    np.testing.assert_allclose(residual_norms(cb, X), cb.residual_history, rtol=1e-12)


def test_layer_rates():
    codes = np.zeros((2, 4), dtype=np.int8)
    codes[:, 0] = 1
    cb = LayeredCodebooks((Layer(Transform.identity(4), codes, 1.0, 1),), (0.0,))
    assert layer_rates(cb) == [pytest.approx(0.75)]
    X = np.random.default_rng(3).standard_normal((8, 30))
    built = build_layers(X, [LayerSpec(2, LearningConfig(max_iterations=3)), LayerSpec(5, LearningConfig(max_iterations=3))])
    assert sum(layer_rates(built)) == pytest.approx(code_rate(8, 2) + code_rate(8, 5))


def test_validation(small_stack):
    _, cb = small_stack
    with pytest.raises(InvalidArgument):
        LayerSpec(0)
    with pytest.raises(InvalidArgument):
        build_layers(np.ones((3, 3)), [])
    with pytest.raises(InvalidArgument):
        build_layers(np.full((3, 3), np.nan), specs(1, 1))
    with pytest.raises(InvalidArgument):
        reconstruct(cb, [0], 0)
    with pytest.raises(InvalidArgument):
        reconstruct(cb, [0], 4)
    with pytest.raises(IndexError):
        reconstruct_item(cb, 300, 1)


def test_serialization_bit_exact(small_stack, tmp_path, backend):
    _, cb = small_stack
    files = save_codebooks(cb, tmp_path / "a")
    back = load_codebooks(tmp_path / "a")
    assert back.K == cb.K and back.residual_history == cb.residual_history
    for a, b in zip(cb.layers, back.layers):
        np.testing.assert_array_equal(a.codes, b.codes)
        np.testing.assert_array_equal(a.transform.matrix, b.transform.matrix)
        assert a.gain == b.gain and a.sparsity == b.sparsity
    save_codebooks(back, tmp_path / "b")
    for f in files:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_stcb_layout(backend):
    codes = np.array([[1, 0, -1, 0, 1], [0, 0, 0, -1, 0]], dtype=np.int8)
    buf = formats.dumps_codebook(codes, 2, 2, 0.5)
    assert buf[:4] == b"STCB" and buf[4] == 1 and buf[5] == 2
    assert len(buf) == 26 + 2 * 2
    assert buf[26:] == bytes([0b01001000, 0b01000000, 0b00000010, 0b00000000])
    cbf = formats.loads_codebook(buf)
    np.testing.assert_array_equal(cbf.codes, codes)
    assert (cbf.layer_index, cbf.S, cbf.gain, cbf.L, cbf.M) == (2, 2, 0.5, 5, 2)


def test_stcb_rejects_invalid_symbol_and_truncation(backend):
    buf = bytearray(formats.dumps_codebook(np.zeros((1, 4), dtype=np.int8), 1, 0, 1.0))
    buf[-1] = 0b11000000
    with pytest.raises(FormatError):
        formats.loads_codebook(bytes(buf))
    with pytest.raises(FormatError):
        formats.loads_codebook(bytes(buf[:-1]))
    with pytest.raises(FormatError):
        formats.loads_codebook(b"STCX" + bytes(buf[4:]))
