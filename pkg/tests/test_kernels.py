import numpy as np
import pytest

from sparseid import kernels
from sparseid._kernels_py import pack_ternary as py_pack

from conftest import random_codes

BACKENDS = kernels.backends()


def test_active_backend_is_listed():
    assert kernels.BACKEND in BACKENDS


def test_compiled_backend_built():
    # the editable install builds the extension; a missing one means the build silently fell back
    assert "cython" in BACKENDS


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("S", [0, 1, 3, 7, 16])
def test_support_mask_tie_heavy(name, S, rng):
    F = rng.integers(-3, 4, size=(300, 16)).astype(np.float64)
    mask = BACKENDS[name].support_mask(F, S)
    assert mask.shape == F.shape
    for f, row in zip(F, mask):
        order = sorted(range(16), key=lambda i: (-abs(f[i]), i))[:S]
        assert set(np.flatnonzero(row)) == set(order)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_support_mask_edges(name):
    impl = BACKENDS[name]
    assert impl.support_mask(np.zeros((0, 5)), 2).shape == (0, 5)
    assert impl.support_mask(np.array([[5.0]]), 1).tolist() == [[True]]
    np.testing.assert_array_equal(impl.support_mask(np.ones((2, 4)), 4), np.ones((2, 4), bool))


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_score_codebook_matches_counts(name, rng):
    codes = random_codes(rng, 200, 40, 9)
    b = random_codes(rng, 1, 40, 12)[0]
    sim, dis = BACKENDS[name].score_codebook(codes, b)
    want_sim = [(np.sign(c) == b)[b != 0].sum() for c in codes]
    want_dis = [(c == -b)[b != 0].sum() for c in codes]
    np.testing.assert_array_equal(sim, want_sim)
    np.testing.assert_array_equal(dis, want_dis)


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("L", [1, 3, 4, 5, 8, 13])
def test_pack_roundtrip(name, L, rng):
    impl = BACKENDS[name]
    codes = rng.integers(-1, 2, size=(17, L)).astype(np.int8)
    packed = impl.pack_ternary(codes)
    assert packed.shape == (17, (L + 3) // 4)
    np.testing.assert_array_equal(packed, py_pack(codes))
    np.testing.assert_array_equal(impl.unpack_ternary(packed, L), codes)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_pack_bit_order(name):
    # 00=0, 01=+1, 10=-1, first entry in the high bits
    packed = BACKENDS[name].pack_ternary(np.array([[1, -1, 0, 1, -1]], dtype=np.int8))
    assert packed.tolist() == [[0b01100001, 0b10000000]]


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_unpack_rejects_invalid_symbol_and_padding(name):
    impl = BACKENDS[name]
    with pytest.raises(ValueError):
        impl.unpack_ternary(np.array([[0b11000000]], dtype=np.uint8), 4)
    with pytest.raises(ValueError):
        impl.unpack_ternary(np.array([[0b00000001]], dtype=np.uint8), 3)
