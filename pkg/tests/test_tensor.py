import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ptychodv import tensor as T
from conftest import crandn


def dft_matrix(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def brute_dft2(g):
    h, w = g.shape
    out = np.zeros_like(g, dtype=complex)
    for u in range(h):
        for v in range(w):
            for a in range(h):
                for b in range(w):
                    out[u, v] += g[a, b] * np.exp(-2j * np.pi * (u * a / h + v * b / w))
    return out / np.sqrt(h * w)


def test_constant_grid_goes_to_dc():
    g = np.full((4, 4), 2.5 + 0j)
    f = T.fft2(g)
    assert f[0, 0] == pytest.approx(4 * 2.5)
    f[0, 0] = 0
    assert np.max(np.abs(f)) < 1e-14


def test_round_trip(rng):
    g = crandn(rng, 16, 16)
    assert np.max(np.abs(T.ifft2(T.fft2(g)) - g)) <= 1e-12 * np.max(np.abs(g))


def test_matches_brute_force_dft(rng):
    g = crandn(rng, 8, 8)
    ref = brute_dft2(g)
    assert np.max(np.abs(T.fft2(g) - ref)) < 1e-10
    d = dft_matrix(8)
    assert np.max(np.abs(d @ g @ d.T - ref)) < 1e-10


def test_parseval(rng):
    g = crandn(rng, 32, 32)
    assert abs(np.linalg.norm(T.fft2(g)) - np.linalg.norm(g)) <= 1e-12 * np.linalg.norm(g)
    small = crandn(rng, 8, 8)
    assert np.linalg.norm(brute_dft2(small)) == pytest.approx(np.linalg.norm(small), rel=1e-12)


def test_delta_inverse_is_flat():
    g = np.zeros((8, 8), complex)
    g[0, 0] = 1
    assert np.allclose(T.ifft2(g), 1 / 8, atol=1e-15)


def test_adjoint_inner_product(rng):
    a, b = crandn(rng, 16, 16), crandn(rng, 16, 16)
    assert abs(T.vdot(T.fft2(a), b) - T.vdot(a, T.ifft2(b))) < 1e-12 * np.linalg.norm(a) * np.linalg.norm(b)


def test_ifft_of_zeros():
    assert not np.any(T.ifft2(np.zeros((4, 8), complex)))


def test_batched_transform(rng):
    g = crandn(rng, 3, 8, 8)
    out = T.fft2(g)
    for k in range(3):
        assert np.allclose(out[k], T.fft2(g[k]), atol=1e-14)


@pytest.mark.parametrize("shape", [(6, 8), (8, 12), (3, 3)])
def test_non_power_of_two_rejected(shape):
    with pytest.raises(T.DimensionError):
        T.fft2(np.zeros(shape, complex))
    with pytest.raises(T.DimensionError):
        T.ifft2(np.zeros(shape, complex))


def test_elementwise_examples():
    assert T.phase_unit(np.array([3 + 4j]), 0.0)[0] == pytest.approx(0.6 + 0.8j)
    assert T.abs_eps(np.array([0j]), 1e-8)[0] == pytest.approx(1e-8)
    assert T.max_abs2_reduce(np.array([1 + 0j, 2j])) == pytest.approx(4.0)
    assert T.phase_unit(np.array([0j]), 0.0)[0] == 0


def test_binary_ops(rng):
    a, b = crandn(rng, 4, 4), crandn(rng, 4, 4)
    assert np.allclose(T.add(a, b), a + b)
    assert np.allclose(T.sub(a, b), a - b)
    assert np.allclose(T.mul(a, b), a * b)
    assert np.allclose(T.conj_mul(a, b), np.conj(a) * b)
    assert np.allclose(T.scale(a, 2.0), 2 * a)


def test_shape_mismatch_rejected():
    with pytest.raises(T.DimensionError):
        T.add(np.zeros((2, 2)), np.zeros((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_parseval_property(p, q, seed):
    g = crandn(np.random.default_rng(seed), 2**p, 2**q)
    assert abs(np.linalg.norm(T.fft2(g)) - np.linalg.norm(g)) <= 1e-10 * np.linalg.norm(g)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(1e-12, 1.0))
def test_abs_eps_property(re, im, eps):
    z = np.array([complex(re, im)])
    a = T.abs_eps(z, eps)[0]
    assert a == pytest.approx(np.sqrt(re * re + im * im + eps * eps))
    assert abs(abs(T.phase_unit(z, eps)[0]) - abs(z[0]) / a) < 1e-12
