import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sympy import isprime

from ambfhe.ckks.modarith import (RnsBasis, addmod, crt_centered, find_ntt_primes, mulmod,
                                  primitive_root_2n, submod)


def negacyclic_oracle(a, b, q):
    n = len(a)
    out = [0] * n
    for i in range(n):
        for j in range(n):
            k = i + j
            if k < n:
                out[k] = (out[k] + a[i] * b[j]) % q
            else:
                out[k - n] = (out[k - n] - a[i] * b[j]) % q
    return out


@pytest.fixture(scope="module")
def basis16():
    return RnsBasis(16, tuple(find_ntt_primes(50, 2, 16) + find_ntt_primes(30, 1, 16)))


def test_primes_are_ntt_friendly():
    for bits in (20, 40, 50):
        ps = find_ntt_primes(bits, 3, 4096)
        assert len(set(ps)) == 3
        for p in ps:
            assert isprime(p) and p < 2 ** bits and p >= 2 ** (bits - 1) and (p - 1) % 8192 == 0


def test_prime_size_limit():
    with pytest.raises(ValueError):
        find_ntt_primes(61, 1, 16)


def test_primitive_root_order():
    q = find_ntt_primes(40, 1, 64)[0]
    psi = primitive_root_2n(q, 64)
    assert pow(psi, 128, q) == 1 and pow(psi, 64, q) == q - 1


def test_ntt_roundtrip_and_product(basis16):
    rng = np.random.default_rng(3)
    view = basis16.view((0, 1, 2))
    a = np.stack([rng.integers(0, q, 16, dtype=np.uint64) for q in view.primes])
    b = np.stack([rng.integers(0, q, 16, dtype=np.uint64) for q in view.primes])
    np.testing.assert_array_equal(view.intt(view.ntt(a)), a)
    prod = view.polymul(a, b)
    for r, q in enumerate(view.primes):
        assert prod[r].tolist() == negacyclic_oracle(a[r].tolist(), b[r].tolist(), q)


def test_ntt_batched_matches_single(basis16):
    rng = np.random.default_rng(4)
    view = basis16.view((0, 2))
    a = np.stack([np.stack([rng.integers(0, q, 16, dtype=np.uint64) for q in view.primes]) for _ in range(3)])
    batched = view.ntt(a)
    for i in range(3):
        np.testing.assert_array_equal(batched[i], view.ntt(a[i]))


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_mulmod_matches_python_ints(data):
    q = data.draw(st.sampled_from(find_ntt_primes(50, 2, 16) + find_ntt_primes(24, 1, 16)))
    xs = data.draw(st.lists(st.integers(0, q - 1), min_size=1, max_size=20))
    ys = data.draw(st.lists(st.integers(0, q - 1), min_size=len(xs), max_size=len(xs)))
    a = np.array(xs, dtype=np.uint64)
    b = np.array(ys, dtype=np.uint64)
    qa = np.uint64(q)
    assert mulmod(a, b, qa, 1.0 / q).tolist() == [x * y % q for x, y in zip(xs, ys)]
    assert addmod(a, b, qa).tolist() == [(x + y) % q for x, y in zip(xs, ys)]
    assert submod(a, b, qa).tolist() == [(x - y) % q for x, y in zip(xs, ys)]


@given(st.lists(st.integers(-(2 ** 80), 2 ** 80), min_size=1, max_size=8))
def test_crt_centered_recovers_signed_values(values):
    primes = tuple(find_ntt_primes(50, 2, 16))
    res = np.array([[v % p for v in values] for p in primes], dtype=np.uint64)
    assert crt_centered(res, primes) == values
