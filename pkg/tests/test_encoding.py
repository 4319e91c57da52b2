import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ambfhe.ckks.encoding import embed, embed_inverse, galois_element


def direct_embed(coeffs, n):
    zeta = np.exp(1j * np.pi / n)
    return np.array([sum(coeffs[k] * zeta ** (pow(5, j, 2 * n) * k) for k in range(n)) for j in range(n // 2)])


def test_embed_matches_direct_evaluation():
    rng = np.random.default_rng(0)
    for n in (16, 32):
        c = rng.normal(size=n)
        assert np.abs(direct_embed(c, n) - embed(c, n)).max() < 1e-12


@settings(deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-1, 1)))
def test_inverse_embedding_roundtrip(v):
    assert np.abs(embed(embed_inverse(v, 16), 16) - v).max() < 1e-12


def test_galois_automorphism_rotates_slots():
    n = 32
    rng = np.random.default_rng(1)
    c = rng.normal(size=n)
    for k in (1, 3, 7):
        g = galois_element(k, n)
        out = np.zeros(n)
        for i in range(n):
            e = i * g % (2 * n)
            if e >= n:
                out[e - n] -= c[i]
            else:
                out[e] += c[i]
        assert np.abs(embed(out, n) - np.roll(embed(c, n), -k)).max() < 1e-10
