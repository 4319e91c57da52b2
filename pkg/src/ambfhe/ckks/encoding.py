"""Canonical-embedding encoder for real slot vectors.

Slot j holds the evaluation of the message polynomial at zeta^(5^j), where
zeta = exp(i*pi/N) is a primitive 2N-th root of unity; the conjugate slots at
zeta^(-5^j) are filled implicitly so the polynomial has real coefficients.
With this ordering the automorphism X -> X^(5^k) rotates slots left by k.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def _tables(n: int):
    two_n = 2 * n
    g = [pow(5, j, two_n) for j in range(n // 2)]
    slot_idx = np.array([(e - 1) // 2 for e in g])
    conj_idx = np.array([(two_n - e - 1) // 2 for e in g])
    twist = np.exp(1j * np.pi * np.arange(n) / n)
    return slot_idx, conj_idx, twist


def galois_element(step: int, ring_dim: int) -> int:
    """Galois element for a left rotation by ``step`` slots."""
    return pow(5, step % (ring_dim // 2), 2 * ring_dim)


def embed_inverse(values: np.ndarray, ring_dim: int) -> np.ndarray:
    """Real polynomial coefficients whose slot evaluations are ``values``."""
    slot_idx, conj_idx, twist = _tables(ring_dim)
    z = np.zeros(ring_dim // 2, dtype=np.complex128)
    z[: len(values)] = values
    full = np.empty(ring_dim, dtype=np.complex128)
    full[slot_idx] = z
    full[conj_idx] = np.conj(z)
    # m(zeta^(2t+1)) = sum_k (c_k zeta^k) w^(tk) with w = exp(2 pi i / N)
    return (np.fft.fft(full) / ring_dim / twist).real


def embed(coeffs: np.ndarray, ring_dim: int) -> np.ndarray:
    """Slot evaluations (complex) of a real coefficient vector."""
    slot_idx, _, twist = _tables(ring_dim)
    evals = np.fft.ifft(np.asarray(coeffs, dtype=np.float64) * twist) * ring_dim
    return evals[slot_idx]
