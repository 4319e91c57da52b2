"""Residue-number-system arithmetic and negacyclic NTT over word-size primes.

Polynomials in Z_Q[X]/(X^N + 1) are held as uint64 arrays of shape
``(..., rows, N)`` where each row is the residue modulo one prime. All primes
are at most 50 bits wide so that a float64 estimate of the quotient
floor(a*b/q) is off by at most one; the remainder is then recovered exactly
with wrapping uint64 arithmetic and a single conditional correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from sympy import isprime

MAX_PRIME_BITS = 50


def find_ntt_primes(bits: int, count: int, ring_dim: int, exclude=()) -> list[int]:
    """Return the ``count`` largest primes p < 2**bits with p = 1 (mod 2N)."""
    if not 2 <= bits <= MAX_PRIME_BITS:
        raise ValueError(f"prime size must be in [2, {MAX_PRIME_BITS}] bits, got {bits}")
    step = 2 * ring_dim
    excluded = set(exclude)
    found: list[int] = []
    cand = (1 << bits) - step + 1
    while len(found) < count:
        if cand < (1 << (bits - 1)):
            raise ValueError(f"not enough {bits}-bit NTT primes for N={ring_dim}")
        if cand not in excluded and isprime(cand):
            found.append(cand)
        cand -= step
    return found


def primitive_root_2n(q: int, ring_dim: int) -> int:
    """Smallest-generator primitive 2N-th root of unity modulo q."""
    two_n = 2 * ring_dim
    if (q - 1) % two_n:
        raise ValueError(f"{q} is not 1 mod {two_n}")
    for x in range(2, q):
        g = pow(x, (q - 1) // two_n, q)
        if pow(g, ring_dim, q) == q - 1:
            return g
    raise ValueError(f"no primitive {two_n}-th root modulo {q}")  # pragma: no cover


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


# -- elementwise modular arithmetic -------------------------------------------
# ``q`` is a uint64 array broadcastable against the operands (one modulus per row).


def addmod(a: np.ndarray, b: np.ndarray, q: np.ndarray) -> np.ndarray:
    s = a + b
    # unsigned wraparound makes s - q huge whenever s < q
    return np.minimum(s, s - q, out=s)


def submod(a: np.ndarray, b: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = a - b
    return np.minimum(d, d + q, out=d)


def negmod(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    return (q - a) * (a != 0)


def _fix(r: np.ndarray, q: np.ndarray) -> np.ndarray:
    # r is congruent to the result and lies in (-q, 2q) as a signed value
    np.minimum(r, r + q, out=r)
    return np.minimum(r, r - q, out=r)


def mulmod(a: np.ndarray, b: np.ndarray, q: np.ndarray, qinv: np.ndarray) -> np.ndarray:
    """(a * b) mod q for a, b in [0, q); ``qinv`` is 1/q as float64."""
    x = a.astype(np.float64) * b
    x *= qinv
    quo = x.astype(np.uint64)
    quo *= q
    r = a * b
    r -= quo
    return _fix(r, q)


def mulmod_pre(a: np.ndarray, w: np.ndarray, w_over_q: np.ndarray, q: np.ndarray) -> np.ndarray:
    """(a * w) mod q with ``w / q`` precomputed (fixed operands such as twiddles)."""
    x = a.astype(np.float64) * w_over_q
    quo = x.astype(np.uint64)
    quo *= q
    r = a * w
    r -= quo
    return _fix(r, q)


@dataclass(frozen=True, eq=False)
class RnsBasis:
    """NTT tables for a set of primes sharing one ring dimension."""

    ring_dim: int
    primes: tuple[int, ...]
    q: np.ndarray = field(init=False, repr=False)
    qinv: np.ndarray = field(init=False, repr=False)
    _psi: np.ndarray = field(init=False, repr=False)
    _psi_q: np.ndarray = field(init=False, repr=False)
    _ipsi: np.ndarray = field(init=False, repr=False)
    _ipsi_q: np.ndarray = field(init=False, repr=False)
    _ninv: np.ndarray = field(init=False, repr=False)
    _ninv_q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.ring_dim
        rev = _bit_reverse(n)
        psi_tab, ipsi_tab, ninv = [], [], []
        for p in self.primes:
            psi = primitive_root_2n(p, n)
            ipsi = pow(psi, -1, p)
            pw = [1] * n
            ipw = [1] * n
            for i in range(1, n):
                pw[i] = pw[i - 1] * psi % p
                ipw[i] = ipw[i - 1] * ipsi % p
            psi_tab.append(np.array(pw, dtype=np.uint64)[rev])
            ipsi_tab.append(np.array(ipw, dtype=np.uint64)[rev])
            ninv.append(pow(n, -1, p))
        q = np.array(self.primes, dtype=np.uint64)[:, None]
        qf = q.astype(np.float64)
        psi = np.stack(psi_tab)
        ipsi = np.stack(ipsi_tab)
        nv = np.array(ninv, dtype=np.uint64)[:, None]
        set_ = object.__setattr__
        set_(self, "q", q)
        set_(self, "qinv", np.float64(1) / qf)
        set_(self, "_psi", psi)
        set_(self, "_psi_q", psi.astype(np.float64) / qf)
        set_(self, "_ipsi", ipsi)
        set_(self, "_ipsi_q", ipsi.astype(np.float64) / qf)
        set_(self, "_ninv", nv)
        set_(self, "_ninv_q", nv.astype(np.float64) / qf)

    def __len__(self) -> int:
        return len(self.primes)

    @lru_cache(maxsize=None)
    def view(self, rows: tuple[int, ...]) -> "RnsView":
        return RnsView(self, rows)


class RnsView:
    """Row subset of an :class:`RnsBasis`; the unit the transforms operate on."""

    def __init__(self, basis: RnsBasis, rows: tuple[int, ...]):
        idx = list(rows)
        self.rows = rows
        self.n = basis.ring_dim
        self.primes = tuple(basis.primes[i] for i in idx)
        self.q = basis.q[idx]
        self.qinv = basis.qinv[idx]
        self.psi = basis._psi[idx]
        self.psi_q = basis._psi_q[idx]
        self.ipsi = basis._ipsi[idx]
        self.ipsi_q = basis._ipsi_q[idx]
        self.ninv = basis._ninv[idx]
        self.ninv_q = basis._ninv_q[idx]

    def reduce(self, x: np.ndarray) -> np.ndarray:
        """Reduce a signed int64 array of shape (..., N) into every row."""
        x = np.asarray(x, dtype=np.int64)[..., None, :]
        return np.mod(x, self.q.view(np.int64)).astype(np.uint64)

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return mulmod(a, b, self.q, self.qinv)

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return addmod(a, b, self.q)

    def sub(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return submod(a, b, self.q)

    def neg(self, a: np.ndarray) -> np.ndarray:
        return negmod(a, self.q)

    def ntt(self, a: np.ndarray) -> np.ndarray:
        """Forward negacyclic NTT (Cooley-Tukey, bit-reversed output)."""
        n = self.n
        r = len(self.primes)
        lead = a.shape[:-2]
        a = np.ascontiguousarray(a, dtype=np.uint64).reshape(-1, r, n)
        b = a.shape[0]
        q = self.q[None, :, :, None]
        m, t = 1, n
        while m < n:
            t //= 2
            v = a.reshape(b, r, m, 2, t)
            lo = v[:, :, :, 0, :]
            hi = mulmod_pre(v[:, :, :, 1, :], self.psi[None, :, m:2 * m, None],
                            self.psi_q[None, :, m:2 * m, None], q)
            out = np.empty_like(v)
            out[:, :, :, 0, :] = addmod(lo, hi, q)
            out[:, :, :, 1, :] = submod(lo, hi, q)
            a = out.reshape(b, r, n)
            m *= 2
        return a.reshape(*lead, r, n)

    def intt(self, a: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`ntt` (Gentleman-Sande), including the 1/N factor."""
        n = self.n
        r = len(self.primes)
        lead = a.shape[:-2]
        a = np.ascontiguousarray(a, dtype=np.uint64).reshape(-1, r, n)
        b = a.shape[0]
        q = self.q[None, :, :, None]
        m, t = n, 1
        while m > 1:
            h = m // 2
            v = a.reshape(b, r, h, 2, t)
            lo = v[:, :, :, 0, :]
            hi = v[:, :, :, 1, :]
            out = np.empty_like(v)
            out[:, :, :, 0, :] = addmod(lo, hi, q)
            out[:, :, :, 1, :] = mulmod_pre(submod(lo, hi, q), self.ipsi[None, :, h:m, None],
                                            self.ipsi_q[None, :, h:m, None], q)
            a = out.reshape(b, r, n)
            t *= 2
            m = h
        a = mulmod_pre(a, self.ninv[None], self.ninv_q[None], self.q[None])
        return a.reshape(*lead, r, n)

    def polymul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Negacyclic product of coefficient-form operands."""
        return self.intt(self.mul(self.ntt(a), self.ntt(b)))


def crt_centered(residues: np.ndarray, primes: tuple[int, ...]) -> list[int]:
    """Lift residues of shape (rows, N) to centered integers modulo prod(primes)."""
    if len(primes) == 1:
        p = primes[0]
        r = residues[0].astype(np.int64)
        return np.where(r > p // 2, r - p, r).tolist()
    big_q = 1
    for p in primes:
        big_q *= p
    acc = [0] * residues.shape[-1]
    for row, p in zip(residues, primes):
        q_hat = big_q // p
        factor = q_hat * pow(q_hat % p, -1, p)
        acc = [x + int(v) * factor for x, v in zip(acc, row.tolist())]
    half = big_q // 2
    out = []
    for x in acc:
        x %= big_q
        out.append(x - big_q if x > half else x)
    return out
