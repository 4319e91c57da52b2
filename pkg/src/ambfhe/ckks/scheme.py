"""Leveled RNS-CKKS: key generation, encryption and homomorphic evaluation.

Ciphertext and plaintext polynomials are stored in coefficient form as
uint64 arrays of shape ``(parts, level + 1, N)``. Key-switching keys are
stored in NTT form over the chain primes plus the special prime P.

Key switching (relinearization and rotation) splits every residue of the
input polynomial into ``digit_bits``-wide digits, multiplies each digit by
its key component modulo Q*P and divides the result by P. The added noise is
roughly 2**digit_bits / P times the key error, which stays far below the
encoding scale for the shipped presets.
"""

from __future__ import annotations

import math
import time
from collections import Counter, defaultdict
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from functools import lru_cache, wraps
from typing import Iterable, Mapping

import numpy as np

from .encoding import embed, embed_inverse, galois_element
from .modarith import crt_centered, mulmod
from .params import CkksParams

ERROR_STDDEV = 3.2
ERROR_BOUND = 19  # ~6 sigma tail cut


class CkksError(ValueError):
    """Invalid operand combination (level, scale, parts or missing key)."""


class MissingKeyError(CkksError):
    pass


# -- operation accounting -------------------------------------------------------


@dataclass
class OpStats:
    counts: Counter = field(default_factory=Counter)
    seconds: defaultdict = field(default_factory=lambda: defaultdict(float))

    def __getitem__(self, name: str) -> int:
        return self.counts[name]


_active: ContextVar[tuple[OpStats, ...]] = ContextVar("ambfhe_op_stats", default=())


@contextmanager
def count_ops():
    """Collect counts and wall time of homomorphic operations in this context."""
    stats = OpStats()
    token = _active.set(_active.get() + (stats,))
    try:
        yield stats
    finally:
        _active.reset(token)


def _tracked(name: str):
    def deco(fn):
        @wraps(fn)
        def wrapper(*args, **kwargs):
            collectors = _active.get()
            if not collectors:
                return fn(*args, **kwargs)
            t0 = time.perf_counter()
            out = fn(*args, **kwargs)
            dt = time.perf_counter() - t0
            for st in collectors:
                st.counts[name] += 1
                st.seconds[name] += dt
            return out
        return wrapper
    return deco


# -- key and message objects ----------------------------------------------------


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SecretKey:
    coeffs: np.ndarray  # ternary, int64, shape (N,)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _readonly(np.asarray(self.coeffs, dtype=np.int64)))


@dataclass(frozen=True, eq=False)
class PublicKey:
    params: CkksParams
    b: np.ndarray  # (L+1, N) coefficient form
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", _readonly(self.b))
        object.__setattr__(self, "a", _readonly(self.a))


@dataclass(frozen=True, eq=False)
class KeySwitchKey:
    data: np.ndarray  # (digits, 2, L+2, N) NTT form

    def __post_init__(self):
        object.__setattr__(self, "data", _readonly(self.data))


@dataclass(frozen=True, eq=False)
class EvaluationKeys:
    relin_key: KeySwitchKey | None
    galois_keys: Mapping[int, KeySwitchKey]

    @property
    def rotation_steps(self) -> frozenset[int]:
        return frozenset(self.galois_keys)


@dataclass(frozen=True, eq=False)
class Plaintext:
    poly: np.ndarray  # (level+1, N)
    scale: float
    level: int

    def __post_init__(self):
        object.__setattr__(self, "poly", _readonly(self.poly))
        if not self.scale > 0:
            raise CkksError("plaintext scale must be positive")


@dataclass(frozen=True, eq=False)
class Ciphertext:
    parts: np.ndarray  # (2 or 3, level+1, N)
    scale: float
    level: int

    def __post_init__(self):
        object.__setattr__(self, "parts", _readonly(self.parts))
        if self.parts.ndim != 3 or self.parts.shape[1] != self.level + 1:
            raise CkksError("ciphertext parts do not match its level")

    @property
    def size(self) -> int:
        return self.parts.shape[0]

    @property
    def slot_count(self) -> int:
        return self.parts.shape[-1] // 2


# -- context ----------------------------------------------------------------------


def _default_rng(rng):
    return rng if rng is not None else np.random.default_rng()


class CkksContext:
    """Evaluator bound to one parameter set. Holds only immutable tables."""

    def __init__(self, params: CkksParams):
        self.params = params
        self.n = params.ring_dim
        self.basis = params.basis
        self.top = params.max_level
        self._special_row = len(params.modulus_chain)
        chain = params.modulus_chain
        p = params.special_prime
        self._p_inv = np.array([pow(p, -1, q) for q in chain], dtype=np.uint64)
        self._rescale_inv = {
            lvl: np.array([pow(chain[lvl], -1, chain[j]) for j in range(lvl)], dtype=np.uint64)
            for lvl in range(1, len(chain))
        }
        digits = []
        for i, q in enumerate(chain):
            k_count = math.ceil(q.bit_length() / params.digit_bits)
            digits.extend((i, k) for k in range(k_count))
        self._digits = tuple(digits)

    # bases
    def _view(self, level: int):
        return self.basis.view(tuple(range(level + 1)))

    def _ext_view(self, level: int):
        return self.basis.view(tuple(range(level + 1)) + (self._special_row,))

    # sampling
    def _ternary(self, rng) -> np.ndarray:
        return rng.integers(-1, 2, size=self.n, dtype=np.int64)

    def _error(self, rng, count: int = 1) -> np.ndarray:
        e = np.rint(rng.normal(0.0, ERROR_STDDEV, size=(count, self.n)))
        return np.clip(e, -ERROR_BOUND, ERROR_BOUND).astype(np.int64)

    def _uniform(self, rng, primes, lead=()) -> np.ndarray:
        return np.stack([rng.integers(0, q, size=lead + (self.n,), dtype=np.uint64) for q in primes], axis=-2)

    # -- keys ---------------------------------------------------------------------

    def keygen(self, rotation_steps: Iterable[int] = (), rng=None):
        """Return ``(secret_key, public_key, evaluation_keys)``."""
        rng = _default_rng(rng)
        steps = sorted({int(k) for k in rotation_steps})
        for k in steps:
            if not 1 <= k < self.params.slot_count:
                raise CkksError(f"rotation step {k} outside [1, {self.params.slot_count - 1}]")
        s = self._ternary(rng)
        sk = SecretKey(s)
        top = self._view(self.top)
        s_top = top.ntt(top.reduce(s))
        a = self._uniform(rng, top.primes)
        e = top.reduce(self._error(rng)[0])
        b = top.add(top.intt(top.neg(top.mul(top.ntt(a), s_top))), e)
        pk = PublicKey(self.params, b, a)

        ext = self._ext_view(self.top)
        s_ext = ext.ntt(ext.reduce(s))
        relin = self._switch_key(ext.mul(s_ext, s_ext), s_ext, rng)
        galois = {}
        for k in steps:
            s_rot = self._automorphism(s, galois_element(k, self.n))
            galois[k] = self._switch_key(ext.ntt(ext.reduce(s_rot)), s_ext, rng)
        return sk, pk, EvaluationKeys(relin, galois)

    def _switch_key(self, s_from: np.ndarray, s_to: np.ndarray, rng) -> KeySwitchKey:
        ext = self._ext_view(self.top)
        w = self.params.digit_bits
        p = self.params.special_prime
        d = len(self._digits)
        a = self._uniform(rng, ext.primes, lead=(d,))
        e = ext.ntt(ext.reduce(self._error(rng, d)))
        b = ext.add(ext.neg(ext.mul(a, s_to[None])), e)
        for idx, (i, k) in enumerate(self._digits):
            q = self.params.modulus_chain[i]
            g = np.uint64(p * pow(2, w * k, q) % q)
            qi = ext.q[i:i + 1]
            gadget = mulmod(s_from[i:i + 1], g, qi, ext.qinv[i:i + 1])
            b[idx, i:i + 1] = (b[idx, i:i + 1] + gadget) % qi
        return KeySwitchKey(np.stack((b, a), axis=1))

    def _key_switch(self, c: np.ndarray, key: KeySwitchKey, level: int) -> np.ndarray:
        """Return (k0, k1) with k0 + k1*s ~ c*s_from modulo Q_level."""
        w = self.params.digit_bits
        mask = np.uint64((1 << w) - 1)
        digits = []
        for i, k in self._digits:
            if i > level:
                break
            digits.append((c[i] >> np.uint64(w * k)) & mask)
        n_dig = len(digits)
        ext = self._ext_view(level)
        d_ext = np.stack(digits)[:, None, :] % ext.q
        d_ntt = ext.ntt(d_ext)
        rows = list(range(level + 1)) + [self._special_row]
        kd = key.data[:n_dig][:, :, rows]
        prod = ext.mul(d_ntt[:, None], kd)
        acc = prod[0]
        for j in range(1, n_dig):
            acc = ext.add(acc, prod[j])
        acc = ext.intt(acc)
        return self._mod_down(acc, level)

    def _mod_down(self, x: np.ndarray, level: int) -> np.ndarray:
        """Divide an extended-basis polynomial pair by P with rounding."""
        p = self.params.special_prime
        r = x[:, -1, :].astype(np.int64)
        r = np.where(r > p // 2, r - p, r)
        view = self._view(level)
        r_red = view.reduce(r)
        diff = view.sub(x[:, :-1, :], r_red)
        pinv = self._p_inv[: level + 1][:, None]
        return view.mul(diff, np.broadcast_to(pinv, diff.shape))

    # -- encoding -----------------------------------------------------------------

    @_tracked("encode")
    def encode(self, values, scale: float | None = None, level: int | None = None) -> Plaintext:
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size > self.params.slot_count:
            raise CkksError(f"{v.size} values exceed {self.params.slot_count} slots")
        if not np.all(np.isfinite(v)):
            raise CkksError("slot values must be finite")
        scale = self.params.scale if scale is None else float(scale)
        level = self.top if level is None else level
        if not 0 <= level <= self.top:
            raise CkksError(f"level {level} outside [0, {self.top}]")
        coeffs = np.rint(embed_inverse(v, self.n) * scale)
        view = self._view(level)
        if np.abs(coeffs).max(initial=0) < 2 ** 62:
            poly = view.reduce(coeffs.astype(np.int64))
        else:
            ints = [int(x) for x in coeffs]
            poly = np.array([[x % q for x in ints] for q in view.primes], dtype=np.uint64)
        return Plaintext(poly, scale, level)

    @_tracked("decode")
    def decode(self, pt: Plaintext) -> np.ndarray:
        coeffs = crt_centered(pt.poly, self._view(pt.level).primes)
        real = np.array([float(c) for c in coeffs]) / pt.scale
        return embed(real, self.n).real

    # -- encryption ---------------------------------------------------------------

    @_tracked("encrypt")
    def encrypt(self, pk: PublicKey, pt: Plaintext, rng=None) -> Ciphertext:
        if not 0 <= pt.level <= self.top:
            raise CkksError("plaintext level outside the modulus chain")
        rng = _default_rng(rng)
        view = self._view(pt.level)
        rows = slice(0, pt.level + 1)
        u = view.ntt(view.reduce(self._ternary(rng)))
        keys = view.ntt(np.stack((pk.b[rows], pk.a[rows])))
        masked = view.intt(view.mul(keys, u[None]))
        e = view.reduce(self._error(rng, 2))
        c = view.add(masked, e)
        c[0] = view.add(c[0], pt.poly)
        return Ciphertext(c, pt.scale, pt.level)

    @_tracked("decrypt")
    def decrypt(self, sk: SecretKey, ct: Ciphertext) -> Plaintext:
        if ct.size != 2:
            raise CkksError(f"cannot decrypt a {ct.size}-part ciphertext; relinearize first")
        view = self._view(ct.level)
        s = view.ntt(view.reduce(sk.coeffs))
        m = view.add(ct.parts[0], view.intt(view.mul(view.ntt(ct.parts[1]), s)))
        return Plaintext(m, ct.scale, ct.level)

    def decrypt_values(self, sk: SecretKey, ct: Ciphertext) -> np.ndarray:
        return self.decode(self.decrypt(sk, ct))

    # -- evaluation -----------------------------------------------------------------

    def _check_pair(self, a, b):
        if a.level != b.level:
            raise CkksError(f"level mismatch: {a.level} vs {b.level}")
        if not math.isclose(a.scale, b.scale, rel_tol=1e-12):
            raise CkksError(f"scale mismatch: {a.scale!r} vs {b.scale!r}")

    @_tracked("add")
    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_pair(a, b)
        if a.size != b.size:
            raise CkksError("ciphertext size mismatch")
        return Ciphertext(self._view(a.level).add(a.parts, b.parts), a.scale, a.level)

    @_tracked("sub")
    def sub(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_pair(a, b)
        if a.size != b.size:
            raise CkksError("ciphertext size mismatch")
        return Ciphertext(self._view(a.level).sub(a.parts, b.parts), a.scale, a.level)

    @_tracked("negate")
    def negate(self, a: Ciphertext) -> Ciphertext:
        return Ciphertext(self._view(a.level).neg(a.parts), a.scale, a.level)

    @_tracked("add_plain")
    def add_plain(self, a: Ciphertext, p: Plaintext) -> Ciphertext:
        self._check_pair(a, p)
        parts = np.array(a.parts)
        parts[0] = self._view(a.level).add(parts[0], p.poly)
        return Ciphertext(parts, a.scale, a.level)

    @_tracked("tensor")
    def tensor(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        """Ciphertext product without relinearization (3 parts, same level)."""
        return self._tensor(a, b)

    def _tensor(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        if a.level != b.level:
            raise CkksError(f"level mismatch: {a.level} vs {b.level}")
        if a.size != 2 or b.size != 2:
            raise CkksError("tensor product needs 2-part ciphertexts")
        view = self._view(a.level)
        fa = view.ntt(a.parts)
        fb = view.ntt(b.parts)
        d0 = view.mul(fa[0], fb[0])
        d1 = view.add(view.mul(fa[0], fb[1]), view.mul(fa[1], fb[0]))
        d2 = view.mul(fa[1], fb[1])
        return Ciphertext(view.intt(np.stack((d0, d1, d2))), a.scale * b.scale, a.level)

    @_tracked("relinearize")
    def relinearize(self, ct: Ciphertext, evk: EvaluationKeys) -> Ciphertext:
        return self._relinearize(ct, evk)

    def _relinearize(self, ct: Ciphertext, evk: EvaluationKeys) -> Ciphertext:
        if ct.size == 2:
            return ct
        if evk.relin_key is None:
            raise MissingKeyError("relinearization key missing")
        k = self._key_switch(ct.parts[2], evk.relin_key, ct.level)
        view = self._view(ct.level)
        return Ciphertext(view.add(ct.parts[:2], k), ct.scale, ct.level)

    @_tracked("rescale")
    def rescale(self, ct: Ciphertext) -> Ciphertext:
        return self._rescale(ct)

    def _rescale(self, ct: Ciphertext) -> Ciphertext:
        lvl = ct.level
        if lvl == 0:
            raise CkksError("no level left to rescale")
        q_last = self.params.modulus_chain[lvl]
        last = ct.parts[:, lvl, :].astype(np.int64)
        last = np.where(last > q_last // 2, last - q_last, last)
        view = self._view(lvl - 1)
        diff = view.sub(ct.parts[:, :lvl, :], view.reduce(last))
        inv = np.broadcast_to(self._rescale_inv[lvl][:, None], diff.shape)
        return Ciphertext(view.mul(diff, inv), ct.scale / q_last, lvl - 1)

    @_tracked("mul")
    def mul(self, a: Ciphertext, b: Ciphertext, evk: EvaluationKeys) -> Ciphertext:
        """Slotwise product: tensor, relinearize, rescale by one chain prime."""
        if a.level == 0 or b.level == 0:
            raise CkksError("no multiplicative level left")
        return self._rescale(self._relinearize(self._tensor(a, b), evk))

    @_tracked("mul_plain")
    def mul_plain(self, a: Ciphertext, p: Plaintext) -> Ciphertext:
        if a.level != p.level:
            raise CkksError(f"level mismatch: {a.level} vs {p.level}")
        if a.level == 0:
            raise CkksError("no multiplicative level left")
        view = self._view(a.level)
        fp = view.ntt(p.poly)
        prod = view.intt(view.mul(view.ntt(a.parts), fp[None]))
        return self._rescale(Ciphertext(prod, a.scale * p.scale, a.level))

    @_tracked("drop_level")
    def drop_level(self, ct: Ciphertext, level: int) -> Ciphertext:
        """Discard top residues without changing the scale."""
        if not 0 <= level <= ct.level:
            raise CkksError(f"cannot drop from level {ct.level} to {level}")
        return Ciphertext(ct.parts[:, : level + 1, :], ct.scale, level)

    @_tracked("rotate")
    def rotate(self, ct: Ciphertext, step: int, evk: EvaluationKeys) -> Ciphertext:
        """Cyclic left rotation of the slot vector by ``step``."""
        k = step % self.params.slot_count
        if k == 0:
            return ct
        key = evk.galois_keys.get(k)
        if key is None:
            raise MissingKeyError(f"no Galois key for rotation step {k}")
        if ct.size != 2:
            raise CkksError("rotate needs a relinearized ciphertext")
        g = galois_element(k, self.n)
        c0 = self._automorphism(ct.parts[0], g)
        c1 = self._automorphism(ct.parts[1], g)
        k0, k1 = self._key_switch(c1, key, ct.level)
        view = self._view(ct.level)
        return Ciphertext(np.stack((view.add(c0, k0), k1)), ct.scale, ct.level)

    def _automorphism(self, poly: np.ndarray, g: int) -> np.ndarray:
        dest, neg = _automorphism_map(self.n, g)
        out = np.empty_like(poly)
        if poly.dtype == np.int64:
            out[..., dest] = np.where(neg, -poly, poly)
            return out
        rows = poly.shape[-2]
        q = self.basis.q[:rows]
        out[..., dest] = np.where(neg, (q - poly) * (poly != 0), poly)
        return out


@lru_cache(maxsize=None)
def _automorphism_map(n: int, g: int):
    e = (np.arange(n) * g) % (2 * n)
    return e % n, e >= n
