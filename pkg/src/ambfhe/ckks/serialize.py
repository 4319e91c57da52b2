"""Versioned binary encoding of CKKS objects.

Layout: b"AFHE", u16 format version, u8 object tag, then a tag-specific body
made of little-endian u64 scalars and raw little-endian u64 arrays. Arrays are
written as (ndim, *shape, data). Equal objects always produce equal bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .params import CkksParams, ParamError
from .scheme import (Ciphertext, EvaluationKeys, KeySwitchKey, Plaintext, PublicKey,
                     SecretKey)

MAGIC = b"AFHE"
FORMAT_VERSION = 1

TAG_PARAMS = 1
TAG_PUBLIC_KEY = 2
TAG_EVAL_KEYS = 3
TAG_PLAINTEXT = 4
TAG_CIPHERTEXT = 5
TAG_SECRET_KEY = 6

_TAG_NAMES = {
    TAG_PARAMS: "params", TAG_PUBLIC_KEY: "public key", TAG_EVAL_KEYS: "evaluation keys",
    TAG_PLAINTEXT: "plaintext", TAG_CIPHERTEXT: "ciphertext", TAG_SECRET_KEY: "secret key",
}

_MAX_NDIM = 4
_MAX_ELEMENTS = 1 << 28


class SerializationError(ValueError):
    pass


class _Writer:
    def __init__(self, tag: int):
        self.chunks = [MAGIC, struct.pack("<HB", FORMAT_VERSION, tag)]

    def u64(self, x: int):
        self.chunks.append(struct.pack("<Q", x))

    def f64(self, x: float):
        self.chunks.append(struct.pack("<d", x))

    def text(self, s: str | None):
        raw = (s or "").encode()
        self.u64(len(raw))
        self.chunks.append(raw)

    def array(self, a: np.ndarray):
        a = np.asarray(a)
        self.u64(a.ndim)
        for d in a.shape:
            self.u64(d)
        self.chunks.append(np.ascontiguousarray(a, dtype="<u8").tobytes())

    def bytes(self) -> bytes:
        return b"".join(self.chunks)


class _Reader:
    def __init__(self, data: bytes, expect_tag: int):
        self.buf = memoryview(bytes(data))
        self.pos = 0
        if len(self.buf) < 7:
            raise SerializationError("truncated header")
        if bytes(self.buf[:4]) != MAGIC:
            raise SerializationError("bad magic")
        version, tag = struct.unpack_from("<HB", self.buf, 4)
        if version != FORMAT_VERSION:
            raise SerializationError(f"unsupported format version {version}")
        if tag != expect_tag:
            got = _TAG_NAMES.get(tag, f"tag {tag}")
            raise SerializationError(f"expected {_TAG_NAMES[expect_tag]}, found {got}")
        self.pos = 7

    def _take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise SerializationError("truncated body")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        n = self.u64()
        try:
            return bytes(self._take(n)).decode()
        except UnicodeDecodeError as exc:
            raise SerializationError("invalid text field") from exc

    def array(self) -> np.ndarray:
        ndim = self.u64()
        if ndim > _MAX_NDIM:
            raise SerializationError(f"array rank {ndim} too large")
        shape = tuple(self.u64() for _ in range(ndim))
        count = int(np.prod(shape, dtype=object)) if shape else 1
        if count > _MAX_ELEMENTS:
            raise SerializationError("array too large")
        raw = self._take(8 * count)
        return np.frombuffer(raw, dtype="<u8").astype(np.uint64).reshape(shape)

    def done(self):
        if self.pos != len(self.buf):
            raise SerializationError(f"{len(self.buf) - self.pos} trailing bytes")


# -- params -----------------------------------------------------------------------


def _write_params(w: _Writer, p: CkksParams):
    w.u64(p.ring_dim)
    w.array(np.array(p.modulus_chain, dtype=np.uint64))
    w.u64(p.special_prime)
    w.f64(p.scale)
    w.u64(p.digit_bits)
    w.u64(p.security_bits)
    w.text(p.preset_name)


def _read_params(r: _Reader) -> CkksParams:
    n = r.u64()
    chain = tuple(int(x) for x in r.array().ravel())
    special = r.u64()
    scale = r.f64()
    digit_bits = r.u64()
    lam = r.u64()
    name = r.text() or None
    try:
        return CkksParams(n, chain, special, scale, digit_bits, name, lam)
    except ParamError as exc:
        raise SerializationError(f"invalid parameters: {exc}") from exc


def params_to_bytes(p: CkksParams) -> bytes:
    w = _Writer(TAG_PARAMS)
    _write_params(w, p)
    return w.bytes()


def params_from_bytes(data: bytes) -> CkksParams:
    r = _Reader(data, TAG_PARAMS)
    p = _read_params(r)
    r.done()
    return p


# -- keys ----------------------------------------------------------------------------


def _check_poly(a: np.ndarray, rows: int, n: int, what: str):
    if a.ndim < 2 or a.shape[-2:] != (rows, n):
        raise SerializationError(f"{what} has shape {a.shape}, expected (..., {rows}, {n})")


def _check_residues(a: np.ndarray, primes, what: str):
    q = np.array(primes, dtype=np.uint64)[:, None]
    if np.any(a >= q):
        raise SerializationError(f"{what} has residues outside their modulus")


def public_key_to_bytes(pk: PublicKey) -> bytes:
    w = _Writer(TAG_PUBLIC_KEY)
    _write_params(w, pk.params)
    w.array(pk.b)
    w.array(pk.a)
    return w.bytes()


def public_key_from_bytes(data: bytes) -> PublicKey:
    r = _Reader(data, TAG_PUBLIC_KEY)
    params = _read_params(r)
    b, a = r.array(), r.array()
    r.done()
    rows = len(params.modulus_chain)
    for name, x in (("b", b), ("a", a)):
        if x.shape != (rows, params.ring_dim):
            raise SerializationError(f"public key part {name} has shape {x.shape}")
        _check_residues(x, params.modulus_chain, "public key")
    return PublicKey(params, b, a)


def eval_keys_to_bytes(evk: EvaluationKeys) -> bytes:
    w = _Writer(TAG_EVAL_KEYS)
    if evk.relin_key is None:
        w.u64(0)
    else:
        w.u64(1)
        w.array(evk.relin_key.data)
    steps = sorted(evk.galois_keys)
    w.u64(len(steps))
    for k in steps:
        w.u64(k)
        w.array(evk.galois_keys[k].data)
    return w.bytes()


def eval_keys_from_bytes(data: bytes, params: CkksParams | None = None) -> EvaluationKeys:
    """Decode evaluation keys; with ``params`` the key shapes are validated."""
    r = _Reader(data, TAG_EVAL_KEYS)
    has_relin = r.u64()
    if has_relin > 1:
        raise SerializationError("invalid relinearization-key flag")
    relin = KeySwitchKey(r.array()) if has_relin else None
    count = r.u64()
    galois = {}
    for _ in range(count):
        k = r.u64()
        if k in galois:
            raise SerializationError(f"duplicate Galois key for step {k}")
        galois[k] = KeySwitchKey(r.array())
    r.done()
    keys = [relin] if relin is not None else []
    keys.extend(galois.values())
    if params is not None:
        primes = params.modulus_chain + (params.special_prime,)
        for k in galois:
            if not 1 <= k < params.slot_count:
                raise SerializationError(f"rotation step {k} out of range")
        for key in keys:
            if key.data.ndim != 4 or key.data.shape[1] != 2:
                raise SerializationError("malformed key-switching key")
            _check_poly(key.data, len(primes), params.ring_dim, "key-switching key")
            _check_residues(key.data, primes, "key-switching key")
    return EvaluationKeys(relin, galois)


def secret_key_to_bytes(sk: SecretKey) -> bytes:
    w = _Writer(TAG_SECRET_KEY)
    # ternary coefficients stored as s + 1 in {0, 1, 2}
    w.array((sk.coeffs + 1).astype(np.uint64))
    return w.bytes()


def secret_key_from_bytes(data: bytes) -> SecretKey:
    r = _Reader(data, TAG_SECRET_KEY)
    s = r.array()
    r.done()
    if s.ndim != 1 or np.any(s > 2):
        raise SerializationError("secret key is not a ternary vector")
    return SecretKey(s.astype(np.int64) - 1)


# -- messages ------------------------------------------------------------------------


def _write_message(tag: int, poly: np.ndarray, scale: float, level: int) -> bytes:
    w = _Writer(tag)
    w.u64(level)
    w.f64(scale)
    w.array(poly)
    return w.bytes()


def _read_message(data: bytes, tag: int, params: CkksParams | None):
    r = _Reader(data, tag)
    level = r.u64()
    scale = r.f64()
    poly = r.array()
    r.done()
    if not (np.isfinite(scale) and scale > 0):
        raise SerializationError("scale must be a positive finite number")
    if poly.ndim < 2 or poly.shape[-2] != level + 1:
        raise SerializationError("residue count does not match the level")
    if params is not None:
        if level > params.max_level:
            raise SerializationError(f"level {level} beyond the modulus chain")
        _check_poly(poly, level + 1, params.ring_dim, _TAG_NAMES[tag])
        _check_residues(poly, params.modulus_chain[: level + 1], _TAG_NAMES[tag])
    return poly, scale, level


def plaintext_to_bytes(pt: Plaintext) -> bytes:
    return _write_message(TAG_PLAINTEXT, pt.poly, pt.scale, pt.level)


def plaintext_from_bytes(data: bytes, params: CkksParams | None = None) -> Plaintext:
    poly, scale, level = _read_message(data, TAG_PLAINTEXT, params)
    if poly.ndim != 2:
        raise SerializationError("plaintext must be a single polynomial")
    return Plaintext(poly, scale, level)


def ciphertext_to_bytes(ct: Ciphertext) -> bytes:
    return _write_message(TAG_CIPHERTEXT, ct.parts, ct.scale, ct.level)


def ciphertext_from_bytes(data: bytes, params: CkksParams | None = None) -> Ciphertext:
    poly, scale, level = _read_message(data, TAG_CIPHERTEXT, params)
    if poly.ndim != 3 or poly.shape[0] not in (2, 3):
        raise SerializationError("ciphertext must have 2 or 3 parts")
    return Ciphertext(poly, scale, level)
