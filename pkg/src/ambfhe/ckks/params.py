"""CKKS parameter sets and named presets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

from .modarith import MAX_PRIME_BITS, RnsBasis, find_ntt_primes


class ParamError(ValueError):
    pass


@dataclass(frozen=True)
class CkksParams:
    """Ring dimension, modulus chain and encoding scale.

    ``modulus_chain`` is ordered q_0 (base prime) .. q_L (top level); a
    ciphertext at level l lives modulo q_0 * ... * q_l. ``special_prime`` is
    the auxiliary key-switching modulus P and is never part of a ciphertext
    modulus. Key switching decomposes each residue into ``digit_bits``-wide
    digits.
    """

    ring_dim: int
    modulus_chain: tuple[int, ...]
    special_prime: int
    scale: float = 2.0 ** 40
    digit_bits: int = 20
    preset_name: str | None = None
    security_bits: int = 0
    _basis: RnsBasis | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.ring_dim
        object.__setattr__(self, "modulus_chain", tuple(int(q) for q in self.modulus_chain))
        if n < 8 or n & (n - 1):
            raise ParamError(f"ring dimension must be a power of two >= 8, got {n}")
        if len(self.modulus_chain) < 2:
            raise ParamError("modulus chain needs a base prime and at least one scaling prime")
        primes = self.modulus_chain + (self.special_prime,)
        if len(set(primes)) != len(primes):
            raise ParamError("chain primes and special prime must be distinct")
        for p in primes:
            if p.bit_length() > MAX_PRIME_BITS or (p - 1) % (2 * n):
                raise ParamError(f"{p} is not a <= {MAX_PRIME_BITS}-bit prime = 1 mod {2 * n}")
        if not 0 < self.scale < self.modulus_chain[0] / 2:
            raise ParamError("scale must be positive and below half the base prime")
        if self.scale ** 2 / max(self.modulus_chain[1:]) >= self.modulus_chain[0] / 2:
            raise ParamError("scale too large for one rescale per multiplication")
        if not 1 <= self.digit_bits <= MAX_PRIME_BITS:
            raise ParamError("digit_bits out of range")

    @property
    def slot_count(self) -> int:
        return self.ring_dim // 2

    @property
    def max_level(self) -> int:
        return len(self.modulus_chain) - 1

    @property
    def log_qp(self) -> int:
        return sum(p.bit_length() for p in self.modulus_chain) + self.special_prime.bit_length()

    @property
    def basis(self) -> RnsBasis:
        """NTT tables for chain primes followed by the special prime."""
        if self._basis is None:
            object.__setattr__(self, "_basis", _basis_for(self.ring_dim, self.modulus_chain + (self.special_prime,)))
        return self._basis

    def digits_per_prime(self, level: int) -> list[int]:
        return [math.ceil(q.bit_length() / self.digit_bits) for q in self.modulus_chain[: level + 1]]

    @classmethod
    def build(cls, ring_dim: int, chain_bits=(50, 40, 40), special_bits: int = 50,
              scale: float = 2.0 ** 40, digit_bits: int = 20, name: str | None = None,
              security_bits: int = 0) -> "CkksParams":
        """Generate NTT-friendly primes for the requested bit sizes."""
        used: list[int] = []
        chain = []
        for bits in chain_bits:
            p = find_ntt_primes(bits, 1, ring_dim, exclude=used)[0]
            used.append(p)
            chain.append(p)
        special = find_ntt_primes(special_bits, 1, ring_dim, exclude=used)[0]
        return cls(ring_dim, tuple(chain), special, scale, digit_bits, name, security_bits)


@lru_cache(maxsize=None)
def _basis_for(ring_dim: int, primes: tuple[int, ...]) -> RnsBasis:
    return RnsBasis(ring_dim, primes)


# name -> (N, chain bits, special bits, digit bits, lambda)
_PRESETS = {
    # insecure, for tests and worked examples only
    "TOY16": (16, (50, 40, 40), 50, 20, 0),
    "PN12QP109": (4096, (45, 40), 24, 24, 128),
    "PN13QP218": (8192, (50, 40, 40, 40), 48, 40, 128),
}

PRESET_NAMES = tuple(_PRESETS)


@lru_cache(maxsize=None)
def preset(name: str) -> CkksParams:
    try:
        n, chain, special, digit, lam = _PRESETS[name.upper()]
    except KeyError:
        raise ParamError(f"unknown preset {name!r}; choose from {', '.join(_PRESETS)}") from None
    return CkksParams.build(n, chain, special, digit_bits=digit, name=name.upper(), security_bits=lam)
