"""SIMD linear algebra on ciphertexts: inner products and block alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .ckks import Ciphertext, CkksContext, CkksError, EvaluationKeys, MissingKeyError


@dataclass(frozen=True)
class PackedLayout:
    """``modality_count`` templates of length ``template_len`` packed from slot 0."""

    template_len: int
    modality_count: int
    slot_capacity: int

    def __post_init__(self):
        if self.template_len < 1 or self.modality_count < 1:
            raise ValueError("template length and modality count must be positive")
        if self.template_len * self.modality_count > self.slot_capacity:
            raise ValueError(f"{self.modality_count} x {self.template_len} values do not fit "
                             f"in {self.slot_capacity} slots")

    @property
    def fused_len(self) -> int:
        return self.template_len * self.modality_count

    def block(self, j: int) -> slice:
        """Slot range of modality ``j`` (1-based)."""
        if not 1 <= j <= self.modality_count:
            raise ValueError(f"stage {j} outside 1..{self.modality_count}")
        d = self.template_len
        return slice((j - 1) * d, j * d)


def sum_steps(slot_count: int) -> list[int]:
    """Power-of-two rotation steps used by the rotate-and-sum reduction."""
    return [1 << i for i in range(int(math.log2(slot_count)))]


def rotation_steps_for(layout: PackedLayout) -> set[int]:
    steps = set(sum_steps(layout.slot_capacity))
    if layout.modality_count > 1:
        steps.add(layout.template_len % layout.slot_capacity)
    steps.discard(0)
    return steps


def slot_sum(ctx: CkksContext, ct: Ciphertext, evk: EvaluationKeys) -> Ciphertext:
    """Replicate the sum of all slots into every slot."""
    acc = ct
    for k in sum_steps(ctx.params.slot_count):
        acc = ctx.add(acc, ctx.rotate(acc, k, evk))
    return acc


def inner_product(ctx: CkksContext, a: Ciphertext, b: Ciphertext, evk: EvaluationKeys) -> Ciphertext:
    """Encrypted dot product, replicated in every slot.

    One ciphertext multiplication followed by log2(N/2) rotate-and-add steps.
    """
    missing = [k for k in sum_steps(ctx.params.slot_count) if k not in evk.galois_keys]
    if missing:
        raise MissingKeyError(f"rotate-and-sum needs Galois keys for steps {missing}")
    return slot_sum(ctx, ctx.mul(a, b, evk), evk)


def block_align(ctx: CkksContext, ref: Ciphertext, stage: int, layout: PackedLayout,
                evk: EvaluationKeys) -> Ciphertext:
    """Bring block ``stage`` of a packed reference to slots [0, d).

    Applies ``stage - 1`` rotations by d, so callers that align stage by stage
    should pass the already-aligned ciphertext with ``stage=2``.
    """
    layout.block(stage)
    out = ref
    for _ in range(stage - 1):
        out = ctx.rotate(out, layout.template_len, evk)
    return out


def accumulate_score(ctx: CkksContext, delta: Ciphertext | None, stage_ip: Ciphertext) -> Ciphertext:
    """Running encrypted sum of per-stage inner products."""
    if delta is None:
        return stage_ip
    if delta.level != stage_ip.level:
        low = min(delta.level, stage_ip.level)
        delta = ctx.drop_level(delta, low)
        stage_ip = ctx.drop_level(stage_ip, low)
    if not math.isclose(delta.scale, stage_ip.scale, rel_tol=1e-12):
        raise CkksError(f"cannot reconcile scales {delta.scale!r} and {stage_ip.scale!r}")
    return ctx.add(delta, stage_ip)
