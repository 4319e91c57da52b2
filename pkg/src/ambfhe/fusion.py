"""Sequential cascaded fusion over an encrypted concatenated reference.

The engine never sees the secret key: each cumulative encrypted score is
handed to a ``judge`` callback that plays the key-holder role and returns the
stage verdict. :class:`KeyHolderJudge` is the in-process implementation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .biometrics import FINGERPRINT, IRIS, FusedTemplate, Template
from .ckks import Ciphertext, CkksContext, EvaluationKeys, PublicKey, SecretKey, count_ops
from .linops import PackedLayout, accumulate_score, block_align, inner_product, slot_sum


class Mode(enum.Enum):
    SEQUENTIAL_OR = "or"
    UNCONDITIONAL_AND = "and"


class Decision(enum.Enum):
    ACCEPT = "accept"
    CONTINUE = "continue"
    REJECT = "reject"


class ProbeExhausted(RuntimeError):
    """The probe supplier ran out before the cascade finished."""


NAMED_POLICIES = {
    "amb-fhe-1": ((IRIS, FINGERPRINT), Mode.SEQUENTIAL_OR),
    "amb-fhe-2": ((FINGERPRINT, IRIS), Mode.SEQUENTIAL_OR),
    "multi-and": ((IRIS, FINGERPRINT), Mode.UNCONDITIONAL_AND),
}


@dataclass(frozen=True)
class MatchPolicy:
    modality_order: tuple[str, ...]
    thresholds: tuple[float, ...]
    mode: Mode = Mode.SEQUENTIAL_OR
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "modality_order", tuple(self.modality_order))
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if not self.modality_order:
            raise ValueError("policy needs at least one modality")
        want = len(self.modality_order) if self.mode is Mode.SEQUENTIAL_OR else 1
        if len(self.thresholds) != want:
            raise ValueError(f"{self.mode.name} policy over {len(self.modality_order)} modalities "
                             f"needs {want} threshold(s), got {len(self.thresholds)}")

    @classmethod
    def named(cls, name: str, thresholds: Sequence[float]) -> "MatchPolicy":
        try:
            order, mode = NAMED_POLICIES[name]
        except KeyError:
            raise ValueError(f"unknown policy {name!r}; choose from {', '.join(NAMED_POLICIES)}") from None
        return cls(order, tuple(thresholds), mode, name)

    @property
    def stages(self) -> int:
        return len(self.modality_order)

    def with_thresholds(self, thresholds: Sequence[float]) -> "MatchPolicy":
        return MatchPolicy(self.modality_order, tuple(thresholds), self.mode, self.name)


@dataclass(frozen=True)
class StageResult:
    stage: int
    cumulative_ip: float
    dissimilarity: float
    decision: Decision


@dataclass
class VerificationOutcome:
    decision: Decision
    stages_used: int
    stages: list[StageResult]
    op_counts: dict = field(default_factory=dict)
    op_seconds: dict = field(default_factory=dict)

    @property
    def accepted(self) -> bool:
        return self.decision is Decision.ACCEPT


def dissimilarity_from_ip(s: float, stages: int) -> float:
    """Cumulative squared Euclidean distance of ``stages`` unit-vector pairs."""
    return 2.0 * stages - 2.0 * s


def decide(s: float, stage: int, units: int, threshold: float, final: bool) -> StageResult:
    delta = dissimilarity_from_ip(s, units)
    if delta < threshold:
        verdict = Decision.ACCEPT
    else:
        verdict = Decision.REJECT if final else Decision.CONTINUE
    return StageResult(stage, s, delta, verdict)


Judge = Callable[[int, Ciphertext, bool], StageResult]


class KeyHolderJudge:
    """Decrypts slot 0 of a cumulative score and applies the stage threshold."""

    def __init__(self, ctx: CkksContext, sk: SecretKey, policy: MatchPolicy):
        self.ctx = ctx
        self.sk = sk
        self.policy = policy

    def __call__(self, stage: int, score: Ciphertext, final: bool) -> StageResult:
        s = float(self.ctx.decrypt_values(self.sk, score)[0])
        if self.policy.mode is Mode.UNCONDITIONAL_AND:
            return decide(s, stage, self.policy.stages, self.policy.thresholds[0], True)
        return decide(s, stage, stage, self.policy.thresholds[stage - 1], final)


@dataclass(frozen=True, eq=False)
class ClientKeys:
    """Public material available to the party computing on ciphertexts."""

    ctx: CkksContext
    pk: PublicKey
    evk: EvaluationKeys


def encrypt_reference(keys: ClientKeys, fused: FusedTemplate, rng=None) -> Ciphertext:
    ctx = keys.ctx
    return ctx.encrypt(keys.pk, ctx.encode(fused.vector), rng=rng)


def _check_probe(t: Template, modality: str, d: int):
    if t.modality != modality:
        raise ValueError(f"expected a {modality} probe, got {t.modality}")
    if t.dim != d:
        raise ValueError(f"probe length {t.dim} does not match template length {d}")


def stage_score(keys: ClientKeys, aligned_ref: Ciphertext, probe: Template, delta: Ciphertext | None,
                plaintext_probe: bool = False, rng=None) -> Ciphertext:
    """One incremental step: encrypt the probe at slots [0, d), multiply, sum, accumulate."""
    ctx = keys.ctx
    if plaintext_probe:
        pt = ctx.encode(probe.vector, level=aligned_ref.level)
        ip = slot_sum(ctx, ctx.mul_plain(aligned_ref, pt), keys.evk)
    else:
        enc = ctx.encrypt(keys.pk, ctx.encode(probe.vector, level=aligned_ref.level), rng=rng)
        ip = inner_product(ctx, aligned_ref, enc, keys.evk)
    return accumulate_score(ctx, delta, ip)


def verify_incremental(keys: ClientKeys, ref: Ciphertext, probes: Iterable[Template], policy: MatchPolicy,
                       judge: Judge, layout: PackedLayout, plaintext_probe: bool = False,
                       rng=None) -> VerificationOutcome:
    """Cascade over modalities, acquiring each probe only if the previous stage failed."""
    if policy.mode is not Mode.SEQUENTIAL_OR:
        raise ValueError("incremental verification needs a SEQUENTIAL_OR policy")
    if layout.modality_count != policy.stages:
        raise ValueError("layout and policy disagree on the number of modalities")
    it: Iterator[Template] = iter(probes)
    results: list[StageResult] = []
    delta = None
    aligned = ref
    with count_ops() as ops:
        for j in range(1, policy.stages + 1):
            try:
                probe = next(it)
            except StopIteration:
                raise ProbeExhausted(f"no probe supplied for stage {j}") from None
            _check_probe(probe, policy.modality_order[j - 1], layout.template_len)
            if j > 1:
                aligned = block_align(keys.ctx, aligned, 2, layout, keys.evk)
            delta = stage_score(keys, aligned, probe, delta, plaintext_probe, rng)
            res = judge(j, delta, j == policy.stages)
            results.append(res)
            if res.decision is not Decision.CONTINUE:
                break
    final = results[-1].decision
    return VerificationOutcome(final, len(results), results, dict(ops.counts), dict(ops.seconds))


def verify_unconditional(keys: ClientKeys, ref: Ciphertext, probe_fused: FusedTemplate, policy: MatchPolicy,
                         judge: Judge, rng=None) -> VerificationOutcome:
    """Single inner product over the full concatenation against one threshold."""
    if policy.mode is not Mode.UNCONDITIONAL_AND:
        raise ValueError("unconditional verification needs an UNCONDITIONAL_AND policy")
    if probe_fused.modalities != policy.modality_order:
        raise ValueError(f"probe modalities {probe_fused.modalities} do not match {policy.modality_order}")
    ctx = keys.ctx
    with count_ops() as ops:
        enc = ctx.encrypt(keys.pk, ctx.encode(probe_fused.vector, level=ref.level), rng=rng)
        score = inner_product(ctx, ref, enc, keys.evk)
        res = judge(1, score, True)
    return VerificationOutcome(res.decision, 1, [res], dict(ops.counts), dict(ops.seconds))


# -- plaintext reference ------------------------------------------------------------


def plain_cascade(reference: Sequence[Template], probes: Sequence[Template], policy: MatchPolicy):
    """Brute-force cascade on plaintext vectors using direct squared distances.

    Returns ``(decision, stages_used, cumulative dissimilarities)``.
    """
    if policy.mode is Mode.UNCONDITIONAL_AND:
        total = sum(float(np.sum((r.vector - p.vector) ** 2)) for r, p in zip(reference, probes))
        ok = total < policy.thresholds[0]
        return (Decision.ACCEPT if ok else Decision.REJECT), 1, [total]
    deltas = []
    acc = 0.0
    for j, (r, p) in enumerate(zip(reference, probes), start=1):
        acc += float(np.sum((r.vector - p.vector) ** 2))
        deltas.append(acc)
        if acc < policy.thresholds[j - 1]:
            return Decision.ACCEPT, j, deltas
    if len(deltas) < policy.stages:
        raise ProbeExhausted("fewer probes than policy stages")
    return Decision.REJECT, policy.stages, deltas


def stage_margins(deltas: Sequence[float], policy: MatchPolicy) -> float:
    """Smallest |delta_j - tau_j| over the evaluated stages."""
    taus = policy.thresholds if policy.mode is Mode.SEQUENTIAL_OR else policy.thresholds * len(deltas)
    return min((abs(d - t) for d, t in zip(deltas, taus)), default=math.inf)
