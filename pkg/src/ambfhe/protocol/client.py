"""Capture-side role: encrypts and enrolls references, runs the incremental
comparison on ciphertexts, and sends encrypted scores for a verdict."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..biometrics import Template, concatenate
from ..ckks import (CkksContext, SerializationError, ciphertext_from_bytes, ciphertext_to_bytes,
                    eval_keys_from_bytes, public_key_from_bytes)
from ..fusion import (ClientKeys, Decision, MatchPolicy, Mode, StageResult, encrypt_reference,
                      verify_incremental, verify_unconditional)
from ..linops import PackedLayout
from . import wire
from .server import key_fingerprint
from .transport import Transport

log = logging.getLogger(__name__)


class ProtocolFailure(RuntimeError):
    def __init__(self, code: int, text: str):
        super().__init__(f"server error {code}: {text}")
        self.code = code
        self.text = text


@dataclass(frozen=True)
class TranscriptEntry:
    direction: str  # "C->S", "S->C" or "client" for local computation
    kind: str
    stage: int | None = None
    message: object = None


@dataclass
class ClientResult:
    accepted: bool
    stages_used: int
    transcript: list[TranscriptEntry]
    captures: list[str] = field(default_factory=list)
    error: ProtocolFailure | None = None
    op_counts: dict = field(default_factory=dict)


class KeyCache:
    """Deserialized server keys, keyed by fingerprint."""

    def __init__(self):
        self._keys: dict[bytes, ClientKeys] = {}
        self.latest: bytes | None = None

    def get(self, fp: bytes) -> ClientKeys | None:
        return self._keys.get(fp)

    def put(self, fp: bytes, keys: ClientKeys):
        self._keys[fp] = keys
        self.latest = fp


class AuthClient:
    def __init__(self, transport: Transport, policy: MatchPolicy, template_len: int = 512,
                 key_cache: KeyCache | None = None, rng=None, plaintext_probe: bool = False):
        self.t = transport
        self.policy = policy
        self.template_len = template_len
        self.cache = key_cache if key_cache is not None else KeyCache()
        self.rng = rng
        self.plaintext_probe = plaintext_probe
        self._transcript: list[TranscriptEntry] | None = None

    # -- messaging --------------------------------------------------------------------

    def _send(self, msg, stage=None):
        if self._transcript is not None and not isinstance(msg, wire.Keys):
            self._transcript.append(TranscriptEntry("C->S", msg.TYPE.name, stage, msg))
        self.t.send(msg)

    def _recv(self, *expect):
        msg = self.t.recv()
        if self._transcript is not None and not isinstance(msg, wire.Keys):
            self._transcript.append(TranscriptEntry("S->C", msg.TYPE.name, getattr(msg, "stage", None), msg))
        if isinstance(msg, wire.ErrorMsg):
            raise ProtocolFailure(msg.code, msg.text)
        if not isinstance(msg, expect):
            raise ProtocolFailure(int(wire.AppErrorCode.UNEXPECTED_MESSAGE), f"unexpected {msg.TYPE.name}")
        return msg

    def fetch_keys(self) -> ClientKeys:
        fp = self.cache.latest or bytes(wire.FINGERPRINT_SIZE)
        self._send(wire.Keys(fp))
        reply = self._recv(wire.Keys)
        cached = self.cache.get(reply.fingerprint)
        if cached is not None and not reply.public_key:
            return cached
        if key_fingerprint(reply.public_key, reply.eval_keys) != reply.fingerprint:
            raise ProtocolFailure(int(wire.AppErrorCode.BAD_CIPHERTEXT), "key fingerprint mismatch")
        try:
            pk = public_key_from_bytes(reply.public_key)
            evk = eval_keys_from_bytes(reply.eval_keys, pk.params)
        except SerializationError as exc:
            raise ProtocolFailure(int(wire.AppErrorCode.BAD_CIPHERTEXT), str(exc)) from exc
        keys = ClientKeys(CkksContext(pk.params), pk, evk)
        self.cache.put(reply.fingerprint, keys)
        return keys

    # -- enrollment -------------------------------------------------------------------

    def enroll(self, subject_id: str, templates: Sequence[Template], replace: bool = False) -> wire.EnrollOk:
        keys = self.fetch_keys()
        ct = encrypt_reference(keys, concatenate(list(templates)), rng=self.rng)
        self._send(wire.Enroll(subject_id, len(templates), ciphertext_to_bytes(ct), replace))
        return self._recv(wire.EnrollOk)

    # -- verification -----------------------------------------------------------------

    def verify(self, subject_id: str, capture: Callable[[str], Template]) -> ClientResult:
        """Run one verification session; ``capture(modality)`` acquires a probe."""
        transcript: list[TranscriptEntry] = []
        captures: list[str] = []
        keys = self.fetch_keys()
        self._transcript = transcript
        try:
            self._send(wire.VerifyClaim(subject_id))
            ref_msg = self._recv(wire.Reference)
            try:
                ref = ciphertext_from_bytes(ref_msg.ciphertext, keys.ctx.params)
            except SerializationError as exc:
                raise ProtocolFailure(int(wire.AppErrorCode.BAD_CIPHERTEXT), str(exc)) from exc

            def acquire(modality):
                captures.append(modality)
                return capture(modality)

            def judge(stage, score, final) -> StageResult:
                transcript.append(TranscriptEntry("client", "COMPUTE", stage))
                self._send(wire.Score(stage, ciphertext_to_bytes(score)), stage)
                d = self._recv(wire.DecisionMsg)
                if d.stage != stage:
                    raise ProtocolFailure(int(wire.AppErrorCode.STALE_STAGE), "decision for another stage")
                if d.accepted:
                    verdict = Decision.ACCEPT
                else:
                    verdict = Decision.REJECT if final else Decision.CONTINUE
                return StageResult(stage, math.nan, math.nan, verdict)

            if self.policy.mode is Mode.UNCONDITIONAL_AND:
                probe = concatenate([acquire(m) for m in self.policy.modality_order])
                out = verify_unconditional(keys, ref, probe, self.policy, judge, rng=self.rng)
            else:
                layout = PackedLayout(self.template_len, self.policy.stages, keys.ctx.params.slot_count)
                probes = (acquire(m) for m in self.policy.modality_order)
                out = verify_incremental(keys, ref, probes, self.policy, judge, layout,
                                         plaintext_probe=self.plaintext_probe, rng=self.rng)
            return ClientResult(out.accepted, out.stages_used, transcript, captures, op_counts=out.op_counts)
        except ProtocolFailure as exc:
            log.info("verification of %s failed: %s", subject_id, exc)
            return ClientResult(False, 0, transcript, captures, error=exc)
        finally:
            self._transcript = None
