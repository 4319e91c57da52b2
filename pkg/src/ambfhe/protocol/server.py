"""Verifier role: holds the key pair, stores encrypted references, and turns
encrypted cumulative scores into binary decisions."""

from __future__ import annotations

import enum
import hashlib
import itertools
import logging
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass

from ..ckks import (CkksContext, EvaluationKeys, PublicKey, SecretKey, SerializationError,
                    ciphertext_from_bytes, eval_keys_to_bytes, public_key_to_bytes)
from ..fusion import Decision, MatchPolicy, Mode, decide
from . import wire
from .store import DuplicateSubject, ReferenceStore
from .transport import ConnectionClosed, Transport

log = logging.getLogger(__name__)


class RetryLimiter:
    """At most ``limit`` failed sessions per subject inside a sliding window."""

    def __init__(self, limit: int = 5, window: float = 300.0, clock=time.monotonic):
        if limit < 1 or window <= 0:
            raise ValueError("retry limit and window must be positive")
        self.limit = limit
        self.window = window
        self.clock = clock
        self._fails: dict[str, deque] = defaultdict(deque)
        self._lock = threading.Lock()

    def _prune(self, subject: str) -> deque:
        q = self._fails[subject]
        cutoff = self.clock() - self.window
        while q and q[0] <= cutoff:
            q.popleft()
        return q

    def failures(self, subject: str) -> int:
        with self._lock:
            return len(self._prune(subject))

    def blocked(self, subject: str) -> bool:
        return self.failures(subject) >= self.limit

    def record_failure(self, subject: str) -> None:
        with self._lock:
            self._prune(subject).append(self.clock())

    def reset(self, subject: str) -> None:
        with self._lock:
            self._fails.pop(subject, None)


class SessionState(enum.Enum):
    AWAIT_SCORE = "await_score"
    AWAIT_NEXT_MODALITY = "await_next_modality"
    CLOSED = "closed"


@dataclass
class Session:
    session_id: int
    subject_id: str
    stage: int = 1
    retries: int = 0
    state: SessionState = SessionState.AWAIT_SCORE


def key_fingerprint(pk_bytes: bytes, evk_bytes: bytes) -> bytes:
    return hashlib.sha256(pk_bytes + evk_bytes).digest()


class _Conn:
    def __init__(self):
        self.session: Session | None = None


class AuthServer:
    """Stateless apart from the reference store, the retry limiter and the
    per-connection session; safe to serve several connections at once."""

    def __init__(self, ctx: CkksContext, sk: SecretKey, pk: PublicKey, evk: EvaluationKeys,
                 policy: MatchPolicy, store: ReferenceStore | None = None,
                 limiter: RetryLimiter | None = None):
        self.ctx = ctx
        self.sk = sk
        self.policy = policy
        self.store = store if store is not None else ReferenceStore()
        self.limiter = limiter if limiter is not None else RetryLimiter()
        self.pk_bytes = public_key_to_bytes(pk)
        self.evk_bytes = eval_keys_to_bytes(evk)
        self.fingerprint = key_fingerprint(self.pk_bytes, self.evk_bytes)
        self._ids = itertools.count(1)
        # a fresh reference sits at the top level; one multiplication later
        # every score ciphertext is one level lower
        self.score_level = ctx.params.max_level - 1

    # -- connection loop ------------------------------------------------------------

    def serve(self, transport: Transport) -> None:
        conn = _Conn()
        try:
            while True:
                try:
                    msg = transport.recv()
                except ConnectionClosed:
                    break
                except wire.WireError as exc:
                    log.info("bad frame: %s", exc)
                    transport.send(wire.ErrorMsg(wire.AppErrorCode.BAD_FRAME, exc.code.name))
                    break
                for reply in self.handle(conn, msg):
                    transport.send(reply)
        except ConnectionClosed:
            pass
        finally:
            transport.close()

    def handle(self, conn: _Conn, msg) -> list:
        if isinstance(msg, wire.Keys):
            if msg.fingerprint == self.fingerprint:
                return [wire.Keys(self.fingerprint)]
            return [wire.Keys(self.fingerprint, self.pk_bytes, self.evk_bytes)]
        if isinstance(msg, wire.Enroll):
            return [self.enroll(msg)]
        if isinstance(msg, wire.VerifyClaim):
            return [self.start_session(conn, msg.subject_id)]
        if isinstance(msg, wire.Score):
            return [self.on_score(conn, msg)]
        return [_error(wire.AppErrorCode.UNEXPECTED_MESSAGE, f"server does not accept {msg.TYPE.name}")]

    # -- enrollment -----------------------------------------------------------------

    def enroll(self, msg: wire.Enroll):
        if msg.modality_count != self.policy.stages:
            return _error(wire.AppErrorCode.MODALITY_COUNT,
                          f"policy expects {self.policy.stages} modalities, got {msg.modality_count}")
        try:
            ct = ciphertext_from_bytes(msg.ciphertext, self.ctx.params)
        except SerializationError as exc:
            return _error(wire.AppErrorCode.BAD_CIPHERTEXT, str(exc))
        if ct.size != 2 or ct.level != self.ctx.params.max_level:
            return _error(wire.AppErrorCode.BAD_CIPHERTEXT, "reference must be a fresh 2-part ciphertext")
        try:
            self.store.put(msg.subject_id, msg.ciphertext, replace=msg.replace)
        except DuplicateSubject:
            return _error(wire.AppErrorCode.DUPLICATE_SUBJECT, f"{msg.subject_id} already enrolled")
        log.info("enrolled %s", msg.subject_id)
        return wire.EnrollOk(msg.subject_id)

    # -- verification ---------------------------------------------------------------

    def start_session(self, conn: _Conn, subject_id: str):
        conn.session = None
        if self.limiter.blocked(subject_id):
            return _error(wire.AppErrorCode.THROTTLED, "too many failed attempts")
        blob = self.store.get(subject_id)
        if blob is None:
            return _error(wire.AppErrorCode.UNKNOWN_SUBJECT, "no reference for claimed identity")
        conn.session = Session(next(self._ids), subject_id, retries=self.limiter.failures(subject_id))
        return wire.Reference(blob)

    def on_score(self, conn: _Conn, msg: wire.Score):
        s = conn.session
        if s is None or s.state is SessionState.CLOSED:
            return _error(wire.AppErrorCode.UNEXPECTED_MESSAGE, "no open verification session")
        if msg.stage != s.stage:
            s.state = SessionState.CLOSED
            return _error(wire.AppErrorCode.STALE_STAGE, f"expected stage {s.stage}, got {msg.stage}")
        try:
            return self.decrypt_and_decide(s, msg)
        except SerializationError as exc:
            s.state = SessionState.CLOSED
            return _error(wire.AppErrorCode.BAD_CIPHERTEXT, str(exc))

    def decrypt_and_decide(self, session: Session, msg: wire.Score) -> wire.DecisionMsg:
        """Decrypt slot 0, compare the cumulative dissimilarity, answer one bit."""
        ct = ciphertext_from_bytes(msg.ciphertext, self.ctx.params)
        if ct.size != 2 or ct.level != self.score_level:
            raise SerializationError(f"score ciphertext at level {ct.level}, expected {self.score_level}")
        s = float(self.ctx.decrypt_values(self.sk, ct)[0])
        p = self.policy
        if p.mode is Mode.UNCONDITIONAL_AND:
            res = decide(s, session.stage, p.stages, p.thresholds[0], True)
        else:
            res = decide(s, session.stage, session.stage, p.thresholds[session.stage - 1],
                         session.stage == p.stages)
        if res.decision is Decision.ACCEPT:
            session.state = SessionState.CLOSED
            self.limiter.reset(session.subject_id)
        elif res.decision is Decision.REJECT:
            session.state = SessionState.CLOSED
            self.limiter.record_failure(session.subject_id)
        else:
            session.state = SessionState.AWAIT_NEXT_MODALITY
            session.stage += 1
        log.info("session %d stage %d: %s", session.session_id, msg.stage, res.decision.name)
        verdict = wire.ACCEPT if res.decision is Decision.ACCEPT else wire.REJECT
        return wire.DecisionMsg(msg.stage, verdict)


def _error(code: wire.AppErrorCode, text: str) -> wire.ErrorMsg:
    return wire.ErrorMsg(int(code), text)
