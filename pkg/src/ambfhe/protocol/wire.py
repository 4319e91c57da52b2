"""Binary message framing for the enrollment/verification exchange.

Every frame is an 11-byte little-endian header (magic b"AFHE", u16 version,
u8 message type, u32 payload length) followed by the payload. Variable-size
fields carry their own length prefix; ciphertexts and keys are embedded as
opaque serialized blobs.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, fields

MAGIC = b"AFHE"
VERSION = 1
HEADER = struct.Struct("<4sHBI")
HEADER_SIZE = HEADER.size  # 11
MAX_PAYLOAD = (1 << 32) - 1
FINGERPRINT_SIZE = 32


class MsgType(enum.IntEnum):
    KEYS = 1
    ENROLL = 2
    ENROLL_OK = 3
    VERIFY_CLAIM = 4
    REFERENCE = 5
    SCORE = 6
    DECISION = 7
    ERROR = 8


class WireErrorCode(enum.IntEnum):
    TRUNCATED_HEADER = 1
    BAD_MAGIC = 2
    BAD_VERSION = 3
    UNKNOWN_TYPE = 4
    LENGTH_MISMATCH = 5
    MALFORMED_PAYLOAD = 6
    INVALID_FIELD = 7


class AppErrorCode(enum.IntEnum):
    """Codes carried inside ERROR messages."""

    UNKNOWN_SUBJECT = 100
    THROTTLED = 101
    DUPLICATE_SUBJECT = 102
    MODALITY_COUNT = 103
    UNEXPECTED_MESSAGE = 104
    STALE_STAGE = 105
    BAD_CIPHERTEXT = 106
    BAD_FRAME = 107


class WireError(ValueError):
    def __init__(self, code: WireErrorCode, detail: str):
        super().__init__(f"{code.name}: {detail}")
        self.code = code


ACCEPT = 1
REJECT = 0


# -- message variants ---------------------------------------------------------------


@dataclass(frozen=True)
class Keys:
    """Server -> client key delivery. Sent by the client with empty blobs as a
    request carrying the fingerprint of its cached keys (all zeros if none);
    the server answers with empty blobs when that fingerprint is current."""

    fingerprint: bytes
    public_key: bytes = b""
    eval_keys: bytes = b""
    TYPE = MsgType.KEYS


@dataclass(frozen=True)
class Enroll:
    subject_id: str
    modality_count: int
    ciphertext: bytes
    replace: bool = False
    TYPE = MsgType.ENROLL


@dataclass(frozen=True)
class EnrollOk:
    subject_id: str
    TYPE = MsgType.ENROLL_OK


@dataclass(frozen=True)
class VerifyClaim:
    subject_id: str
    TYPE = MsgType.VERIFY_CLAIM


@dataclass(frozen=True)
class Reference:
    ciphertext: bytes
    TYPE = MsgType.REFERENCE


@dataclass(frozen=True)
class Score:
    stage: int
    ciphertext: bytes
    TYPE = MsgType.SCORE


@dataclass(frozen=True)
class DecisionMsg:
    stage: int
    verdict: int
    TYPE = MsgType.DECISION

    @property
    def accepted(self) -> bool:
        return self.verdict == ACCEPT


@dataclass(frozen=True)
class ErrorMsg:
    code: int
    text: str = ""
    TYPE = MsgType.ERROR


Message = Keys | Enroll | EnrollOk | VerifyClaim | Reference | Score | DecisionMsg | ErrorMsg

MESSAGE_CLASSES = {cls.TYPE: cls for cls in
                   (Keys, Enroll, EnrollOk, VerifyClaim, Reference, Score, DecisionMsg, ErrorMsg)}


def message_schema() -> dict:
    """Field name -> annotated type for every message variant."""
    return {cls.TYPE.name: {f.name: f.type for f in fields(cls)} for cls in MESSAGE_CLASSES.values()}


# -- payload codecs -----------------------------------------------------------------


class _Buf:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WireError(WireErrorCode.MALFORMED_PAYLOAD, "field runs past end of payload")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        st = struct.Struct(fmt)
        return st.unpack(self.take(st.size))

    def text16(self) -> str:
        (n,) = self.unpack("<H")
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise WireError(WireErrorCode.INVALID_FIELD, "text is not valid UTF-8") from None

    def blob32(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)

    def end(self):
        if self.pos != len(self.data):
            raise WireError(WireErrorCode.MALFORMED_PAYLOAD, f"{len(self.data) - self.pos} unread payload bytes")


def _text16(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise WireError(WireErrorCode.INVALID_FIELD, "text field too long")
    return struct.pack("<H", len(raw)) + raw


def _blob32(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + bytes(b)


def _subject(s: str) -> str:
    if not s:
        raise WireError(WireErrorCode.INVALID_FIELD, "empty subject id")
    return s


def _stage(j: int) -> int:
    if not 1 <= j <= 255:
        raise WireError(WireErrorCode.INVALID_FIELD, f"stage {j} outside 1..255")
    return j


def encode_payload(msg) -> bytes:
    if isinstance(msg, Keys):
        if len(msg.fingerprint) != FINGERPRINT_SIZE:
            raise WireError(WireErrorCode.INVALID_FIELD, "fingerprint must be 32 bytes")
        return msg.fingerprint + _blob32(msg.public_key) + _blob32(msg.eval_keys)
    if isinstance(msg, Enroll):
        if not 1 <= msg.modality_count <= 255:
            raise WireError(WireErrorCode.INVALID_FIELD, "modality count outside 1..255")
        return (struct.pack("<BB", int(msg.replace), msg.modality_count) + _text16(_subject(msg.subject_id))
                + _blob32(msg.ciphertext))
    if isinstance(msg, (EnrollOk, VerifyClaim)):
        return _text16(_subject(msg.subject_id))
    if isinstance(msg, Reference):
        return _blob32(msg.ciphertext)
    if isinstance(msg, Score):
        return struct.pack("<B", _stage(msg.stage)) + _blob32(msg.ciphertext)
    if isinstance(msg, DecisionMsg):
        if msg.verdict not in (ACCEPT, REJECT):
            raise WireError(WireErrorCode.INVALID_FIELD, "verdict must be 0 or 1")
        return struct.pack("<BB", _stage(msg.stage), msg.verdict)
    if isinstance(msg, ErrorMsg):
        return struct.pack("<H", msg.code) + _text16(msg.text)
    raise TypeError(f"not a protocol message: {msg!r}")


def decode_payload(mtype: MsgType, payload: bytes):
    b = _Buf(payload)
    if mtype is MsgType.KEYS:
        msg = Keys(b.take(FINGERPRINT_SIZE), b.blob32(), b.blob32())
    elif mtype is MsgType.ENROLL:
        flags, count = b.unpack("<BB")
        if flags > 1:
            raise WireError(WireErrorCode.INVALID_FIELD, f"unknown enroll flags {flags:#x}")
        if count == 0:
            raise WireError(WireErrorCode.INVALID_FIELD, "modality count is zero")
        msg = Enroll(_subject(b.text16()), count, b.blob32(), bool(flags))
    elif mtype is MsgType.ENROLL_OK:
        msg = EnrollOk(_subject(b.text16()))
    elif mtype is MsgType.VERIFY_CLAIM:
        msg = VerifyClaim(_subject(b.text16()))
    elif mtype is MsgType.REFERENCE:
        msg = Reference(b.blob32())
    elif mtype is MsgType.SCORE:
        (stage,) = b.unpack("<B")
        msg = Score(_stage(stage), b.blob32())
    elif mtype is MsgType.DECISION:
        stage, verdict = b.unpack("<BB")
        if verdict not in (ACCEPT, REJECT):
            raise WireError(WireErrorCode.INVALID_FIELD, f"verdict {verdict} is not binary")
        msg = DecisionMsg(_stage(stage), verdict)
    elif mtype is MsgType.ERROR:
        (code,) = b.unpack("<H")
        msg = ErrorMsg(code, b.text16())
    else:  # pragma: no cover - MsgType is closed
        raise WireError(WireErrorCode.UNKNOWN_TYPE, str(mtype))
    b.end()
    return msg


# -- frames ---------------------------------------------------------------------------


def encode(msg) -> bytes:
    payload = encode_payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise WireError(WireErrorCode.LENGTH_MISMATCH, "payload exceeds u32 length")
    return HEADER.pack(MAGIC, VERSION, int(msg.TYPE), len(payload)) + payload


def parse_header(header: bytes) -> tuple[MsgType, int]:
    if len(header) < HEADER_SIZE:
        raise WireError(WireErrorCode.TRUNCATED_HEADER, f"{len(header)} of {HEADER_SIZE} header bytes")
    magic, version, mtype, length = HEADER.unpack(header[:HEADER_SIZE])
    if magic != MAGIC:
        raise WireError(WireErrorCode.BAD_MAGIC, repr(magic))
    if version != VERSION:
        raise WireError(WireErrorCode.BAD_VERSION, f"version {version}")
    try:
        t = MsgType(mtype)
    except ValueError:
        raise WireError(WireErrorCode.UNKNOWN_TYPE, f"type {mtype}") from None
    return t, length


def decode(frame: bytes):
    """Decode exactly one frame; the buffer must hold nothing else."""
    mtype, length = parse_header(frame)
    payload = frame[HEADER_SIZE:]
    if len(payload) != length:
        raise WireError(WireErrorCode.LENGTH_MISMATCH, f"header says {length} bytes, got {len(payload)}")
    return decode_payload(mtype, payload)
