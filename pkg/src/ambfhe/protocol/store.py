"""Append-log store of encrypted references keyed by subject id.

Record layout: u16 id_len, id (UTF-8), u64 blob_len, blob, u32 CRC32 over
everything before it. The latest record for an id wins. On load, a trailing
record that is incomplete or fails its checksum (an interrupted append) is
dropped and the file is truncated back to the last good record.
"""

from __future__ import annotations

import logging
import os
import struct
import threading
import zlib
from pathlib import Path

log = logging.getLogger(__name__)


class DuplicateSubject(KeyError):
    pass


def encode_record(subject_id: str, blob: bytes) -> bytes:
    sid = subject_id.encode("utf-8")
    if not sid or len(sid) > 0xFFFF:
        raise ValueError("subject id must be 1..65535 bytes")
    body = struct.pack("<H", len(sid)) + sid + struct.pack("<Q", len(blob)) + blob
    return body + struct.pack("<I", zlib.crc32(body))


def scan_records(data: bytes) -> tuple[list[tuple[str, bytes]], int]:
    """Parse records; return them with the offset just past the last good one."""
    out = []
    pos = 0
    n = len(data)
    while pos < n:
        start = pos
        if pos + 2 > n:
            break
        (ln,) = struct.unpack_from("<H", data, pos)
        pos += 2 + ln
        if pos + 8 > n:
            break
        (blen,) = struct.unpack_from("<Q", data, pos)
        pos += 8 + blen
        if pos + 4 > n:
            break
        (crc,) = struct.unpack_from("<I", data, pos)
        if zlib.crc32(data[start:pos]) != crc:
            break
        pos += 4
        try:
            sid = data[start + 2:start + 2 + ln].decode("utf-8")
        except UnicodeDecodeError:
            break
        out.append((sid, data[start + 2 + ln + 8:start + 2 + ln + 8 + blen]))
    else:
        return out, pos
    return out, start


class ReferenceStore:
    """Subject id -> opaque ciphertext blob, optionally persisted to ``path``.

    A single lock serializes writers; readers take it only to fetch a
    reference to the immutable blob.
    """

    def __init__(self, path=None, fsync: bool = True):
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self._lock = threading.Lock()
        self._data: dict[str, bytes] = {}
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.path.exists():
                self._load()

    def _load(self):
        raw = self.path.read_bytes()
        records, good = scan_records(raw)
        for sid, blob in records:
            self._data[sid] = blob
        if good < len(raw):
            log.warning("%s: dropping %d bytes of incomplete record", self.path, len(raw) - good)
            with open(self.path, "r+b") as f:
                f.truncate(good)

    def __contains__(self, subject_id: str) -> bool:
        return subject_id in self._data

    def __len__(self) -> int:
        return len(self._data)

    def ids(self) -> list[str]:
        return sorted(self._data)

    def get(self, subject_id: str) -> bytes | None:
        with self._lock:
            return self._data.get(subject_id)

    def put(self, subject_id: str, blob: bytes, replace: bool = False) -> None:
        rec = encode_record(subject_id, bytes(blob))
        with self._lock:
            if subject_id in self._data and not replace:
                raise DuplicateSubject(subject_id)
            if self.path is not None:
                self._append(rec)
            self._data[subject_id] = bytes(blob)

    def _append(self, rec: bytes):
        with open(self.path, "ab") as f:
            f.write(rec)
            f.flush()
            if self.fsync:
                os.fsync(f.fileno())
