"""Client/server protocol: wire format, reference store, roles and transports."""

from .client import AuthClient, ClientResult, KeyCache, ProtocolFailure, TranscriptEntry
from .server import AuthServer, RetryLimiter, Session, SessionState, key_fingerprint
from .store import DuplicateSubject, ReferenceStore
from .transport import ConnectionClosed, connect_tcp, pipe, serve_inproc, serve_tcp

__all__ = [
    "AuthClient", "ClientResult", "KeyCache", "ProtocolFailure", "TranscriptEntry",
    "AuthServer", "RetryLimiter", "Session", "SessionState", "key_fingerprint",
    "DuplicateSubject", "ReferenceStore",
    "ConnectionClosed", "connect_tcp", "pipe", "serve_inproc", "serve_tcp",
]
