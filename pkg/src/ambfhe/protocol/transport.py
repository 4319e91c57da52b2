"""Reliable message transports: an in-process duplex pipe and TCP."""

from __future__ import annotations

import queue
import socket
import socketserver
import threading

from . import wire


class ConnectionClosed(EOFError):
    pass


class Transport:
    def send(self, msg) -> None:
        self.send_raw(wire.encode(msg))

    def send_raw(self, frame: bytes) -> None:
        raise NotImplementedError

    def recv(self, timeout: float | None = None):
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


_CLOSED = object()


class PipeEnd(Transport):
    """One end of an in-process pipe. Frames are passed as encoded bytes so
    both sides exercise the real wire codec."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._in = inbox
        self._out = outbox
        self._closed = False

    def send_raw(self, frame: bytes) -> None:
        if self._closed:
            raise ConnectionClosed("pipe closed")
        self._out.put(bytes(frame))

    def recv(self, timeout: float | None = None):
        try:
            item = self._in.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no message within timeout") from None
        if item is _CLOSED:
            self._in.put(_CLOSED)
            raise ConnectionClosed("peer closed the pipe")
        return wire.decode(item)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._out.put(_CLOSED)


def pipe() -> tuple[PipeEnd, PipeEnd]:
    a, b = queue.Queue(), queue.Queue()
    return PipeEnd(a, b), PipeEnd(b, a)


class SocketTransport(Transport):
    def __init__(self, sock: socket.socket):
        self.sock = sock

    def send_raw(self, frame: bytes) -> None:
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise ConnectionClosed(str(exc)) from exc

    def _read(self, n: int, what: str) -> bytes:
        chunks, got = [], 0
        while got < n:
            chunk = self.sock.recv(min(n - got, 1 << 20))
            if not chunk:
                if got == 0 and what == "header":
                    raise ConnectionClosed("peer closed the connection")
                code = (wire.WireErrorCode.TRUNCATED_HEADER if what == "header"
                        else wire.WireErrorCode.LENGTH_MISMATCH)
                raise wire.WireError(code, f"stream ended after {got} of {n} {what} bytes")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def recv(self, timeout: float | None = None):
        self.sock.settimeout(timeout)
        try:
            header = self._read(wire.HEADER_SIZE, "header")
            mtype, length = wire.parse_header(header)
            payload = self._read(length, "payload")
        except socket.timeout:
            raise TimeoutError("no message within timeout") from None
        return wire.decode_payload(mtype, payload)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def connect_tcp(host: str, port: int, timeout: float = 30.0) -> SocketTransport:
    return SocketTransport(socket.create_connection((host, port), timeout=timeout))


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        self.server.auth.serve(SocketTransport(self.request))


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def serve_tcp(auth_server, host: str = "127.0.0.1", port: int = 0, background: bool = True):
    """Bind a threaded TCP listener (``.server_address``); with ``background``
    it is already serving from a daemon thread, otherwise call ``serve_forever``."""
    srv = _TCPServer((host, port), _Handler)
    srv.auth = auth_server
    if background:
        threading.Thread(target=srv.serve_forever, name="afhe-tcp", daemon=True).start()
    return srv


def serve_inproc(auth_server) -> PipeEnd:
    """Run ``auth_server`` on one end of a fresh pipe; return the client end."""
    client, server = pipe()
    threading.Thread(target=auth_server.serve, args=(server,), name="afhe-inproc", daemon=True).start()
    return client
