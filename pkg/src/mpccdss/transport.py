"""Ordered reliable frame channels: in-process loopback and TCP.

Both transports present the same blocking send/recv interface and meter
bytes at frame granularity, so the protocol suite runs identically on
either. The TCP flavour drains the socket on a background thread; with
batched openings both parties send large frames simultaneously, and without
an independent reader the two ends can deadlock on full send buffers.
"""

from __future__ import annotations

import queue
import socket
import threading
import time
from typing import Callable

from .errors import ConnectError, ConnectionLost, FrameError, HandshakeError
from .wire import (
    MAX_FRAME_LEN,
    FrameBuffer,
    Hello,
    MessageType,
    ROLE_CLIENT,
    WILDCARD_SESSION,
    decode_abort,
    decode_hello,
    encode_abort,
    encode_frame,
    encode_hello,
)

# tap callback: (sender_label, msg_type, payload)
Tap = Callable[[str, MessageType, bytes], None]


class Transport:
    """Blocking frame channel; counters meter encoded frame bytes."""

    bytes_sent: int = 0
    bytes_received: int = 0

    def send(self, msg_type: MessageType, payload: bytes = b"") -> None:
        raise NotImplementedError

    def recv(self, timeout: float | None) -> tuple[MessageType, bytes]:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


_EOF = object()


class LoopbackTransport(Transport):
    """One end of an in-process channel backed by a queue pair."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, name: str = "",
                 tap: Tap | None = None):
        self._inbox = inbox
        self._outbox = outbox
        self._name = name
        self._tap = tap
        self._closed = False
        self.bytes_sent = 0
        self.bytes_received = 0

    def send(self, msg_type: MessageType, payload: bytes = b"") -> None:
        if self._closed:
            raise ConnectionLost("channel closed")
        if 1 + len(payload) > MAX_FRAME_LEN:
            raise FrameError(f"frame of {1 + len(payload)} bytes exceeds the 64 MiB cap")
        self.bytes_sent += 5 + len(payload)
        if self._tap is not None:
            self._tap(self._name, msg_type, payload)
        self._outbox.put((msg_type, bytes(payload)))

    def recv(self, timeout: float | None) -> tuple[MessageType, bytes]:
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ConnectionLost(f"peer silent for {timeout}s") from None
        if item is _EOF:
            self._inbox.put(_EOF)  # keep subsequent recvs failing too
            raise ConnectionLost("peer closed the channel")
        msg_type, payload = item
        self.bytes_received += 5 + len(payload)
        return msg_type, payload

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(_EOF)


def loopback_pair(names: tuple[str, str] = ("a", "b"),
                  tap: Tap | None = None) -> tuple[LoopbackTransport, LoopbackTransport]:
    qa: queue.Queue = queue.Queue()
    qb: queue.Queue = queue.Queue()
    return (
        LoopbackTransport(inbox=qa, outbox=qb, name=names[0], tap=tap),
        LoopbackTransport(inbox=qb, outbox=qa, name=names[1], tap=tap),
    )


class TcpTransport(Transport):
    """Frame channel over a connected socket with a background reader."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._send_lock = threading.Lock()
        self._frames: queue.Queue = queue.Queue()
        self._closed = False
        self.bytes_sent = 0
        self.bytes_received = 0
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        buf = FrameBuffer()
        try:
            while True:
                data = self._sock.recv(1 << 16)
                if not data:
                    self._frames.put(_EOF)
                    return
                self.bytes_received += len(data)
                buf.feed(data)
                while (frame := buf.next_frame()) is not None:
                    self._frames.put(frame)
        except Exception as exc:  # socket error or malformed frame
            self._frames.put(exc)

    def send(self, msg_type: MessageType, payload: bytes = b"") -> None:
        data = encode_frame(msg_type, payload)
        try:
            with self._send_lock:
                self._sock.sendall(data)
        except OSError as exc:
            raise ConnectionLost(f"send failed: {exc}") from exc
        self.bytes_sent += len(data)

    def recv(self, timeout: float | None) -> tuple[MessageType, bytes]:
        try:
            item = self._frames.get(timeout=timeout)
        except queue.Empty:
            raise ConnectionLost(f"peer silent for {timeout}s") from None
        if item is _EOF:
            self._frames.put(_EOF)
            raise ConnectionLost("peer closed the connection")
        if isinstance(item, Exception):
            self._frames.put(item)
            raise item if isinstance(item, FrameError) else ConnectionLost(str(item))
        return item

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ConnectError(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


class TcpListener:
    def __init__(self, addr: str):
        host, port = parse_addr(addr)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((host, port))
        except OSError as exc:
            raise ConnectError(f"cannot listen on {addr}: {exc}") from exc
        self._sock.listen(16)

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    def accept(self, timeout: float | None = None) -> TcpTransport:
        self._sock.settimeout(timeout)
        try:
            conn, _ = self._sock.accept()
        except socket.timeout:
            raise ConnectionLost(f"no connection within {timeout}s") from None
        except OSError as exc:
            raise ConnectError(str(exc)) from exc
        return TcpTransport(conn)

    def close(self) -> None:
        self._sock.close()


def connect_tcp(addr: str, timeout: float = 5.0, retry_for: float = 0.0) -> TcpTransport:
    """Dial addr; optionally keep retrying (peer may not be up yet)."""
    host, port = parse_addr(addr)
    deadline = time.monotonic() + retry_for
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return TcpTransport(sock)
        except OSError as exc:
            if time.monotonic() >= deadline:
                raise ConnectError(f"cannot connect to {addr}: {exc}") from exc
            time.sleep(0.05)


# ---------------------------------------------------------------------------
# HELLO exchange

_CHECKED_FIELDS = ("version", "modulus", "n_bits", "n_treatments", "mode_code")


def _check_compatible(mine: Hello, theirs: Hello, allow_wildcard_session: bool) -> None:
    for name in _CHECKED_FIELDS:
        a, b = getattr(mine, name), getattr(theirs, name)
        if a != b:
            raise HandshakeError(f"{name} mismatch: ours {a}, theirs {b}")
    if theirs.session_id == mine.session_id:
        return
    if (allow_wildcard_session and theirs.role == ROLE_CLIENT
            and theirs.session_id == WILDCARD_SESSION):
        return
    raise HandshakeError(
        f"session_id mismatch: ours {mine.session_id.hex()}, theirs {theirs.session_id.hex()}"
    )


def client_handshake(t: Transport, mine: Hello, timeout: float) -> Hello:
    """Dialing side: send HELLO first, then validate the reply."""
    t.send(MessageType.HELLO, encode_hello(mine))
    msg_type, payload = t.recv(timeout)
    if msg_type == MessageType.ABORT:
        raise HandshakeError(f"peer refused: {decode_abort(payload)}")
    if msg_type != MessageType.HELLO:
        raise HandshakeError(f"expected HELLO, got {msg_type.name}")
    theirs = decode_hello(payload)
    # a wildcard on our side means "adopt the server's session"
    effective = mine if mine.session_id != WILDCARD_SESSION else \
        Hello(theirs.session_id, mine.role, mine.node_id, mine.modulus,
              mine.n_bits, mine.n_treatments, mine.mode_code, mine.version)
    _check_compatible(effective, theirs, allow_wildcard_session=False)
    return theirs


def server_handshake(t: Transport, mine: Hello, timeout: float,
                     allow_wildcard_session: bool = True) -> Hello:
    """Accepting side: read the dialer's HELLO, validate, reply with ours."""
    msg_type, payload = t.recv(timeout)
    if msg_type != MessageType.HELLO:
        raise HandshakeError(f"expected HELLO, got {msg_type.name}")
    theirs = decode_hello(payload)
    try:
        _check_compatible(mine, theirs, allow_wildcard_session)
    except HandshakeError as exc:
        t.send(MessageType.ABORT, encode_abort(str(exc)))
        raise
    t.send(MessageType.HELLO, encode_hello(mine))
    return theirs
