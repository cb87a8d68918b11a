"""Bit-exact message framing shared by every channel in the system.

Frame layout: u32 big-endian length (covering type byte + payload), u8
message type, payload bytes. All multi-byte protocol integers are big-endian
except field elements, which use the fixed 16-byte little-endian encoding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from .errors import FrameError, NeedMoreBytes, ProtocolError

MAX_FRAME_LEN = 64 * 1024 * 1024  # type byte + payload
PROTOCOL_VERSION = 1

_HEADER = struct.Struct(">IB")


class MessageType(IntEnum):
    HELLO = 1
    INGEST_BATCH = 2
    INGEST_ACK = 3
    QUERY_SUBMIT = 4
    RESULT_SHARE = 5
    OPEN_BATCH = 6
    SYNC = 7
    COMMIT = 8
    REVEAL = 9
    ABORT = 10


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    length = 1 + len(payload)
    if length > MAX_FRAME_LEN:
        raise FrameError(f"frame of {length} bytes exceeds the 64 MiB cap")
    return _HEADER.pack(length, msg_type) + payload


def decode_frame(data: bytes) -> tuple[MessageType, bytes]:
    """Decode exactly one frame; trailing bytes are an error."""
    msg_type, payload, consumed = try_decode_frame(data)
    if consumed != len(data):
        raise FrameError(f"{len(data) - consumed} trailing bytes after frame")
    return msg_type, payload


def try_decode_frame(data: bytes) -> tuple[MessageType, bytes, int]:
    """Decode one frame from the head of ``data``; returns bytes consumed.

    Raises NeedMoreBytes when the buffer holds only a frame prefix, so
    stream readers can retry after the next read.
    """
    if len(data) < 5:
        raise NeedMoreBytes(f"have {len(data)} bytes, need at least 5")
    length = int.from_bytes(data[:4], "big")
    if length < 1:
        raise FrameError("frame length field below minimum of 1")
    if length > MAX_FRAME_LEN:
        raise FrameError(f"frame length {length} exceeds the 64 MiB cap")
    end = 4 + length
    if len(data) < end:
        raise NeedMoreBytes(f"have {len(data)} bytes of a {end}-byte frame")
    raw_type = data[4]
    try:
        msg_type = MessageType(raw_type)
    except ValueError:
        raise ProtocolError(f"unknown message type {raw_type}") from None
    return msg_type, bytes(data[5:end]), end


class FrameBuffer:
    """Incremental decoder for a byte stream arriving in arbitrary chunks."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> None:
        self._buf.extend(data)

    def next_frame(self) -> tuple[MessageType, bytes] | None:
        try:
            msg_type, payload, consumed = try_decode_frame(self._buf)
        except NeedMoreBytes:
            return None
        del self._buf[:consumed]
        return msg_type, payload


# ---------------------------------------------------------------------------
# HELLO handshake payload

ROLE_PARTY = 0
ROLE_CLIENT = 1

MODE_CODE = {"semi-honest": 0, "authenticated": 1}
MODE_NAME = {v: k for k, v in MODE_CODE.items()}

WILDCARD_SESSION = bytes(16)

_HELLO = struct.Struct(">H16sBB16sHHB")


@dataclass(frozen=True, slots=True)
class Hello:
    """Connection preamble; both ends must agree on every protocol field."""

    session_id: bytes
    role: int
    node_id: int
    modulus: int
    n_bits: int
    n_treatments: int
    mode_code: int
    version: int = PROTOCOL_VERSION


def encode_hello(h: Hello) -> bytes:
    return _HELLO.pack(
        h.version,
        h.session_id,
        h.role,
        h.node_id,
        h.modulus.to_bytes(16, "big"),
        h.n_bits,
        h.n_treatments,
        h.mode_code,
    )


def decode_hello(payload: bytes) -> Hello:
    if len(payload) != _HELLO.size:
        raise FrameError(f"HELLO payload must be {_HELLO.size} bytes, got {len(payload)}")
    version, session, role, node_id, modulus, n_bits, n_treat, mode = _HELLO.unpack(payload)
    return Hello(
        session_id=session,
        role=role,
        node_id=node_id,
        modulus=int.from_bytes(modulus, "big"),
        n_bits=n_bits,
        n_treatments=n_treat,
        mode_code=mode,
        version=version,
    )


def encode_abort(reason: str) -> bytes:
    return reason.encode("utf-8")


def decode_abort(payload: bytes) -> str:
    return payload.decode("utf-8", errors="replace")
