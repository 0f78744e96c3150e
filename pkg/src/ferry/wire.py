"""Length-prefixed wire frames and canonical JSON encoding.

A frame is a 32-bit big-endian length (counting type byte + payload), one type
byte, then the payload. Payloads are canonical JSON except SYNC_PUSH and
SYNC_DATA, which carry a length-prefixed JSON header segment followed by raw
blob bytes. Frames larger than 64 MiB are rejected on both sides.
"""

from __future__ import annotations

import json
import struct
from enum import IntEnum
from typing import Any, Callable

from .errors import BadFrame

MAX_FRAME_BYTES = 64 * 1024 * 1024
HEADER_SIZE = 4  # length prefix


class FrameType(IntEnum):
    OFFLOAD_REQ = 0x01
    OFFLOAD_RES = 0x02
    SYNC_QUERY = 0x03
    SYNC_QUERY_RES = 0x04
    SYNC_PUSH = 0x05
    SYNC_PULL = 0x06
    SYNC_DATA = 0x07
    ERR = 0x7F


KNOWN_FRAME_TYPES = frozenset(int(t) for t in FrameType)

# ERR payload codes understood by both sides.
ERR_UNKNOWN_TYPE = "UnknownType"
ERR_UNKNOWN_TASK = "UnknownTask"
ERR_DATA_MISSING = "DataMissing"
ERR_TASK_FAILED = "TaskFailed"
ERR_BAD_FRAME = "BadFrame"


def canonical_json(obj: Any) -> bytes:
    """Sorted keys, no insignificant whitespace; byte-stable for equal values."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def parse_json(payload: bytes) -> Any:
    try:
        return json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadFrame(f"payload is not valid JSON: {exc}") from None


def frame_wire_size(payload_len: int) -> int:
    """Bytes a frame with this payload occupies on the wire."""
    return HEADER_SIZE + 1 + payload_len


def encode_frame(frame_type: int, payload: bytes) -> bytes:
    body_len = 1 + len(payload)
    if body_len > MAX_FRAME_BYTES:
        raise BadFrame(f"frame of {body_len} bytes exceeds the {MAX_FRAME_BYTES} byte cap")
    return struct.pack(">I", body_len) + bytes([frame_type]) + payload


def decode_frame(buf: bytes) -> tuple[int, bytes]:
    """Decode one whole frame from a buffer; the buffer must hold exactly one frame."""
    if len(buf) < HEADER_SIZE + 1:
        raise BadFrame(f"frame truncated at {len(buf)} bytes")
    (body_len,) = struct.unpack(">I", buf[:HEADER_SIZE])
    if body_len > MAX_FRAME_BYTES:
        raise BadFrame(f"frame of {body_len} bytes exceeds the {MAX_FRAME_BYTES} byte cap")
    if len(buf) != HEADER_SIZE + body_len:
        raise BadFrame(f"frame length field says {body_len}, buffer holds {len(buf) - HEADER_SIZE}")
    return buf[HEADER_SIZE], buf[HEADER_SIZE + 1 :]


def read_frame(read_exact: Callable[[int], bytes]) -> tuple[int, bytes]:
    """Read one frame from a stream via a read-exactly-n-bytes callable."""
    header = read_exact(HEADER_SIZE)
    (body_len,) = struct.unpack(">I", header)
    if body_len == 0:
        raise BadFrame("frame with empty body")
    if body_len > MAX_FRAME_BYTES:
        raise BadFrame(f"frame of {body_len} bytes exceeds the {MAX_FRAME_BYTES} byte cap")
    body = read_exact(body_len)
    return body[0], body[1:]


def encode_blob_payload(header: dict[str, Any], blob: bytes) -> bytes:
    header_bytes = canonical_json(header)
    return struct.pack(">I", len(header_bytes)) + header_bytes + blob


def decode_blob_payload(payload: bytes) -> tuple[dict[str, Any], bytes]:
    if len(payload) < HEADER_SIZE:
        raise BadFrame("blob payload truncated before header length")
    (header_len,) = struct.unpack(">I", payload[:HEADER_SIZE])
    if HEADER_SIZE + header_len > len(payload):
        raise BadFrame("blob payload truncated inside header segment")
    header = parse_json(payload[HEADER_SIZE : HEADER_SIZE + header_len])
    if not isinstance(header, dict):
        raise BadFrame("blob header segment must be a JSON object")
    return header, payload[HEADER_SIZE + header_len :]


def err_payload(code: str, message: str) -> bytes:
    return canonical_json({"code": code, "message": message})


__all__ = [
    "ERR_BAD_FRAME",
    "ERR_DATA_MISSING",
    "ERR_TASK_FAILED",
    "ERR_UNKNOWN_TASK",
    "ERR_UNKNOWN_TYPE",
    "FrameType",
    "KNOWN_FRAME_TYPES",
    "MAX_FRAME_BYTES",
    "canonical_json",
    "decode_blob_payload",
    "decode_frame",
    "encode_blob_payload",
    "encode_frame",
    "err_payload",
    "frame_wire_size",
    "parse_json",
    "read_frame",
]
