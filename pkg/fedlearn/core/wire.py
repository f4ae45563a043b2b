"""
Wire codec for RequestMessage / ResponseMessage frames.

Frame:   magic "FLA1" | payload-length u32 | payload
Payload: kind u8 | phase_id i32 | sender | receiver | entry-count u16 | entries
Entry:   key | type-tag u8 | value

All fixed-width integers and binary64 values are little-endian; strings are
u16 byte-length + UTF-8; big integers are u32 byte-length + little-endian
magnitude.
"""

import enum
import struct
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from fedlearn.core.config import settings


class WireError(Exception):
    """Base class for every encode/decode failure."""


class EncodeError(WireError):
    pass


class InvalidMessage(WireError):
    pass


class BadMagic(WireError):
    pass


class LengthMismatch(WireError):
    pass


class UnknownTag(WireError):
    pass


class Truncated(WireError):
    pass


class DuplicateKey(WireError):
    pass


class MessageKind(enum.IntEnum):
    REQUEST = 0
    RESPONSE = 1


class Tag(enum.IntEnum):
    INT = 0
    FLOAT = 1
    STR = 2
    FLOAT_VEC = 3
    FLOAT_MAT = 4
    BYTES = 5
    BIGINT_VEC = 6


class BigIntVec(tuple):
    """Sequence of non-negative arbitrary-precision integers (ciphertext arrays, id lists)."""

    def __new__(cls, values=()):
        items = tuple(int(v) for v in values)
        for v in items:
            if v < 0:
                raise EncodeError(f"BigIntVec entries must be non-negative, got {v}")
        return super().__new__(cls, items)


U16_MAX = 0xFFFF
U32_MAX = 0xFFFFFFFF
I64_MIN, I64_MAX = -(2 ** 63), 2 ** 63 - 1
I32_MIN, I32_MAX = -(2 ** 31), 2 ** 31 - 1
HEADER = struct.Struct("<4sI")


@dataclass(eq=False)
class Message:
    kind: MessageKind
    sender: str
    receiver: str
    phase_id: int
    body: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = MessageKind(self.kind)
        if self.sender == self.receiver:
            raise InvalidMessage(f"sender and receiver are both {self.sender!r}")
        if not I32_MIN <= self.phase_id <= I32_MAX:
            raise InvalidMessage(f"phase_id {self.phase_id} does not fit in i32")

    @classmethod
    def request(cls, sender: str, receiver: str, phase_id: int, body: Dict[str, Any] | None = None) -> "Message":
        return cls(MessageKind.REQUEST, sender, receiver, phase_id, dict(body or {}))

    def reply(self, body: Dict[str, Any] | None = None) -> "Message":
        return Message(MessageKind.RESPONSE, self.receiver, self.sender, self.phase_id, dict(body or {}))

    @property
    def is_request(self) -> bool:
        return self.kind == MessageKind.REQUEST

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.sender == other.sender
            and self.receiver == other.receiver
            and self.phase_id == other.phase_id
            and bodies_equal(self.body, other.body)
        )


def _canonical(value: Any) -> Any:
    if isinstance(value, (bool, np.integer)):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, bytearray):
        return bytes(value)
    return value


def values_equal(a: Any, b: Any) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        if not (isinstance(a, np.ndarray) and isinstance(b, np.ndarray)):
            return False
        return a.shape == b.shape and bool(np.array_equal(a, b, equal_nan=True))
    a, b = _canonical(a), _canonical(b)
    if isinstance(a, float) and isinstance(b, float) and a != a and b != b:
        return True
    return type(a) is type(b) and a == b


def bodies_equal(a: Dict[str, Any], b: Dict[str, Any]) -> bool:
    return list(a) == list(b) and all(values_equal(a[k], b[k]) for k in a)


# --- encoding ---------------------------------------------------------------

def _pack_str(value: str, what: str) -> bytes:
    raw = value.encode("utf-8")
    if len(raw) > U16_MAX:
        raise EncodeError(f"{what} is {len(raw)} bytes; limit is {U16_MAX}")
    return struct.pack("<H", len(raw)) + raw


def pack_bigint(value: int) -> bytes:
    raw = value.to_bytes((value.bit_length() + 7) // 8, "little")
    return struct.pack("<I", len(raw)) + raw


def _pack_value(key: str, value: Any) -> bytes:
    if isinstance(value, (bool, int, np.integer)):
        v = int(value)
        if not I64_MIN <= v <= I64_MAX:
            raise EncodeError(f"entry {key!r}: integer {v} does not fit in i64")
        return struct.pack("<Bq", Tag.INT, v)
    if isinstance(value, (float, np.floating)):
        return struct.pack("<Bd", Tag.FLOAT, float(value))
    if isinstance(value, str):
        return struct.pack("<B", Tag.STR) + _pack_str(value, f"entry {key!r}")
    if isinstance(value, (bytes, bytearray)):
        if len(value) > U32_MAX:
            raise EncodeError(f"entry {key!r}: byte string too long")
        return struct.pack("<BI", Tag.BYTES, len(value)) + bytes(value)
    if isinstance(value, BigIntVec):
        if len(value) > U32_MAX:
            raise EncodeError(f"entry {key!r}: too many big integers")
        return struct.pack("<BI", Tag.BIGINT_VEC, len(value)) + b"".join(pack_bigint(v) for v in value)
    if isinstance(value, np.ndarray):
        arr = np.ascontiguousarray(value, dtype="<f8")
        if arr.ndim == 1:
            if arr.shape[0] > U32_MAX:
                raise EncodeError(f"entry {key!r}: vector too long")
            return struct.pack("<BI", Tag.FLOAT_VEC, arr.shape[0]) + arr.tobytes()
        if arr.ndim == 2:
            rows, cols = arr.shape
            if rows > U32_MAX or cols > U32_MAX:
                raise EncodeError(f"entry {key!r}: matrix dims {rows}x{cols} overflow u32")
            return struct.pack("<BII", Tag.FLOAT_MAT, rows, cols) + arr.tobytes()
        raise EncodeError(f"entry {key!r}: arrays must be 1-D or 2-D, got {arr.ndim}-D")
    raise EncodeError(f"entry {key!r}: unsupported value type {type(value).__name__}")


def encode_message(message: Message) -> bytes:
    if len(message.body) > U16_MAX:
        raise EncodeError(f"body has {len(message.body)} entries; limit is {U16_MAX}")
    parts = [
        struct.pack("<Bi", message.kind, message.phase_id),
        _pack_str(message.sender, "sender"),
        _pack_str(message.receiver, "receiver"),
        struct.pack("<H", len(message.body)),
    ]
    for key, value in message.body.items():
        parts.append(_pack_str(key, "key"))
        parts.append(_pack_value(key, value))
    payload = b"".join(parts)
    return HEADER.pack(settings.FRAME_MAGIC, len(payload)) + payload


# --- decoding ---------------------------------------------------------------

class _Reader:

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise Truncated(f"truncated while reading {what} at offset {self.pos}")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def text(self, what: str) -> str:
        (length,) = self.unpack("<H", what)
        try:
            return self.take(length, what).decode("utf-8")
        except UnicodeDecodeError as e:
            raise WireError(f"{what} is not valid UTF-8: {e}") from e


def unpack_bigint(reader: _Reader, what: str) -> int:
    (length,) = reader.unpack("<I", what)
    return int.from_bytes(reader.take(length, what), "little")


def _read_value(reader: _Reader, key: str) -> Any:
    (tag,) = reader.unpack("<B", f"type tag of {key!r}")
    what = f"value of {key!r}"
    if tag == Tag.INT:
        return reader.unpack("<q", what)[0]
    if tag == Tag.FLOAT:
        return reader.unpack("<d", what)[0]
    if tag == Tag.STR:
        return reader.text(what)
    if tag == Tag.FLOAT_VEC:
        (count,) = reader.unpack("<I", what)
        return np.frombuffer(reader.take(8 * count, what), dtype="<f8").astype(np.float64)
    if tag == Tag.FLOAT_MAT:
        rows, cols = reader.unpack("<II", what)
        flat = np.frombuffer(reader.take(8 * rows * cols, what), dtype="<f8").astype(np.float64)
        return flat.reshape(rows, cols)
    if tag == Tag.BYTES:
        (length,) = reader.unpack("<I", what)
        return reader.take(length, what)
    if tag == Tag.BIGINT_VEC:
        (count,) = reader.unpack("<I", what)
        return BigIntVec(unpack_bigint(reader, what) for _ in range(count))
    raise UnknownTag(f"unknown type tag {tag} for entry {key!r}")


def decode_message(frame: bytes) -> Message:
    if len(frame) < HEADER.size:
        raise Truncated(f"frame has {len(frame)} bytes; header needs {HEADER.size}")
    magic, length = HEADER.unpack_from(frame)
    if magic != settings.FRAME_MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if length != len(frame) - HEADER.size:
        raise LengthMismatch(f"declared payload length {length}, got {len(frame) - HEADER.size}")

    reader = _Reader(frame[HEADER.size:])
    kind, phase_id = reader.unpack("<Bi", "kind/phase_id")
    if kind not in (MessageKind.REQUEST, MessageKind.RESPONSE):
        raise WireError(f"unknown message kind {kind}")
    sender = reader.text("sender")
    receiver = reader.text("receiver")
    (count,) = reader.unpack("<H", "entry count")

    body: Dict[str, Any] = {}
    for _ in range(count):
        key = reader.text("key")
        if key in body:
            raise DuplicateKey(f"duplicate body key {key!r}")
        body[key] = _read_value(reader, key)
    if reader.pos != len(reader.data):
        raise LengthMismatch(f"{len(reader.data) - reader.pos} trailing bytes after last entry")
    return Message(MessageKind(kind), sender, receiver, phase_id, body)


def frame_length(header: bytes) -> int:
    """Payload length announced by an 8-byte frame header."""
    magic, length = HEADER.unpack(header)
    if magic != settings.FRAME_MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    return length
