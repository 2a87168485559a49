"""Canonical binary serialization shared by every hashed or signed structure.

The encoding is deterministic: map keys are sorted, integers are fixed-width
big-endian, floats are IEEE-754 doubles. Two nodes encoding the same value
always produce identical bytes, which is what lets digests and signatures
match across independently running replicas.
"""

from __future__ import annotations

import hashlib
import struct

_NONE = 0x00
_FALSE = 0x01
_TRUE = 0x02
_INT = 0x03
_FLOAT = 0x04
_BYTES = 0x05
_STR = 0x06
_LIST = 0x07
_MAP = 0x08

_I64 = struct.Struct(">q")
_F64 = struct.Struct(">d")
_U32 = struct.Struct(">I")

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1


class CodecError(ValueError):
    """Raised when a value cannot be encoded or bytes cannot be decoded."""


def encode(value) -> bytes:
    buf = bytearray()
    _encode_into(buf, value)
    return bytes(buf)


def _encode_into(buf: bytearray, value) -> None:
    if value is None:
        buf.append(_NONE)
    elif value is True:
        buf.append(_TRUE)
    elif value is False:
        buf.append(_FALSE)
    elif isinstance(value, int):
        if not (INT_MIN <= value <= INT_MAX):
            raise CodecError(f"integer out of 64-bit range: {value}")
        buf.append(_INT)
        buf += _I64.pack(value)
    elif isinstance(value, float):
        buf.append(_FLOAT)
        buf += _F64.pack(value)
    elif isinstance(value, (bytes, bytearray, memoryview)):
        raw = bytes(value)
        buf.append(_BYTES)
        buf += _U32.pack(len(raw))
        buf += raw
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        buf.append(_STR)
        buf += _U32.pack(len(raw))
        buf += raw
    elif isinstance(value, (list, tuple)):
        buf.append(_LIST)
        buf += _U32.pack(len(value))
        for item in value:
            _encode_into(buf, item)
    elif isinstance(value, dict):
        keys = list(value.keys())
        if any(not isinstance(k, str) for k in keys):
            raise CodecError("map keys must be strings")
        keys.sort()
        buf.append(_MAP)
        buf += _U32.pack(len(keys))
        for k in keys:
            raw = k.encode("utf-8")
            buf += _U32.pack(len(raw))
            buf += raw
            _encode_into(buf, value[k])
    else:
        raise CodecError(f"unsupported type: {type(value).__name__}")


def decode(data: bytes):
    """Decode canonical bytes, rejecting trailing data and non-canonical maps."""
    value, offset = _decode_at(data, 0)
    if offset != len(data):
        raise CodecError(f"trailing bytes after value ({len(data) - offset})")
    return value


def _take(data: bytes, offset: int, n: int) -> tuple[bytes, int]:
    end = offset + n
    if end > len(data):
        raise CodecError("truncated input")
    return data[offset:end], end


def _decode_at(data: bytes, offset: int):
    if offset >= len(data):
        raise CodecError("truncated input")
    tag = data[offset]
    offset += 1
    if tag == _NONE:
        return None, offset
    if tag == _TRUE:
        return True, offset
    if tag == _FALSE:
        return False, offset
    if tag == _INT:
        raw, offset = _take(data, offset, 8)
        return _I64.unpack(raw)[0], offset
    if tag == _FLOAT:
        raw, offset = _take(data, offset, 8)
        return _F64.unpack(raw)[0], offset
    if tag == _BYTES:
        raw, offset = _take(data, offset, 4)
        raw, offset = _take(data, offset, _U32.unpack(raw)[0])
        return raw, offset
    if tag == _STR:
        raw, offset = _take(data, offset, 4)
        raw, offset = _take(data, offset, _U32.unpack(raw)[0])
        try:
            return raw.decode("utf-8"), offset
        except UnicodeDecodeError as exc:
            raise CodecError("invalid utf-8 in string") from exc
    if tag == _LIST:
        raw, offset = _take(data, offset, 4)
        count = _U32.unpack(raw)[0]
        items = []
        for _ in range(count):
            item, offset = _decode_at(data, offset)
            items.append(item)
        return items, offset
    if tag == _MAP:
        raw, offset = _take(data, offset, 4)
        count = _U32.unpack(raw)[0]
        out = {}
        prev = None
        for _ in range(count):
            raw, offset = _take(data, offset, 4)
            raw, offset = _take(data, offset, _U32.unpack(raw)[0])
            try:
                key = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CodecError("invalid utf-8 in map key") from exc
            if prev is not None and key <= prev:
                raise CodecError("map keys not in canonical order")
            prev = key
            value, offset = _decode_at(data, offset)
            out[key] = value
        return out, offset
    raise CodecError(f"unknown tag 0x{tag:02x}")


def digest(value) -> bytes:
    """SHA-256 over the canonical encoding; the one digest used everywhere."""
    return hashlib.sha256(encode(value)).digest()


def digest_bytes(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


DIGEST_SIZE = hashlib.sha256().digest_size
