"""Signed message envelopes and the length-prefixed wire framing.

Wire layout: a 4-byte big-endian length covering the rest of the frame,
then a 1-byte message kind tag, a 2-byte sender length plus sender id,
a 4-byte body length plus body, and a 2-byte signature length plus the
detached signature. The signature covers (sender, kind, body) in canonical
encoding, so it is independent of the framing itself.

The consensus protocol and the block exchange protocol share one transport
but use disjoint kind ranges, keeping the two logical channels separate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from .. import codec
from ..crypto import KeyRing

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")

MAX_FRAME = 64 * 1024 * 1024


class MessageKind(IntEnum):
    # consensus channel
    REQUEST = 1
    PRE_PREPARE = 2
    PREPARE = 3
    COMMIT = 4
    REPLY = 5
    VIEW_CHANGE = 6
    NEW_VIEW = 7
    CHECKPOINT = 8
    STATE_REQUEST = 9
    STATE_RESPONSE = 10
    # block exchange channel
    BLOCK_REQUEST = 20
    BLOCK_SEND = 21
    BLOCKCHAIN_REQUEST = 22
    BLOCKCHAIN_SEND = 23
    # peer control
    JOIN_ANNOUNCE = 30
    JOIN_ACK = 31
    # live transport handshake
    HELLO = 40


CONSENSUS_KINDS = frozenset(k for k in MessageKind if 1 <= k <= 19)
BLOCK_KINDS = frozenset(k for k in MessageKind if 20 <= k <= 29)


class FrameError(ValueError):
    pass


@dataclass(frozen=True)
class SignedEnvelope:
    sender: str
    kind: MessageKind
    body: bytes
    signature: bytes

    def to_bytes(self) -> bytes:
        sender_raw = self.sender.encode("utf-8")
        parts = [
            bytes([int(self.kind)]),
            _U16.pack(len(sender_raw)), sender_raw,
            _U32.pack(len(self.body)), self.body,
            _U16.pack(len(self.signature)), self.signature,
        ]
        return b"".join(parts)


def signing_payload(sender: str, kind: MessageKind, body: bytes) -> bytes:
    return codec.encode([sender, int(kind), body])


def make_envelope(keyring: KeyRing, kind: MessageKind, body: bytes) -> SignedEnvelope:
    signature = keyring.sign(signing_payload(keyring.node_id, kind, body))
    return SignedEnvelope(keyring.node_id, kind, body, signature)


def verify_envelope(keyring: KeyRing, env: SignedEnvelope) -> bool:
    return keyring.verify(env.sender, signing_payload(env.sender, env.kind, env.body),
                          env.signature)


def envelope_from_bytes(data: bytes) -> SignedEnvelope:
    if len(data) < 1:
        raise FrameError("empty frame")
    try:
        kind = MessageKind(data[0])
    except ValueError:
        raise FrameError(f"unknown message kind {data[0]}") from None
    offset = 1

    def take(n):
        nonlocal offset
        end = offset + n
        if end > len(data):
            raise FrameError("truncated frame")
        chunk = data[offset:end]
        offset = end
        return chunk

    sender_len = _U16.unpack(take(2))[0]
    sender = take(sender_len).decode("utf-8")
    body_len = _U32.unpack(take(4))[0]
    body = take(body_len)
    sig_len = _U16.unpack(take(2))[0]
    signature = take(sig_len)
    if offset != len(data):
        raise FrameError("trailing bytes in frame")
    return SignedEnvelope(sender, kind, body, signature)


def write_frame(env: SignedEnvelope) -> bytes:
    payload = env.to_bytes()
    if len(payload) > MAX_FRAME:
        raise FrameError("frame too large")
    return _U32.pack(len(payload)) + payload


def read_frame(read_exactly) -> SignedEnvelope:
    """Read one frame from a blocking `read_exactly(n) -> bytes` source."""
    header = read_exactly(4)
    length = _U32.unpack(header)[0]
    if length > MAX_FRAME:
        raise FrameError("frame too large")
    return envelope_from_bytes(read_exactly(length))
