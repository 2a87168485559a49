"""Blocks: numbered, hash-chained containers of transaction bytes.

The hash covers (number, previous hash, transaction list) in canonical
encoding: the "region". Timestamps are informational only and deliberately
excluded, because every replica builds the same block independently at
commit time and node-local clocks must not change the digest.

Transactions are opaque byte strings at this layer; the workflow engine
owns their interpretation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .. import codec

GENESIS_PREVIOUS = b"\x00" * codec.DIGEST_SIZE


def hashed_region(number: int, previous_hash: bytes, transactions) -> bytes:
    return codec.encode([number, previous_hash, list(transactions)])


@dataclass(frozen=True)
class Block:
    number: int
    previous_hash: bytes
    transactions: tuple
    timestamp_ms: int
    hash: bytes
    region: bytes = field(repr=False)

    @classmethod
    def create(cls, number: int, previous_hash: bytes, transactions,
               timestamp_ms: int | None = None) -> "Block":
        txs = tuple(bytes(t) for t in transactions)
        region = hashed_region(number, previous_hash, txs)
        if timestamp_ms is None:
            timestamp_ms = int(time.time() * 1000)
        return cls(number, previous_hash, txs, timestamp_ms,
                   codec.digest_bytes(region), region)

    @classmethod
    def genesis(cls) -> "Block":
        return cls.create(0, GENESIS_PREVIOUS, (), timestamp_ms=0)

    def verify_hash(self) -> bool:
        return codec.digest_bytes(self.region) == self.hash

    def consensus_equal(self, other: "Block") -> bool:
        """Equality over the hashed content; timestamps are excluded."""
        return self.region == other.region


def encode_block(block: Block) -> bytes:
    """Storage and wire form: the hashed region plus the informational tail."""
    return codec.encode([block.region, block.timestamp_ms, block.hash])


def decode_block(data: bytes) -> Block:
    region, timestamp_ms, block_hash = codec.decode(data)
    number, previous_hash, transactions = codec.decode(region)
    return Block(number, previous_hash, tuple(transactions), timestamp_ms,
                 block_hash, region)
