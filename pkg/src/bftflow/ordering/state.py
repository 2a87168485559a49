"""The replicated ordering state and view bookkeeping.

The state machine replicated by consensus is deliberately minimal: the last
block hash and number, the queue of transactions waiting to fill the next
block, plus the per-client reply cache and the membership that quorum
arithmetic depends on. The blockchain itself and the workflow state are
derived from executed operations and are recovered through the block
service, not through consensus state transfer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .. import codec
from ..blocks.block import Block


@dataclass(frozen=True)
class ViewConfig:
    view_number: int
    members: tuple
    f: int

    def __post_init__(self):
        if len(set(self.members)) != len(self.members):
            raise ValueError("view members must be unique")
        if len(self.members) < 3 * self.f + 1:
            raise ValueError(
                f"{len(self.members)} members cannot tolerate f={self.f}; "
                f"need at least {3 * self.f + 1}")

    @property
    def leader_index(self) -> int:
        return self.view_number % len(self.members)

    @property
    def leader(self) -> str:
        return self.members[self.leader_index]

    def quorum(self) -> int:
        return 2 * self.f + 1


@dataclass
class ReplicaState:
    """Everything covered by checkpoint digests and state transfer."""

    members: list
    f: int
    last_block_hash: bytes
    last_block_number: int
    pending: list = field(default_factory=list)  # queued transaction bytes
    reply_cache: dict = field(default_factory=dict)  # client -> [req_seq, reply]
    executed_seq: int = 0

    @classmethod
    def initial(cls, members, f) -> "ReplicaState":
        genesis = Block.genesis()
        return cls(list(members), f, genesis.hash, 0)

    def to_bytes(self) -> bytes:
        return codec.encode([
            "state", list(self.members), self.f, self.last_block_hash,
            self.last_block_number, list(self.pending),
            {client: [seq, reply] for client, (seq, reply) in
             self.reply_cache.items()},
            self.executed_seq,
        ])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ReplicaState":
        tag, members, f, block_hash, number, pending, cache, executed = \
            codec.decode(raw)
        if tag != "state":
            raise codec.CodecError("not a replica state snapshot")
        return cls(list(members), f, bytes(block_hash), number,
                   [bytes(t) for t in pending],
                   {client: (seq, bytes(reply)) for client, (seq, reply) in
                    cache.items()},
                   executed)

    def digest(self) -> bytes:
        return codec.digest_bytes(self.to_bytes())

    def pending_queue_hash(self) -> bytes:
        return codec.digest(list(self.pending))

    def pending_tx_ids(self) -> set:
        return {codec.digest_bytes(tx) for tx in self.pending}


class AcceptAllApp:
    """Ordering application that accepts every transaction and collects blocks.

    The real node wires the workflow engine and block service in; tests of
    the bare consensus layer use this.
    """

    def __init__(self):
        self.blocks: list[Block] = []

    def validate_transaction(self, tx_bytes: bytes,
                             pending_tx_bytes: bytes | None) -> tuple[bool, str]:
        return True, "ok"

    def deliver_block(self, block: Block) -> None:
        self.blocks.append(block)
