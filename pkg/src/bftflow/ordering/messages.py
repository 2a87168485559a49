"""Consensus message bodies and their canonical codecs.

Requests are opaque to the ordering layer beyond their operation tag: an
ADD_TRANSACTION carries serialized workflow transaction bytes, RECONFIGURE a
membership delta, GET_LATEST_HASH nothing. Replies are canonical byte
strings so that honest replicas executing the same sequence produce
byte-identical reply bodies, which is exactly what clients count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .. import codec

NULL_DIGEST = codec.digest_bytes(b"")


class OpTag(str, Enum):
    ADD_TRANSACTION = "ADD_TRANSACTION"
    GET_LATEST_HASH = "GET_LATEST_HASH"
    RECONFIGURE = "RECONFIGURE"


ORDERED_OPS = {OpTag.ADD_TRANSACTION, OpTag.RECONFIGURE}


@dataclass(frozen=True)
class ClientRequest:
    client: str
    request_sequence: int
    op: OpTag
    payload: bytes
    ordered: bool

    def to_bytes(self) -> bytes:
        return codec.encode(["req", self.client, self.request_sequence,
                             self.op.value, self.payload, self.ordered])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ClientRequest":
        tag, client, seq, op, payload, ordered = codec.decode(raw)
        if tag != "req":
            raise codec.CodecError("not a client request")
        return cls(client, seq, OpTag(op), bytes(payload), bool(ordered))


def make_request(client: str, request_sequence: int, op: OpTag,
                 payload: bytes = b"") -> ClientRequest:
    return ClientRequest(client, request_sequence, op, payload,
                         ordered=op in ORDERED_OPS)


@dataclass(frozen=True)
class ConsensusBody:
    """The shared (view, sequence, digest, payload) shape of protocol messages."""

    view: int
    seq: int
    digest: bytes
    payload: bytes = b""

    def to_bytes(self) -> bytes:
        return codec.encode(["c", self.view, self.seq, self.digest, self.payload])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ConsensusBody":
        tag, view, seq, digest, payload = codec.decode(raw)
        if tag != "c":
            raise codec.CodecError("not a consensus body")
        return cls(view, seq, bytes(digest), bytes(payload))


@dataclass(frozen=True)
class OrderingReply:
    """Deterministic reply to an ordered operation."""

    consensus_sequence: int
    accepted: bool
    reason: str
    latest_block_hash: bytes
    latest_block_number: int
    pending_queue_hash: bytes
    extra: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        return codec.encode(["rep", self.consensus_sequence, self.accepted,
                             self.reason, self.latest_block_hash,
                             self.latest_block_number, self.pending_queue_hash,
                             self.extra])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "OrderingReply":
        tag, seq, accepted, reason, block_hash, number, pending_hash, extra = \
            codec.decode(raw)
        if tag != "rep":
            raise codec.CodecError("not an ordering reply")
        return cls(seq, bool(accepted), reason, bytes(block_hash), number,
                   bytes(pending_hash), extra)


def encode_read_reply(latest_block_hash: bytes, latest_block_number: int) -> bytes:
    return codec.encode(["read", latest_block_hash, latest_block_number])


def decode_read_reply(raw: bytes) -> tuple[bytes, int]:
    tag, block_hash, number = codec.decode(raw)
    if tag != "read":
        raise codec.CodecError("not a read reply")
    return bytes(block_hash), number


def encode_reconfigure(action: str, node_id: str, new_f: int | None = None) -> bytes:
    return codec.encode({"action": action, "node_id": node_id, "f": new_f})


def decode_reconfigure(raw: bytes) -> tuple[str, str, int | None]:
    doc = codec.decode(raw)
    return doc["action"], doc["node_id"], doc.get("f")


# -- view change bodies -------------------------------------------------------

@dataclass(frozen=True)
class PreparedProof:
    """Evidence that a request prepared at (view, seq): the signed pre-prepare
    plus 2f matching signed prepares."""

    seq: int
    view: int
    digest: bytes
    pre_prepare_env: bytes
    prepare_envs: tuple

    def to_list(self):
        return [self.seq, self.view, self.digest, self.pre_prepare_env,
                list(self.prepare_envs)]

    @classmethod
    def from_list(cls, raw) -> "PreparedProof":
        seq, view, digest, pp_env, prep_envs = raw
        return cls(seq, view, bytes(digest), bytes(pp_env),
                   tuple(bytes(p) for p in prep_envs))


@dataclass(frozen=True)
class ViewChangeBody:
    new_view: int
    stable_seq: int
    stable_digest: bytes
    checkpoint_proof: tuple  # signed CHECKPOINT envelopes attesting stable_seq
    prepared: tuple  # PreparedProof list for sequences above stable_seq

    def to_bytes(self) -> bytes:
        return codec.encode(["vc", self.new_view, self.stable_seq,
                             self.stable_digest,
                             list(self.checkpoint_proof),
                             [p.to_list() for p in self.prepared]])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ViewChangeBody":
        tag, new_view, stable_seq, stable_digest, proof, prepared = codec.decode(raw)
        if tag != "vc":
            raise codec.CodecError("not a view change body")
        return cls(new_view, stable_seq, bytes(stable_digest),
                   tuple(bytes(p) for p in proof),
                   tuple(PreparedProof.from_list(p) for p in prepared))


@dataclass(frozen=True)
class NewViewBody:
    view: int
    view_change_envs: tuple
    pre_prepare_envs: tuple

    def to_bytes(self) -> bytes:
        return codec.encode(["nv", self.view, list(self.view_change_envs),
                             list(self.pre_prepare_envs)])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "NewViewBody":
        tag, view, vcs, pps = codec.decode(raw)
        if tag != "nv":
            raise codec.CodecError("not a new view body")
        return cls(view, tuple(bytes(v) for v in vcs), tuple(bytes(p) for p in pps))


# -- state transfer bodies -----------------------------------------------------

def encode_state_request(have_seq: int) -> bytes:
    return codec.encode(["streq", have_seq])


def decode_state_request(raw: bytes) -> int:
    tag, have_seq = codec.decode(raw)
    if tag != "streq":
        raise codec.CodecError("not a state request")
    return have_seq


@dataclass(frozen=True)
class StateResponse:
    stable_seq: int
    snapshot: bytes
    checkpoint_proof: tuple  # 2f+1 signed CHECKPOINT envelopes over the snapshot
    op_log: tuple  # ((seq, request_env_bytes, (commit_env, ...)), ...)
    view_hint: int
    executed_seq: int

    def to_bytes(self) -> bytes:
        return codec.encode([
            "stresp", self.stable_seq, self.snapshot,
            list(self.checkpoint_proof),
            [[seq, payload, list(proof)] for seq, payload, proof in self.op_log],
            self.view_hint, self.executed_seq,
        ])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "StateResponse":
        tag, stable_seq, snapshot, proof, log, view_hint, executed = codec.decode(raw)
        if tag != "stresp":
            raise codec.CodecError("not a state response")
        return cls(stable_seq, bytes(snapshot),
                   tuple(bytes(p) for p in proof),
                   tuple((seq, bytes(payload), tuple(bytes(c) for c in commits))
                         for seq, payload, commits in log),
                   view_hint, executed)
