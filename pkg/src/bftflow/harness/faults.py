"""Byzantine behaviours for the simulator, aware of consensus message formats.

The simulator itself only knows how to crash, drop, delay and partition.
Equivocation needs to forge plausible protocol messages, so it lives here:
the mutator re-signs mutations with the faulty node's own key (a Byzantine
node controls its key; signatures make outsider forgery impossible, not
insider lies).
"""

from __future__ import annotations

import random

from .. import codec
from ..crypto import KeyRing
from ..transport.envelope import MessageKind, SignedEnvelope, make_envelope
from ..ordering.messages import ConsensusBody


class ConsensusEquivocator:
    """Per-destination mutation of outgoing consensus messages.

    PRE_PREPARE: substitute a different pending client request (observed from
    the node's own inbox) for roughly half the recipients, the classic
    split-the-vote equivocation. PREPARE/COMMIT: vote for a fabricated digest.
    REPLY: corrupt the reply body, the local-fault scenario clients must
    detect by comparing against the consensus majority.
    """

    def __init__(self, keyring: KeyRing, rng: random.Random):
        self.keyring = keyring
        self.rng = rng
        self.seen_requests: list[bytes] = []

    def observe(self, env: SignedEnvelope) -> None:
        if env.kind == MessageKind.REQUEST:
            raw = env.to_bytes()
            if raw not in self.seen_requests:
                self.seen_requests.append(raw)
                del self.seen_requests[:-16]

    def mutate(self, env: SignedEnvelope, dest: str) -> SignedEnvelope | None:
        if self.rng.random() < 0.5:
            return env  # honest copy for this destination
        if env.kind == MessageKind.PRE_PREPARE:
            return self._mutate_pre_prepare(env)
        if env.kind in (MessageKind.PREPARE, MessageKind.COMMIT):
            return self._mutate_vote(env)
        if env.kind == MessageKind.REPLY:
            return self._mutate_reply(env)
        return env

    def _resign(self, kind: MessageKind, body: bytes) -> SignedEnvelope:
        return make_envelope(self.keyring, kind, body)

    def _mutate_pre_prepare(self, env: SignedEnvelope) -> SignedEnvelope:
        try:
            body = ConsensusBody.from_bytes(env.body)
        except codec.CodecError:
            return env
        alternates = [raw for raw in self.seen_requests
                      if codec.digest_bytes(raw) != body.digest]
        if not alternates:
            return None  # nothing plausible to equivocate with: stay silent
        chosen = self.rng.choice(alternates)
        forged = ConsensusBody(body.view, body.seq,
                               codec.digest_bytes(chosen), chosen)
        return self._resign(env.kind, forged.to_bytes())

    def _mutate_vote(self, env: SignedEnvelope) -> SignedEnvelope:
        try:
            body = ConsensusBody.from_bytes(env.body)
        except codec.CodecError:
            return env
        forged = ConsensusBody(body.view, body.seq,
                               codec.digest_bytes(body.digest), body.payload)
        return self._resign(env.kind, forged.to_bytes())

    def _mutate_reply(self, env: SignedEnvelope) -> SignedEnvelope:
        try:
            body = ConsensusBody.from_bytes(env.body)
        except codec.CodecError:
            return env
        payload = bytearray(body.payload or b"\x00")
        payload[-1] ^= 0xFF
        forged = ConsensusBody(body.view, body.seq, body.digest, bytes(payload))
        return self._resign(env.kind, forged.to_bytes())
