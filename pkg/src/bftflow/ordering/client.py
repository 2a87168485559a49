"""Client side of the ordering service.

A client broadcasts its request to every view member and waits for 2f+1
byte-identical reply bodies. Replies that disagree with the winning quorum
are kept and surfaced so the caller can compare its own node's answer with
the consensus answer (local-fault detection). If enough replies arrive but
no 2f+1 subset agrees, that is DIVERGENT_REPLIES; silence past the timeout
is one rebroadcast, then TIMEOUT.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .. import codec
from ..crypto import KeyRing
from ..transport.envelope import MessageKind, SignedEnvelope, make_envelope
from .messages import ClientRequest, ConsensusBody, OpTag, make_request

log = logging.getLogger(__name__)

OK = "OK"
TIMEOUT = "TIMEOUT"
DIVERGENT_REPLIES = "DIVERGENT_REPLIES"


@dataclass
class ClientOutcome:
    status: str
    payload: bytes | None = None  # the agreed reply body
    replies_by_sender: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OK


@dataclass
class _Pending:
    request_env_bytes: bytes
    on_outcome: object
    quorum: int
    members: tuple
    retries_left: int
    timer_id: int | None = None
    replies: dict = field(default_factory=dict)  # sender -> body payload bytes
    resolved: bool = False


class ClientCore:
    def __init__(self, node_id: str, keyring: KeyRing, handle, members, f: int,
                 timeout: float = 3.0, retries: int = 1,
                 sequence_start: int = 1):
        self.node_id = node_id
        self.keyring = keyring
        self.handle = handle
        self.members = list(members)
        self.f = f
        self.timeout = timeout
        self.retries = retries
        self.next_sequence = sequence_start
        self.pending: dict[bytes, _Pending] = {}

    def set_view(self, members, f: int) -> None:
        self.members = list(members)
        self.f = f

    # -- submission ------------------------------------------------------------

    def submit(self, op: OpTag, payload: bytes, on_outcome) -> bytes:
        """Send an operation; on_outcome(ClientOutcome) fires exactly once.

        Returns the request digest, the token replies are matched by.
        """
        request = make_request(self.node_id, self.next_sequence, op, payload)
        self.next_sequence += 1
        env = make_envelope(self.keyring, MessageKind.REQUEST, request.to_bytes())
        raw = env.to_bytes()
        digest = codec.digest_bytes(raw)
        quorum = 2 * self.f + 1
        entry = _Pending(raw, on_outcome, quorum, tuple(self.members),
                         self.retries)
        self.pending[digest] = entry
        self._broadcast(request)
        entry.timer_id = self.handle.set_timer(self.timeout, ("client", digest))
        return digest

    def _broadcast(self, request: ClientRequest) -> None:
        for member in self.members:
            self.handle.send(member, MessageKind.REQUEST, request.to_bytes())

    def _rebroadcast(self, entry: _Pending) -> None:
        from ..transport.envelope import envelope_from_bytes

        env = envelope_from_bytes(entry.request_env_bytes)
        for member in entry.members:
            self.handle.send(member, env.kind, env.body)

    # -- events ------------------------------------------------------------------

    def on_envelope(self, env: SignedEnvelope) -> None:
        if env.kind != MessageKind.REPLY:
            return
        try:
            body = ConsensusBody.from_bytes(env.body)
        except codec.CodecError:
            return
        entry = self.pending.get(body.digest)
        if entry is None or entry.resolved:
            return
        entry.replies[env.sender] = body.payload
        self._evaluate(body.digest, entry, final=False)

    def on_timer(self, tag) -> None:
        if not isinstance(tag, tuple) or tag[0] != "client":
            return
        digest = tag[1]
        entry = self.pending.get(digest)
        if entry is None or entry.resolved:
            return
        if entry.retries_left > 0:
            entry.retries_left -= 1
            self._rebroadcast(entry)
            entry.timer_id = self.handle.set_timer(self.timeout,
                                                   ("client", digest))
            return
        self._evaluate(digest, entry, final=True)

    def _evaluate(self, digest: bytes, entry: _Pending, final: bool) -> None:
        counts: dict[bytes, int] = {}
        for payload in entry.replies.values():
            counts[payload] = counts.get(payload, 0) + 1
        winner = None
        for payload, count in counts.items():
            if count >= entry.quorum:
                winner = payload
                break
        if winner is not None:
            self._resolve(digest, entry, ClientOutcome(
                OK, winner, dict(entry.replies)))
            return
        # all members answered yet no quorum agrees: systemic or local fault
        if len(entry.replies) >= len(entry.members):
            self._resolve(digest, entry, ClientOutcome(
                DIVERGENT_REPLIES, None, dict(entry.replies)))
            return
        if final:
            status = (DIVERGENT_REPLIES
                      if len(entry.replies) >= entry.quorum else TIMEOUT)
            self._resolve(digest, entry, ClientOutcome(
                status, None, dict(entry.replies)))

    def _resolve(self, digest: bytes, entry: _Pending,
                 outcome: ClientOutcome) -> None:
        entry.resolved = True
        if entry.timer_id is not None:
            self.handle.cancel_timer(entry.timer_id)
        self.pending.pop(digest, None)
        entry.on_outcome(outcome)
