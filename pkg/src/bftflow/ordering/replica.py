"""The PBFT ordering replica.

One instance per node, driven entirely by envelopes and timers from its
transport handle: there is no internal concurrency, the surrounding event
loop (live or simulated) serializes everything.

Normal operation is the three-phase protocol: the leader assigns a sequence
number in a pre-prepare; backups prepare; everyone commits after seeing 2f
matching prepares; an operation executes once 2f+1 commits are in and every
lower sequence has executed. Executed operations mutate the minimal ordering
state (last block hash/number, pending queue, reply cache, membership) and
replies go straight back to the requesting client.

Timeouts drive everything else. A backup that sits on an unexecuted request
forwards it to the leader after one timeout and starts a view change after a
second. View changes carry cryptographic evidence (checkpoint attestations
and prepared certificates built from the signed messages themselves), so a
new leader cannot silently drop a committed sequence, and every replica can
recompute and check the new leader's re-proposals. Checkpoints snapshot the
state every K executed operations; 2f+1 matching checkpoint attestations
make one stable, truncate the logs, and anchor both the sequence-number
window and state transfer to joining or lagging replicas.
"""

from __future__ import annotations

import logging

from .. import codec
from ..blocks.block import Block
from ..crypto import KeyRing
from ..transport.envelope import (
    MessageKind,
    SignedEnvelope,
    envelope_from_bytes,
    make_envelope,
    verify_envelope,
)
from .messages import (
    ClientRequest,
    ConsensusBody,
    NewViewBody,
    NULL_DIGEST,
    OpTag,
    OrderingReply,
    PreparedProof,
    StateResponse,
    ViewChangeBody,
    decode_reconfigure,
    decode_state_request,
    encode_read_reply,
    encode_state_request,
)
from .state import ReplicaState

log = logging.getLogger(__name__)

NORMAL = "NORMAL"
VIEW_CHANGE = "VIEW_CHANGE"


class ReplicaConfig:
    def __init__(self, block_size: int = 1, checkpoint_interval: int = 64,
                 window: int = 128, forward_timeout: float = 1.0,
                 suspect_timeout: float | None = None,
                 view_change_timeout: float = 4.0,
                 state_transfer_timeout: float = 2.0):
        if block_size < 1:
            raise ValueError("block_size must be >= 1")
        self.block_size = block_size
        self.checkpoint_interval = checkpoint_interval
        self.window = window
        self.forward_timeout = forward_timeout
        # default: suspect at twice the forwarding timeout
        self.suspect_timeout = (suspect_timeout if suspect_timeout is not None
                                else 2.0 * forward_timeout)
        self.view_change_timeout = view_change_timeout
        self.state_transfer_timeout = state_transfer_timeout


class ReplicaCore:
    def __init__(self, node_id: str, keyring: KeyRing, handle, members, f: int,
                 app, config: ReplicaConfig | None = None):
        if len(members) < 3 * f + 1:
            raise ValueError(f"need at least {3 * f + 1} members for f={f}")
        self.node_id = node_id
        self.keyring = keyring
        self.handle = handle
        self.app = app
        self.config = config or ReplicaConfig()
        self.state = ReplicaState.initial(members, f)
        self._initial_state_digest = self.state.digest()
        self.view = 0
        self.status = NORMAL
        self.active_view = True  # view 0 needs no NEW_VIEW
        self.execution_enabled = True
        self.suppress_replies = False

        # request bookkeeping
        self.requests: dict[bytes, bytes] = {}  # digest -> request envelope bytes
        self.done_requests: set[bytes] = set()
        self.request_timers: dict[bytes, tuple[str, int]] = {}  # digest -> (stage, id)
        self._assigned: dict[bytes, int] = {}  # leader: digest -> seq this view
        self._backlog: list[bytes] = []  # leader: digests waiting for window room
        self.next_seq = 1

        # three-phase logs
        self.pre_prepares: dict = {}  # (view, seq) -> (digest, payload, env_bytes)
        self.prepares: dict = {}  # (view, seq, digest) -> {sender: env_bytes}
        self.commits: dict = {}  # (view, seq, digest) -> {sender: env_bytes}
        self.sent_commit: set = set()
        self.prepared_certs: dict[int, PreparedProof] = {}
        self.commit_certs: dict[int, tuple] = {}
        self.executable: dict[int, tuple] = {}  # seq -> (digest, payload)
        self.op_log: dict[int, bytes] = {}  # executed seq -> request env bytes

        # checkpoints
        self.checkpoint_msgs: dict = {}  # (seq, digest) -> {sender: env_bytes}
        self.snapshots: dict[int, bytes] = {}
        self.stable_seq = 0
        self.stable_snapshot = self.state.to_bytes()
        self.stable_proof: tuple = ()

        # view change
        self.vc_msgs: dict = {}  # view -> {sender: (body, env_bytes)}
        self.vc_timer: int | None = None
        self.vc_consecutive = 0
        self.new_view_sent: set[int] = set()

        # state transfer
        self.state_transfer_active = False
        self._st_timer: int | None = None
        self._st_attempt = 0
        self.state_transfer_handler = None  # runtime may override
        self.on_membership_change = None

        # full (seq, digest) history of executed operations, for audits
        self.execution_trace: list[tuple[int, bytes]] = []

    # -- helpers ---------------------------------------------------------------

    @property
    def members(self):
        return self.state.members

    @property
    def f(self) -> int:
        return self.state.f

    def quorum(self) -> int:
        return 2 * self.state.f + 1

    def leader_of(self, view: int) -> str:
        return self.members[view % len(self.members)]

    def is_leader(self) -> bool:
        return self.leader_of(self.view) == self.node_id

    def is_member(self, node_id: str) -> bool:
        return node_id in self.members

    def in_window(self, seq: int) -> bool:
        return self.stable_seq < seq <= self.stable_seq + self.config.window

    def _broadcast(self, kind: MessageKind, body: bytes) -> bytes:
        """Send to all other members; return own envelope bytes for the logs."""
        env = make_envelope(self.keyring, kind, body)
        raw = env.to_bytes()
        for member in self.members:
            if member != self.node_id:
                self.handle.send(member, kind, body)
        return raw

    # -- dispatch ----------------------------------------------------------------

    def on_envelope(self, env: SignedEnvelope) -> None:
        kind = env.kind
        if kind == MessageKind.REQUEST:
            self.on_request(env)
            return
        if kind == MessageKind.STATE_REQUEST:
            self.on_state_request(env)
            return
        if kind == MessageKind.STATE_RESPONSE:
            self.on_state_response(env)
            return
        if not self.is_member(env.sender):
            return
        try:
            if kind == MessageKind.PRE_PREPARE:
                self.on_pre_prepare(env)
            elif kind == MessageKind.PREPARE:
                self.on_prepare(env)
            elif kind == MessageKind.COMMIT:
                self.on_commit(env)
            elif kind == MessageKind.CHECKPOINT:
                self.on_checkpoint(env)
            elif kind == MessageKind.VIEW_CHANGE:
                self.on_view_change(env)
            elif kind == MessageKind.NEW_VIEW:
                self.on_new_view(env)
        except codec.CodecError:
            log.debug("%s: dropping undecodable %s from %s",
                      self.node_id, kind.name, env.sender)

    def on_timer(self, tag) -> None:
        if not isinstance(tag, tuple):
            return
        if tag[0] == "fwd":
            self._forward_request(tag[1])
        elif tag[0] == "suspect":
            self._suspicion_fired(tag[1])
        elif tag[0] == "vc":
            self._view_change_timer_fired(tag[1])
        elif tag[0] == "st":
            self._state_transfer_retry()

    # -- client requests -----------------------------------------------------------

    def on_request(self, env: SignedEnvelope) -> None:
        try:
            request = ClientRequest.from_bytes(env.body)
            request_env = env
        except codec.CodecError:
            # a forwarded request: the body is the original client envelope
            try:
                inner = envelope_from_bytes(env.body)
            except Exception:
                return
            if inner.kind != MessageKind.REQUEST:
                return
            if not verify_envelope(self.keyring, inner):
                return
            try:
                request = ClientRequest.from_bytes(inner.body)
            except codec.CodecError:
                return
            request_env = inner
        if request.client != request_env.sender:
            return
        if not request.ordered:
            self._serve_read(request)
            return

        digest = codec.digest_bytes(request_env.to_bytes())
        cached = self.state.reply_cache.get(request.client)
        if cached is not None and cached[0] >= request.request_sequence:
            if cached[0] == request.request_sequence:
                self._send_reply(request.client, digest, cached[1])
            return
        if digest in self.done_requests:
            return
        self.requests[digest] = request_env.to_bytes()
        if self.is_leader() and self.status == NORMAL and self.active_view:
            self._assign(digest)
        elif digest not in self.request_timers:
            timer = self.handle.set_timer(self.config.forward_timeout,
                                          ("fwd", digest))
            self.request_timers[digest] = ("fwd", timer)

    def _serve_read(self, request: ClientRequest) -> None:
        if request.op == OpTag.GET_LATEST_HASH:
            body = ConsensusBody(self.view, 0,
                                 codec.digest_bytes(request.to_bytes()),
                                 encode_read_reply(self.state.last_block_hash,
                                                   self.state.last_block_number))
            self.handle.send(request.client, MessageKind.REPLY, body.to_bytes())

    def _assign(self, digest: bytes) -> None:
        if digest in self._assigned or digest in self.done_requests:
            return
        if not self.in_window(self.next_seq):
            if digest not in self._backlog:
                self._backlog.append(digest)
            return
        seq = self.next_seq
        self.next_seq += 1
        self._assigned[digest] = seq
        payload = self.requests[digest]
        body = ConsensusBody(self.view, seq, digest, payload)
        raw = self._broadcast(MessageKind.PRE_PREPARE, body.to_bytes())
        self.pre_prepares[(self.view, seq)] = (digest, payload, raw)
        self._try_advance(self.view, seq, digest)

    def _drain_backlog(self) -> None:
        while self._backlog and self.in_window(self.next_seq):
            self._assign(self._backlog.pop(0))

    def _forward_request(self, digest: bytes) -> None:
        if digest in self.done_requests or digest not in self.requests:
            self.request_timers.pop(digest, None)
            return
        leader = self.leader_of(self.view)
        if leader != self.node_id:
            # nest the original client envelope so its signature travels along
            self.handle.send(leader, MessageKind.REQUEST, self.requests[digest])
        timer = self.handle.set_timer(
            max(self.config.suspect_timeout - self.config.forward_timeout, 0.01),
            ("suspect", digest))
        self.request_timers[digest] = ("suspect", timer)

    def _suspicion_fired(self, digest: bytes) -> None:
        self.request_timers.pop(digest, None)
        if digest in self.done_requests or digest not in self.requests:
            return
        log.info("%s: leader %s suspected over request %s", self.node_id,
                 self.leader_of(self.view), digest.hex()[:12])
        self._suspect_leader()

    def _cancel_request_timer(self, digest: bytes) -> None:
        entry = self.request_timers.pop(digest, None)
        if entry is not None:
            self.handle.cancel_timer(entry[1])

    def _restart_request_timers(self) -> None:
        for digest in list(self.request_timers):
            self._cancel_request_timer(digest)
        if self.is_leader():
            for digest in list(self.requests):
                if digest not in self.done_requests:
                    self._assign(digest)
            return
        for digest, payload in self.requests.items():
            if digest in self.done_requests:
                continue
            # nudge the new leader immediately, then watch it
            self.handle.send(self.leader_of(self.view), MessageKind.REQUEST, payload)
            timer = self.handle.set_timer(self.config.suspect_timeout,
                                          ("suspect", digest))
            self.request_timers[digest] = ("suspect", timer)

    # -- three-phase protocol -------------------------------------------------------

    def _verify_request_payload(self, digest: bytes, payload: bytes) -> bool:
        if payload == b"":
            return digest == NULL_DIGEST
        if codec.digest_bytes(payload) != digest:
            return False
        try:
            inner = envelope_from_bytes(payload)
            request = ClientRequest.from_bytes(inner.body)
        except Exception:
            return False
        if inner.kind != MessageKind.REQUEST or not request.ordered:
            return False
        if request.client != inner.sender:
            return False
        return verify_envelope(self.keyring, inner)

    def on_pre_prepare(self, env: SignedEnvelope) -> None:
        body = ConsensusBody.from_bytes(env.body)
        if body.view != self.view or self.status != NORMAL or not self.active_view:
            return
        if env.sender != self.leader_of(body.view) or env.sender == self.node_id:
            return
        if body.seq > self.stable_seq + self.config.window:
            # out-of-window proposal: grounds for suspicion
            log.info("%s: leader proposed seq %d outside window (stable %d)",
                     self.node_id, body.seq, self.stable_seq)
            self._suspect_leader()
            return
        if body.seq <= self.stable_seq:
            return
        existing = self.pre_prepares.get((body.view, body.seq))
        if existing is not None:
            return  # never accept a second pre-prepare for the slot
        if not self._verify_request_payload(body.digest, body.payload):
            return
        self.pre_prepares[(body.view, body.seq)] = (body.digest, body.payload,
                                                    env.to_bytes())
        if body.payload:
            self.requests.setdefault(body.digest, body.payload)
        prepare = ConsensusBody(body.view, body.seq, body.digest)
        raw = self._broadcast(MessageKind.PREPARE, prepare.to_bytes())
        self.prepares.setdefault((body.view, body.seq, body.digest), {})[
            self.node_id] = raw
        self._try_advance(body.view, body.seq, body.digest)

    def on_prepare(self, env: SignedEnvelope) -> None:
        body = ConsensusBody.from_bytes(env.body)
        if body.view != self.view or not self.in_window(body.seq):
            return
        if env.sender == self.leader_of(body.view):
            return  # the leader's voice is its pre-prepare
        self.prepares.setdefault((body.view, body.seq, body.digest), {})[
            env.sender] = env.to_bytes()
        self._try_advance(body.view, body.seq, body.digest)

    def on_commit(self, env: SignedEnvelope) -> None:
        body = ConsensusBody.from_bytes(env.body)
        if body.view != self.view or not self.in_window(body.seq):
            return
        self.commits.setdefault((body.view, body.seq, body.digest), {})[
            env.sender] = env.to_bytes()
        self._try_advance(body.view, body.seq, body.digest)

    def _prepared(self, view: int, seq: int, digest: bytes) -> bool:
        entry = self.pre_prepares.get((view, seq))
        if entry is None or entry[0] != digest:
            return False
        return len(self.prepares.get((view, seq, digest), {})) >= 2 * self.state.f

    def _try_advance(self, view: int, seq: int, digest: bytes) -> None:
        if self._prepared(view, seq, digest):
            existing = self.prepared_certs.get(seq)
            if existing is None or existing.view < view:
                prepare_envs = tuple(
                    self.prepares.get((view, seq, digest), {}).values())
                self.prepared_certs[seq] = PreparedProof(
                    seq, view, digest, self.pre_prepares[(view, seq)][2],
                    prepare_envs)
            if (view, seq) not in self.sent_commit:
                self.sent_commit.add((view, seq))
                commit = ConsensusBody(view, seq, digest)
                raw = self._broadcast(MessageKind.COMMIT, commit.to_bytes())
                self.commits.setdefault((view, seq, digest), {})[self.node_id] = raw
            commit_senders = self.commits.get((view, seq, digest), {})
            if (len(commit_senders) >= self.quorum()
                    and seq not in self.executable
                    and seq > self.state.executed_seq):
                payload = self.pre_prepares[(view, seq)][1]
                self.executable[seq] = (digest, payload)
                self.commit_certs[seq] = tuple(commit_senders.values())
                self._try_execute()

    # -- execution ---------------------------------------------------------------

    def enable_execution(self) -> None:
        self.execution_enabled = True
        self._try_execute()

    def _try_execute(self) -> None:
        while (self.execution_enabled
               and self.state.executed_seq + 1 in self.executable):
            seq = self.state.executed_seq + 1
            digest, payload = self.executable.pop(seq)
            self._execute(seq, payload)

    def _execute(self, seq: int, payload: bytes) -> None:
        self.state.executed_seq = seq
        self.op_log[seq] = payload
        self.execution_trace.append(
            (seq, codec.digest_bytes(payload) if payload else NULL_DIGEST))
        if payload != b"":
            digest = codec.digest_bytes(payload)
            self.done_requests.add(digest)
            self._cancel_request_timer(digest)
            self._execute_request(seq, payload, digest)
        if seq % self.config.checkpoint_interval == 0:
            self._take_checkpoint(seq)

    def _execute_request(self, seq: int, payload: bytes, digest: bytes) -> None:
        inner = envelope_from_bytes(payload)
        request = ClientRequest.from_bytes(inner.body)
        cached = self.state.reply_cache.get(request.client)
        if cached is not None and cached[0] >= request.request_sequence:
            if cached[0] == request.request_sequence:
                self._send_reply(request.client, digest, cached[1])
            return  # duplicate: never re-execute

        if request.op == OpTag.ADD_TRANSACTION:
            reply = self._execute_add_transaction(seq, request.payload)
        elif request.op == OpTag.RECONFIGURE:
            reply = self._execute_reconfigure(seq, request.payload)
        elif request.op == OpTag.GET_LATEST_HASH:
            reply = OrderingReply(seq, True, "ok", self.state.last_block_hash,
                                  self.state.last_block_number,
                                  self.state.pending_queue_hash())
        else:
            reply = OrderingReply(seq, False, "UNKNOWN_OPERATION",
                                  self.state.last_block_hash,
                                  self.state.last_block_number,
                                  self.state.pending_queue_hash())
        reply_bytes = reply.to_bytes()
        self.state.reply_cache[request.client] = (request.request_sequence,
                                                  reply_bytes)
        self._send_reply(request.client, digest, reply_bytes)

    def _execute_add_transaction(self, seq: int, tx_bytes: bytes) -> OrderingReply:
        state = self.state
        if codec.digest_bytes(tx_bytes) in state.pending_tx_ids():
            accepted, reason = False, "DUPLICATE_TX"
        else:
            pending_last = state.pending[-1] if state.pending else None
            accepted, reason = self.app.validate_transaction(tx_bytes, pending_last)
        if accepted:
            state.pending.append(tx_bytes)
            if len(state.pending) >= self.config.block_size:
                block = Block.create(state.last_block_number + 1,
                                     state.last_block_hash, state.pending,
                                     timestamp_ms=int(self.handle.now() * 1000))
                state.last_block_number = block.number
                state.last_block_hash = block.hash
                state.pending = []
                # co-located hand-off: the block goes straight to this node's
                # block service, never over the network
                self.app.deliver_block(block)
        return OrderingReply(seq, accepted, reason, state.last_block_hash,
                             state.last_block_number, state.pending_queue_hash())

    def _execute_reconfigure(self, seq: int, payload: bytes) -> OrderingReply:
        state = self.state
        try:
            action, node_id, new_f = decode_reconfigure(payload)
        except (codec.CodecError, KeyError):
            return self._reconfigure_reply(seq, False, "MALFORMED_RECONFIGURE")
        f = state.f if new_f is None else new_f
        members = list(state.members)
        if action == "add":
            if not self.keyring.knows(node_id):
                return self._reconfigure_reply(seq, False, "UNKNOWN_NODE")
            if node_id not in members:
                members.append(node_id)
        elif action == "remove":
            if node_id not in members:
                return self._reconfigure_reply(seq, False, "NOT_A_MEMBER")
            members.remove(node_id)
        else:
            return self._reconfigure_reply(seq, False, "MALFORMED_RECONFIGURE")
        if f < 0 or len(members) < 3 * f + 1:
            return self._reconfigure_reply(seq, False, "REJECTED")
        state.members = members
        state.f = f
        self._membership_changed()
        return self._reconfigure_reply(seq, True, "ok")

    def _reconfigure_reply(self, seq: int, accepted: bool, reason: str
                           ) -> OrderingReply:
        return OrderingReply(seq, accepted, reason, self.state.last_block_hash,
                             self.state.last_block_number,
                             self.state.pending_queue_hash(),
                             extra={"members": list(self.state.members),
                                    "f": self.state.f})

    def _membership_changed(self) -> None:
        log.info("%s: membership now %s (f=%d)", self.node_id,
                 self.state.members, self.state.f)
        self._assigned.clear()
        if self.on_membership_change is not None:
            self.on_membership_change(list(self.state.members), self.state.f)
        self._restart_request_timers()

    def _send_reply(self, client: str, request_digest: bytes,
                    reply_bytes: bytes) -> None:
        if self.suppress_replies:
            return
        body = ConsensusBody(self.view, 0, request_digest, reply_bytes)
        self.handle.send(client, MessageKind.REPLY, body.to_bytes())

    # -- checkpoints ------------------------------------------------------------------

    def _take_checkpoint(self, seq: int) -> None:
        snapshot = self.state.to_bytes()
        self.snapshots[seq] = snapshot
        digest = codec.digest_bytes(snapshot)
        body = codec.encode(["ckpt", seq, digest])
        raw = self._broadcast(MessageKind.CHECKPOINT, body)
        self.checkpoint_msgs.setdefault((seq, digest), {})[self.node_id] = raw
        self._update_stability(seq, digest)

    def on_checkpoint(self, env: SignedEnvelope) -> None:
        tag, seq, digest = codec.decode(env.body)
        if tag != "ckpt" or seq <= self.stable_seq:
            return
        self.checkpoint_msgs.setdefault((seq, bytes(digest)), {})[
            env.sender] = env.to_bytes()
        self._update_stability(seq, bytes(digest))

    def _update_stability(self, seq: int, digest: bytes) -> None:
        attesters = self.checkpoint_msgs.get((seq, digest), {})
        if len(attesters) < self.quorum() or seq <= self.stable_seq:
            return
        self.stable_seq = seq
        self.stable_proof = tuple(attesters.values())
        if seq in self.snapshots:
            self.stable_snapshot = self.snapshots[seq]
        self._garbage_collect(seq)
        if self.state.executed_seq < seq:
            # the quorum moved past us; catch up through state transfer
            log.info("%s: stable checkpoint %d beyond executed %d; "
                     "requesting state transfer", self.node_id, seq,
                     self.state.executed_seq)
            self.begin_state_transfer()
        elif self.is_leader():
            self._drain_backlog()

    def _garbage_collect(self, stable: int) -> None:
        for key in [k for k in self.pre_prepares if k[1] <= stable]:
            del self.pre_prepares[key]
        for key in [k for k in self.prepares if k[1] <= stable]:
            del self.prepares[key]
        for key in [k for k in self.commits if k[1] <= stable]:
            del self.commits[key]
        self.sent_commit = {k for k in self.sent_commit if k[1] > stable}
        for store in (self.prepared_certs, self.commit_certs, self.executable,
                      self.op_log):
            for seq in [s for s in store if s <= stable]:
                del store[seq]
        for seq in [s for s in self.snapshots if s < stable]:
            del self.snapshots[seq]
        for key in [k for k in self.checkpoint_msgs if k[0] < stable]:
            del self.checkpoint_msgs[key]
        if len(self.done_requests) > 20000:
            self.done_requests.clear()  # only an optimization cache

    # -- view change -------------------------------------------------------------------

    def _suspect_leader(self) -> None:
        if self.status == NORMAL:
            self._start_view_change(self.view + 1)

    def _start_view_change(self, new_view: int) -> None:
        if new_view <= self.view and not (new_view == self.view
                                          and self.status == NORMAL):
            return
        log.info("%s: starting view change to %d", self.node_id, new_view)
        self.view = new_view
        self.status = VIEW_CHANGE
        self.active_view = False
        self._assigned.clear()
        body = ViewChangeBody(
            new_view, self.stable_seq,
            codec.digest_bytes(self.stable_snapshot),
            self.stable_proof,
            tuple(self.prepared_certs[s] for s in sorted(self.prepared_certs)
                  if s > self.stable_seq),
        )
        raw = self._broadcast(MessageKind.VIEW_CHANGE, body.to_bytes())
        self.vc_msgs.setdefault(new_view, {})[self.node_id] = (body, raw)
        if self.vc_timer is not None:
            self.handle.cancel_timer(self.vc_timer)
        timeout = self.config.view_change_timeout * (2 ** min(self.vc_consecutive, 8))
        self.vc_timer = self.handle.set_timer(timeout, ("vc", new_view))
        self._maybe_send_new_view(new_view)

    def _view_change_timer_fired(self, view: int) -> None:
        if self.active_view and self.view >= view:
            return
        self.vc_consecutive += 1
        self._start_view_change(self.view + 1)

    def _validate_view_change(self, body: ViewChangeBody) -> bool:
        if body.stable_seq > 0:
            digests = {}
            for raw in body.checkpoint_proof:
                try:
                    env = envelope_from_bytes(raw)
                    tag, seq, digest = codec.decode(env.body)
                except Exception:
                    return False
                if (tag != "ckpt" or env.kind != MessageKind.CHECKPOINT
                        or seq != body.stable_seq
                        or bytes(digest) != body.stable_digest
                        or not self.is_member(env.sender)
                        or not verify_envelope(self.keyring, env)):
                    return False
                digests[env.sender] = True
            if len(digests) < self.quorum():
                return False
        for proof in body.prepared:
            if not self._validate_prepared_proof(proof):
                return False
        return True

    def _validate_prepared_proof(self, proof: PreparedProof) -> bool:
        try:
            pp_env = envelope_from_bytes(proof.pre_prepare_env)
            pp_body = ConsensusBody.from_bytes(pp_env.body)
        except Exception:
            return False
        if (pp_env.kind != MessageKind.PRE_PREPARE
                or pp_env.sender != self.leader_of(proof.view)
                or pp_body.view != proof.view or pp_body.seq != proof.seq
                or pp_body.digest != proof.digest
                or not verify_envelope(self.keyring, pp_env)
                or not self._verify_request_payload(proof.digest, pp_body.payload)):
            return False
        senders = set()
        for raw in proof.prepare_envs:
            try:
                env = envelope_from_bytes(raw)
                body = ConsensusBody.from_bytes(env.body)
            except Exception:
                continue
            if (env.kind == MessageKind.PREPARE
                    and body.view == proof.view and body.seq == proof.seq
                    and body.digest == proof.digest
                    and env.sender != self.leader_of(proof.view)
                    and self.is_member(env.sender)
                    and verify_envelope(self.keyring, env)):
                senders.add(env.sender)
        return len(senders) >= 2 * self.state.f

    def on_view_change(self, env: SignedEnvelope) -> None:
        body = ViewChangeBody.from_bytes(env.body)
        if body.new_view <= self.view and self.active_view:
            return
        if not self._validate_view_change(body):
            return
        self.vc_msgs.setdefault(body.new_view, {})[env.sender] = (body,
                                                                  env.to_bytes())
        # join a view change once f+1 others are at a higher view
        if body.new_view > self.view:
            higher = self.vc_msgs.get(body.new_view, {})
            if len([s for s in higher if s != self.node_id]) >= self.state.f + 1:
                self.vc_consecutive = 0
                self._start_view_change(body.new_view)
                return
        self._maybe_send_new_view(body.new_view)

    def _maybe_send_new_view(self, view: int) -> None:
        if (self.leader_of(view) != self.node_id or view in self.new_view_sent
                or view < self.view):
            return
        collected = self.vc_msgs.get(view, {})
        if len(collected) < self.quorum():
            return
        vc_envs = tuple(raw for _, raw in
                        (collected[s] for s in sorted(collected)))
        bodies = [body for body, _ in (collected[s] for s in sorted(collected))]
        min_s, pre_prepares = self._compute_new_view(view, bodies)
        nv = NewViewBody(view, vc_envs, pre_prepares)
        self.new_view_sent.add(view)
        self._broadcast(MessageKind.NEW_VIEW, nv.to_bytes())
        self._adopt_new_view(view, min_s, pre_prepares)

    def _compute_new_view(self, view: int, bodies) -> tuple[int, tuple]:
        """Deterministic re-proposal set; every replica recomputes and checks it."""
        min_s = max((b.stable_seq for b in bodies), default=0)
        winners: dict[int, PreparedProof] = {}
        for body in bodies:
            for proof in body.prepared:
                if proof.seq <= min_s:
                    continue
                best = winners.get(proof.seq)
                if best is None or proof.view > best.view:
                    winners[proof.seq] = proof
        max_s = max(winners, default=min_s)
        pps = []
        for seq in range(min_s + 1, max_s + 1):
            if seq in winners:
                proof = winners[seq]
                payload = ConsensusBody.from_bytes(
                    envelope_from_bytes(proof.pre_prepare_env).body).payload
                body = ConsensusBody(view, seq, proof.digest, payload)
            else:
                body = ConsensusBody(view, seq, NULL_DIGEST, b"")
            pps.append(make_envelope(self.keyring, MessageKind.PRE_PREPARE,
                                     body.to_bytes()).to_bytes())
        return min_s, tuple(pps)

    def on_new_view(self, env: SignedEnvelope) -> None:
        body = NewViewBody.from_bytes(env.body)
        if env.sender != self.leader_of(body.view):
            return
        if body.view < self.view or (body.view == self.view and self.active_view):
            return
        senders = {}
        bodies = []
        for raw in body.view_change_envs:
            try:
                vc_env = envelope_from_bytes(raw)
                vc_body = ViewChangeBody.from_bytes(vc_env.body)
            except Exception:
                return
            if (vc_env.kind != MessageKind.VIEW_CHANGE
                    or vc_body.new_view != body.view
                    or not self.is_member(vc_env.sender)
                    or not verify_envelope(self.keyring, vc_env)
                    or not self._validate_view_change(vc_body)):
                return
            if vc_env.sender not in senders:
                senders[vc_env.sender] = True
                bodies.append(vc_body)
        if len(senders) < self.quorum():
            return
        min_s, expected = self._compute_new_view(body.view, bodies)
        got = []
        for raw in body.pre_prepare_envs:
            try:
                pp_env = envelope_from_bytes(raw)
                pp_body = ConsensusBody.from_bytes(pp_env.body)
            except Exception:
                return
            if (pp_env.kind != MessageKind.PRE_PREPARE
                    or pp_env.sender != env.sender
                    or not verify_envelope(self.keyring, pp_env)):
                return
            got.append((pp_body.seq, pp_body.digest, pp_body.payload))
        expect_tuples = []
        for raw in expected:
            pp_body = ConsensusBody.from_bytes(envelope_from_bytes(raw).body)
            expect_tuples.append((pp_body.seq, pp_body.digest, pp_body.payload))
        if got != expect_tuples:
            log.info("%s: NEW_VIEW from %s does not match recomputation",
                     self.node_id, env.sender)
            return
        self._adopt_new_view(body.view, min_s, body.pre_prepare_envs)

    def _adopt_new_view(self, view: int, min_s: int, pre_prepare_envs) -> None:
        log.info("%s: entering view %d", self.node_id, view)
        self.view = view
        self.status = NORMAL
        self.active_view = True
        self.vc_consecutive = 0
        if self.vc_timer is not None:
            self.handle.cancel_timer(self.vc_timer)
            self.vc_timer = None
        for old in [v for v in self.vc_msgs if v <= view]:
            del self.vc_msgs[old]
        max_seq = self.stable_seq
        for raw in pre_prepare_envs:
            pp_env = envelope_from_bytes(raw)
            pp_body = ConsensusBody.from_bytes(pp_env.body)
            max_seq = max(max_seq, pp_body.seq)
            if pp_body.seq <= self.stable_seq:
                continue
            self.pre_prepares[(view, pp_body.seq)] = (pp_body.digest,
                                                      pp_body.payload, raw)
            if pp_body.payload:
                self.requests.setdefault(pp_body.digest, pp_body.payload)
            if self.leader_of(view) != self.node_id:
                prepare = ConsensusBody(view, pp_body.seq, pp_body.digest)
                praw = self._broadcast(MessageKind.PREPARE, prepare.to_bytes())
                self.prepares.setdefault(
                    (view, pp_body.seq, pp_body.digest), {})[self.node_id] = praw
            self._try_advance(view, pp_body.seq, pp_body.digest)
        self.next_seq = max_seq + 1
        if min_s > self.state.executed_seq:
            self.begin_state_transfer()
        self._restart_request_timers()

    # -- state transfer -----------------------------------------------------------------

    def begin_state_transfer(self) -> None:
        if self.state_transfer_active:
            return
        self.state_transfer_active = True
        self.execution_enabled = False
        self._st_attempt = 0
        self._request_state()

    def _request_state(self) -> None:
        donors = [m for m in self.members if m != self.node_id]
        if not donors:
            self.state_transfer_active = False
            return
        donor = donors[self._st_attempt % len(donors)]
        self._st_attempt += 1
        self.handle.send(donor, MessageKind.STATE_REQUEST,
                         encode_state_request(self.state.executed_seq))
        self._st_timer = self.handle.set_timer(
            self.config.state_transfer_timeout, ("st",))

    def _state_transfer_retry(self) -> None:
        if self.state_transfer_active:
            self._request_state()

    def on_state_request(self, env: SignedEnvelope) -> None:
        if not self.keyring.knows(env.sender):
            return
        try:
            decode_state_request(env.body)
        except codec.CodecError:
            return
        entries = []
        for seq in range(self.stable_seq + 1, self.state.executed_seq + 1):
            if seq not in self.op_log or seq not in self.commit_certs:
                return  # cannot provide a verifiable tail; stay silent
            entries.append((seq, self.op_log[seq], self.commit_certs[seq]))
        response = StateResponse(self.stable_seq, self.stable_snapshot,
                                 self.stable_proof, tuple(entries), self.view,
                                 self.state.executed_seq)
        self.handle.send(env.sender, MessageKind.STATE_RESPONSE,
                         response.to_bytes())

    def _validate_state_response(self, resp: StateResponse) -> bool:
        digest = codec.digest_bytes(resp.snapshot)
        if resp.stable_seq == 0:
            if digest != self._initial_state_digest:
                return False
        else:
            senders = set()
            for raw in resp.checkpoint_proof:
                try:
                    env = envelope_from_bytes(raw)
                    tag, seq, cp_digest = codec.decode(env.body)
                except Exception:
                    return False
                if (env.kind != MessageKind.CHECKPOINT or tag != "ckpt"
                        or seq != resp.stable_seq or bytes(cp_digest) != digest
                        or not self.keyring.knows(env.sender)
                        or not verify_envelope(self.keyring, env)):
                    return False
                senders.add(env.sender)
            if len(senders) < self.quorum():
                return False
        expected_seq = resp.stable_seq
        for seq, payload, proof in resp.op_log:
            expected_seq += 1
            if seq != expected_seq:
                return False
            payload_digest = (codec.digest_bytes(payload) if payload
                              else NULL_DIGEST)
            senders = set()
            for raw in proof:
                try:
                    env = envelope_from_bytes(raw)
                    body = ConsensusBody.from_bytes(env.body)
                except Exception:
                    continue
                if (env.kind == MessageKind.COMMIT and body.seq == seq
                        and body.digest == payload_digest
                        and self.keyring.knows(env.sender)
                        and verify_envelope(self.keyring, env)):
                    senders.add(env.sender)
            if len(senders) < self.quorum():
                return False
        return resp.op_log == () or resp.op_log[-1][0] == resp.executed_seq

    def on_state_response(self, env: SignedEnvelope) -> None:
        if not self.state_transfer_active:
            return
        try:
            resp = StateResponse.from_bytes(env.body)
        except codec.CodecError:
            return
        if resp.executed_seq <= self.state.executed_seq and resp.stable_seq == 0:
            # donor has nothing we lack; we are already current
            if self.state.executed_seq >= resp.executed_seq:
                self._finish_state_transfer()
                return
        if not self._validate_state_response(resp):
            log.warning("%s: state response from %s failed verification; "
                        "retrying another donor", self.node_id, env.sender)
            return  # SNAPSHOT_DIGEST_MISMATCH: the retry timer tries the next donor
        if self._st_timer is not None:
            self.handle.cancel_timer(self._st_timer)
            self._st_timer = None
        if self.state_transfer_handler is not None:
            self.state_transfer_handler(resp)
        else:
            self.apply_state_transfer(resp)

    def apply_state_transfer(self, resp: StateResponse) -> None:
        """Install the snapshot and replay the verified operation tail."""
        if resp.stable_seq > 0 or resp.executed_seq > self.state.executed_seq:
            self.install_snapshot(resp)
            self.replay_operations(resp.op_log)
        self.view = max(self.view, resp.view_hint)
        self._finish_state_transfer()

    def install_snapshot(self, resp: StateResponse) -> None:
        self.state = ReplicaState.from_bytes(resp.snapshot)
        self.stable_seq = resp.stable_seq
        self.stable_snapshot = resp.snapshot
        self.stable_proof = resp.checkpoint_proof
        self.snapshots = {resp.stable_seq: resp.snapshot}
        self.pre_prepares.clear()
        self.prepares.clear()
        self.commits.clear()
        self.sent_commit.clear()
        self.prepared_certs.clear()
        self.commit_certs.clear()
        self.op_log.clear()
        self.executable = {s: v for s, v in self.executable.items()
                           if s > self.state.executed_seq}

    def replay_operations(self, op_log) -> None:
        self.suppress_replies = True
        try:
            for seq, payload, proof in op_log:
                if seq != self.state.executed_seq + 1:
                    continue
                self.commit_certs[seq] = tuple(proof)
                self._execute(seq, payload)
        finally:
            self.suppress_replies = False

    def _finish_state_transfer(self) -> None:
        self.state_transfer_active = False
        if self._st_timer is not None:
            self.handle.cancel_timer(self._st_timer)
            self._st_timer = None
        self.status = NORMAL
        self.active_view = True
        self.execution_enabled = True
        self._try_execute()
