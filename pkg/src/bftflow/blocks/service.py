"""Block exchange and recovery: serving peers and syncing from them.

The service owns the local store. Blocks arrive either from the co-located
ordering service (the normal path, one at a time, in order) or from peers
during recovery. Sync is an event-driven session: request a range from one
random peer, double the fan-out every time a round times out, verify
backwards from the authoritative head, then chase interior gaps with
single-block requests aimed at the most recent donor.
"""

from __future__ import annotations

import logging

from .. import codec
from ..transport.envelope import MessageKind, SignedEnvelope
from .block import Block, decode_block, encode_block
from .store import BlockStore, LinkageMismatch

log = logging.getLogger(__name__)


class SyncStalled(Exception):
    """All peers queried and gaps remain after the retry budget."""


def encode_block_request(target_hash: bytes) -> bytes:
    return codec.encode([target_hash])


def encode_blockchain_request(lower: int, upper: int) -> bytes:
    if lower > upper:
        raise ValueError("blockchain request requires lower <= upper")
    return codec.encode([lower, upper])


def encode_block_send(block: Block) -> bytes:
    return codec.encode([encode_block(block)])


def encode_blockchain_send(blocks: list[Block]) -> bytes:
    return codec.encode([[encode_block(b) for b in blocks]])


class BlockService:
    def __init__(self, node_id: str, handle, peers: list[str], store: BlockStore,
                 on_block, fetch_timeout: float = 2.0, buffer_limit: int = 1024,
                 max_stall_retries: int = 3):
        self.node_id = node_id
        self.handle = handle
        self.peers = [p for p in peers if p != node_id]
        self.store = store
        self.on_block = on_block
        self.fetch_timeout = fetch_timeout
        self.buffer_limit = buffer_limit
        self.max_stall_retries = max_stall_retries
        self._buffer: dict[int, Block] = {}
        self._sync: _SyncSession | None = None
        self.halted = False

    def set_peers(self, peers: list[str]) -> None:
        self.peers = [p for p in peers if p != self.node_id]

    # -- local path (ordering service hands blocks straight over) ----------

    def receive_block(self, block: Block) -> None:
        if self.halted:
            return
        if block.number <= self.store.head_number:
            return
        if block.number == self.store.head_number + 1 and self._sync is None:
            self.store.advance_head(block)  # LinkageMismatch propagates
            self.on_block(block)
            self._drain_buffer()
        else:
            self._buffer_block(block)

    def _buffer_block(self, block: Block) -> None:
        self._buffer[block.number] = block
        while len(self._buffer) > self.buffer_limit:
            # evict the highest numbers; they will be re-fetched if needed
            del self._buffer[max(self._buffer)]

    def _drain_buffer(self) -> None:
        while self.store.head_number + 1 in self._buffer:
            block = self._buffer.pop(self.store.head_number + 1)
            self.store.advance_head(block)
            self.on_block(block)

    # -- serving peers -------------------------------------------------------

    def on_envelope(self, env: SignedEnvelope) -> None:
        if env.kind == MessageKind.BLOCK_REQUEST:
            self._serve_block_request(env)
        elif env.kind == MessageKind.BLOCKCHAIN_REQUEST:
            self._serve_range_request(env)
        elif env.kind in (MessageKind.BLOCK_SEND, MessageKind.BLOCKCHAIN_SEND):
            if self._sync is not None:
                self._sync.on_blocks(env)

    def on_timer(self, tag) -> None:
        if self._sync is not None:
            self._sync.on_timer(tag)

    def _serve_block_request(self, env: SignedEnvelope) -> None:
        (target_hash,) = codec.decode(env.body)
        block = self.store.get_by_hash(target_hash)
        if block is None:
            return  # silence; the requester escalates
        self.handle.send(env.sender, MessageKind.BLOCK_SEND, encode_block_send(block))

    def _serve_range_request(self, env: SignedEnvelope) -> None:
        lower, upper = codec.decode(env.body)
        if lower > upper:
            return
        # respond only when we can satisfy the upper bound
        span = self.store.contiguous_range_ending(upper)
        if span is None:
            return
        lo = max(span[0], lower)
        blocks = [self.store.get(k) for k in range(lo, upper + 1)]
        self.handle.send(env.sender, MessageKind.BLOCKCHAIN_SEND,
                         encode_blockchain_send(blocks))

    # -- recovery sync ---------------------------------------------------------

    def start_sync(self, head_hash: bytes, head_number: int, on_done,
                   on_stalled=None) -> None:
        if self._sync is not None:
            self._sync.cancel()
        self._sync = _SyncSession(self, head_hash, head_number, on_done, on_stalled)
        self._sync.start()

    def sync_active(self) -> bool:
        return self._sync is not None

    def _sync_finished(self) -> None:
        self._sync = None
        self._drain_buffer()


class _SyncSession:
    def __init__(self, service: BlockService, head_hash: bytes, head_number: int,
                 on_done, on_stalled):
        self.svc = service
        self.head_hash = head_hash
        self.head_number = head_number
        self.on_done = on_done
        self.on_stalled = on_stalled
        self.round = 0
        self.stall_count = 0
        self.last_donor: str | None = None
        self.timer: int | None = None
        self.done = False
        self.single_target: bytes | None = None

    # The authoritative head always comes from the ordering service; a local
    # head beyond it would contradict consensus and is ignored after logging.
    def start(self) -> None:
        if self.head_number < self.svc.store.head_number:
            log.warning("%s: local head %d beyond consensus head %d; trusting consensus",
                        self.svc.node_id, self.svc.store.head_number, self.head_number)
        if self._maybe_complete():
            return
        self._request_round()

    def cancel(self) -> None:
        self.done = True
        self._clear_timer()

    def _clear_timer(self) -> None:
        if self.timer is not None:
            self.svc.handle.cancel_timer(self.timer)
            self.timer = None

    def _gaps(self) -> list[int]:
        store = self.svc.store
        return [k for k in range(self.head_number + 1) if k not in store]

    def _maybe_complete(self) -> bool:
        store = self.svc.store
        head_block = store.get(self.head_number)
        if head_block is None or head_block.hash != self.head_hash:
            return False
        result = store.verify_backward(self.head_hash)
        if result.ok:
            store.set_head(self.head_number, self.head_hash)
            store.verified_prefix_from = 0
            self.done = True
            self._clear_timer()
            self.svc._sync_finished()
            self.on_done()
            return True
        if result.failed_at is not None:
            # stored bytes do not rehash: discard and treat as missing
            bad = store.blocks.pop(result.failed_at)
            store._by_hash.pop(bad.hash, None)
        return False

    def _request_round(self) -> None:
        if self.done:
            return
        gaps = self._gaps()
        if not gaps:
            # chain is dense but verification still failed somewhere upstream
            if self._maybe_complete():
                return
            gaps = self._gaps()
            if not gaps:
                if not self._stall():
                    self.timer = self.svc.handle.set_timer(
                        self.svc.fetch_timeout, ("sync-backoff",))
                return
        peers = self.svc.peers
        if not peers:
            if not self._stall():
                self.timer = self.svc.handle.set_timer(
                    self.svc.fetch_timeout, ("sync-backoff",))
            return
        self._update_single_target()
        use_single = len(gaps) == 1 and self.single_target is not None
        if use_single:
            body = encode_block_request(self.single_target)
            kind = MessageKind.BLOCK_REQUEST
        else:
            body = encode_blockchain_request(min(gaps), max(gaps))
            kind = MessageKind.BLOCKCHAIN_REQUEST
        fanout = min(2 ** self.round, len(peers))
        if use_single and self.round == 0 and self.last_donor is not None:
            # chase interior gaps on the peer that served us most recently
            chosen = [self.last_donor]
        else:
            chosen = self.svc.handle.rng.sample(peers, fanout)
        for peer in chosen:
            self.svc.handle.send(peer, kind, body)
        self.timer = self.svc.handle.set_timer(self.svc.fetch_timeout,
                                               ("sync-fetch", self.round))
    def on_timer(self, tag) -> None:
        if self.done or not isinstance(tag, tuple):
            return
        if tag[0] == "sync-fetch":
            if 2 ** self.round >= max(len(self.svc.peers), 1):
                if self._stall():
                    return  # backoff timer owns the next attempt
            else:
                self.round += 1
            self._request_round()
        elif tag[0] == "sync-backoff":
            self.round = 0
            self._request_round()

    def _stall(self) -> bool:
        """Full fan-out failed. Returns True when deferring to a backoff timer."""
        self.stall_count += 1
        if self.on_stalled is not None:
            self.on_stalled(self.stall_count)
        self.round = 0
        if self.stall_count >= self.svc.max_stall_retries:
            log.warning("%s: block sync stalled after %d attempts; backing off",
                        self.svc.node_id, self.stall_count)
            backoff = self.svc.fetch_timeout * (2 ** min(self.stall_count, 6))
            self.timer = self.svc.handle.set_timer(backoff, ("sync-backoff",))
            return True
        return False

    def on_blocks(self, env: SignedEnvelope) -> None:
        if self.done:
            return
        self._clear_timer()
        if env.kind == MessageKind.BLOCK_SEND:
            (raw,) = codec.decode(env.body)
            raws = [raw]
        else:
            (raws,) = codec.decode(env.body)
        added = 0
        for raw in raws:
            try:
                block = decode_block(bytes(raw))
            except codec.CodecError:
                continue
            if not block.verify_hash():
                continue
            if block.number <= self.head_number:
                self.svc.store.put(block)
                added += 1
        if added:
            self.last_donor = env.sender
            self.round = 0
        self._evaluate()

    def _update_single_target(self) -> None:
        """Name the hash the next missing block must carry, when knowable."""
        self.single_target = None
        head_block = self.svc.store.get(self.head_number)
        if head_block is None or head_block.hash != self.head_hash:
            if self._gaps() == [self.head_number]:
                self.single_target = self.head_hash
            return
        result = self.svc.store.verify_backward(self.head_hash)
        if result.missing is not None:
            above = self.svc.store.get(result.missing + 1)
            if above is not None:
                self.single_target = above.previous_hash

    def _evaluate(self) -> None:
        if self._maybe_complete():
            return
        self._request_round()
