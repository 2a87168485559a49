"""Deterministic in-process network simulator with fault injection.

A single discrete-event scheduler owns every message delivery and timer
firing, so a run is fully reproducible from its seed. Protocol cores are
plugged in as actors; they talk to the network only through their SimHandle,
which mirrors the live transport surface (send, broadcast, timers, clock).

Fault plans model one node misbehaving: crashing at a global step, dropping
or delaying its outgoing traffic, being partitioned away for intervals, or
equivocating (per-destination mutation of outgoing messages, supplied by the
harness as a mutator object so this module stays protocol-agnostic).
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field

from ..crypto import KeyRing
from .envelope import MessageKind, SignedEnvelope, make_envelope, verify_envelope

log = logging.getLogger(__name__)


@dataclass
class FaultPlan:
    """Per-node misbehaviour description. All randomness is seeded."""

    crash_at_step: int | None = None
    drop_probability: float = 0.0
    delay_bounds: tuple[float, float] | None = None
    equivocate_kinds: frozenset = frozenset()
    mutator: object | None = None  # needs mutate(env, dest) -> env|None
    partitions: list[tuple[float, float, frozenset]] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be within [0, 1]")
        if self.delay_bounds is not None:
            lo, hi = self.delay_bounds
            if lo < 0 or hi < lo:
                raise ValueError("delay bounds must satisfy 0 <= lo <= hi")
        if self.equivocate_kinds and self.mutator is None:
            raise ValueError("equivocate_kinds requires a mutator")
        for start, end, group in self.partitions:
            if end < start:
                raise ValueError("partition interval must satisfy start <= end")
            if not isinstance(group, frozenset):
                raise ValueError("partition group must be a frozenset of node ids")


class SimHandle:
    """A node's window onto the simulated network."""

    def __init__(self, net: "SimNetwork", node_id: str, keyring: KeyRing):
        self.net = net
        self.node_id = node_id
        self.keyring = keyring
        self.rng = random.Random(f"{net.seed}:{node_id}")

    def now(self) -> float:
        return self.net.now

    def send(self, dest: str, kind: MessageKind, body: bytes) -> None:
        env = make_envelope(self.keyring, kind, body)
        self.net._submit(self.node_id, dest, env)

    def broadcast(self, dests, kind: MessageKind, body: bytes) -> None:
        env = make_envelope(self.keyring, kind, body)
        for dest in dests:
            self.net._submit(self.node_id, dest, env)

    def set_timer(self, delay: float, tag) -> int:
        return self.net._set_timer(self.node_id, delay, tag)

    def cancel_timer(self, timer_id: int) -> None:
        self.net._cancel_timer(timer_id)


class SimNetwork:
    def __init__(self, seed: int = 0, latency: tuple[float, float] = (0.0005, 0.003),
                 record_transcript: bool = False):
        self.seed = seed
        self.now = 0.0
        self.steps = 0
        self.latency = latency
        self._rng = random.Random(f"net:{seed}")
        self._events: list = []  # (time, seq, fn, args)
        self._seq = itertools.count()
        self._actors: dict[str, object] = {}
        self._handles: dict[str, SimHandle] = {}
        self._keyrings: dict[str, KeyRing] = {}
        self._faults: dict[str, FaultPlan] = {}
        self._crashed: set[str] = set()
        self._cancelled: set[int] = set()
        self._link_clock: dict[tuple[str, str], float] = {}
        self.transcript: list | None = [] if record_transcript else None
        self.dropped_bad_signature = 0
        self.delivered = 0

    # -- topology ----------------------------------------------------------

    def add_node(self, node_id: str, keyring: KeyRing,
                 fault: FaultPlan | None = None) -> SimHandle:
        if node_id in self._handles:
            raise ValueError(f"duplicate sim node {node_id}")
        handle = SimHandle(self, node_id, keyring)
        self._handles[node_id] = handle
        self._keyrings[node_id] = keyring
        if fault is not None:
            self._faults[node_id] = fault
        return handle

    def bind(self, node_id: str, actor) -> None:
        """Attach the actor that receives on_envelope(env) / on_timer(tag)."""
        self._actors[node_id] = actor

    def crash(self, node_id: str) -> None:
        self._crashed.add(node_id)

    def restart(self, node_id: str) -> None:
        self._crashed.discard(node_id)

    def is_crashed(self, node_id: str) -> bool:
        return node_id in self._crashed

    # -- sending -----------------------------------------------------------

    def _submit(self, src: str, dest: str, env: SignedEnvelope) -> None:
        if src in self._crashed or dest not in self._handles:
            return
        fault = self._faults.get(src)
        extra = 0.0
        if fault is not None:
            if self._partitioned(fault, src, dest):
                return
            if fault.drop_probability and self._rng.random() < fault.drop_probability:
                return
            if env.kind in fault.equivocate_kinds:
                env = fault.mutator.mutate(env, dest)
                if env is None:
                    return
            if fault.delay_bounds is not None:
                extra = self._rng.uniform(*fault.delay_bounds)
        dest_fault = self._faults.get(dest)
        if dest_fault is not None and self._partitioned(dest_fault, src, dest):
            return
        if src == dest:
            base = 0.0
        else:
            base = self._rng.uniform(*self.latency)
        at = self.now + base + extra
        link = (src, dest)
        # per-link FIFO: never schedule a delivery earlier than the previous one
        floor = self._link_clock.get(link, 0.0)
        if at < floor:
            at = floor
        self._link_clock[link] = at
        heapq.heappush(self._events, (at, next(self._seq), self._deliver, (dest, env)))

    def _partitioned(self, fault: FaultPlan, src: str, dest: str) -> bool:
        for start, end, group in fault.partitions:
            if start <= self.now < end and (src in group) != (dest in group):
                return True
        return False

    def _deliver(self, dest: str, env: SignedEnvelope) -> None:
        if dest in self._crashed:
            return
        actor = self._actors.get(dest)
        if actor is None:
            return
        keyring = self._keyrings[dest]
        if not verify_envelope(keyring, env):
            self.dropped_bad_signature += 1
            return
        fault = self._faults.get(dest)
        if fault is not None and fault.mutator is not None:
            observe = getattr(fault.mutator, "observe", None)
            if observe is not None:
                observe(env)
        self.delivered += 1
        if self.transcript is not None:
            self.transcript.append((round(self.now, 9), dest, env.sender, int(env.kind)))
        actor.on_envelope(env)

    # -- timers ------------------------------------------------------------

    def _set_timer(self, node_id: str, delay: float, tag) -> int:
        timer_id = next(self._seq)
        heapq.heappush(self._events,
                       (self.now + delay, timer_id, self._fire_timer, (node_id, timer_id, tag)))
        return timer_id

    def _cancel_timer(self, timer_id: int) -> None:
        self._cancelled.add(timer_id)

    def _fire_timer(self, node_id: str, timer_id: int, tag) -> None:
        if timer_id in self._cancelled:
            self._cancelled.discard(timer_id)
            return
        if node_id in self._crashed:
            return
        actor = self._actors.get(node_id)
        if actor is not None:
            if self.transcript is not None:
                self.transcript.append((round(self.now, 9), node_id, "timer", str(tag)))
            actor.on_timer(tag)

    # -- scheduling --------------------------------------------------------

    def step(self) -> bool:
        if not self._events:
            return False
        at, _, fn, args = heapq.heappop(self._events)
        self.now = max(self.now, at)
        self.steps += 1
        self._check_crashes()
        fn(*args)
        return True

    def _check_crashes(self) -> None:
        for node_id, fault in self._faults.items():
            if fault.crash_at_step is not None and self.steps >= fault.crash_at_step:
                self._crashed.add(node_id)

    def run_until(self, predicate, max_time: float = 120.0, check_every: int = 1) -> bool:
        """Run until predicate() is true; False if events ran out or time exceeded."""
        since_check = 0
        if predicate():
            return True
        while self._events and self.now <= max_time:
            self.step()
            since_check += 1
            if since_check >= check_every:
                since_check = 0
                if predicate():
                    return True
        return predicate()

    def run_for(self, duration: float) -> None:
        deadline = self.now + duration
        while self._events and self._events[0][0] <= deadline:
            self.step()
        self.now = max(self.now, deadline)

    def drain(self, max_steps: int = 1_000_000) -> None:
        remaining = max_steps
        while self._events and remaining > 0:
            self.step()
            remaining -= 1
