"""In-process consensus clusters over the deterministic simulator.

Used by the protocol tests and the acceptance suite: build n replicas plus
any number of clients, inject fault plans, drive the scheduler, and assert
the cross-replica invariants (execution agreement, block-position agreement,
head monotonicity).
"""

from __future__ import annotations

import random

from .. import crypto
from ..ordering.client import ClientCore, ClientOutcome
from ..ordering.messages import OpTag
from ..ordering.replica import ReplicaConfig, ReplicaCore
from ..ordering.state import AcceptAllApp
from ..transport.sim import FaultPlan, SimNetwork
from .faults import ConsensusEquivocator


class OutcomeBox:
    """Holds a single ClientOutcome once it arrives."""

    def __init__(self):
        self.outcome: ClientOutcome | None = None

    def __call__(self, outcome: ClientOutcome) -> None:
        self.outcome = outcome

    @property
    def done(self) -> bool:
        return self.outcome is not None


class ConsensusCluster:
    def __init__(self, n: int = 4, f: int = 1, seed: int = 0,
                 client_ids=("c0",), fault_plans: dict | None = None,
                 fault_kinds: dict | None = None,
                 block_size: int = 1, checkpoint_interval: int = 16,
                 replica_config: ReplicaConfig | None = None,
                 client_timeout: float = 3.0, latency=(0.0005, 0.003),
                 app_factory=None):
        self.node_ids = [f"n{i}" for i in range(n)]
        self.client_ids = list(client_ids)
        all_ids = self.node_ids + self.client_ids
        self.rings = crypto.build_rings("hmac-sha256", all_ids,
                                        seed=f"cluster:{seed}".encode())
        self.net = SimNetwork(seed=seed, latency=latency)
        self.f = f
        self.seed = seed
        self.apps = {}
        self.replicas: dict[str, ReplicaCore] = {}
        self.clients: dict[str, ClientCore] = {}
        fault_plans = dict(fault_plans or {})
        for nid, kind in (fault_kinds or {}).items():
            fault_plans[nid] = build_fault_plan(kind, seed, nid, self.rings)
        self.faulty = set(fault_plans)

        config = replica_config or ReplicaConfig(
            block_size=block_size, checkpoint_interval=checkpoint_interval,
            forward_timeout=0.25, view_change_timeout=1.0,
            state_transfer_timeout=0.5)
        self.config = config
        for nid in self.node_ids:
            plan = fault_plans.get(nid)
            handle = self.net.add_node(nid, self.rings[nid], fault=plan)
            app = app_factory(nid) if app_factory else AcceptAllApp()
            self.apps[nid] = app
            replica = ReplicaCore(nid, self.rings[nid], handle,
                                  self.node_ids, f, app, config)
            self.replicas[nid] = replica
            self.net.bind(nid, replica)
        for cid in self.client_ids:
            handle = self.net.add_node(cid, self.rings[cid])
            client = ClientCore(cid, self.rings[cid], handle, self.node_ids, f,
                                timeout=client_timeout)
            self.clients[cid] = client
            self.net.bind(cid, client)

    def submit(self, client_id: str, op: OpTag, payload: bytes) -> OutcomeBox:
        box = OutcomeBox()
        self.clients[client_id].submit(op, payload, box)
        return box

    def run_until_done(self, boxes, max_time: float = 60.0) -> bool:
        return self.net.run_until(lambda: all(b.done for b in boxes),
                                  max_time=max_time, check_every=8)

    # -- invariants -----------------------------------------------------------

    def honest_ids(self):
        return [nid for nid in self.node_ids if nid not in self.faulty]

    def assert_execution_agreement(self) -> None:
        """No two honest replicas executed different digests at one sequence."""
        seen: dict[int, tuple[bytes, str]] = {}
        for nid in self.honest_ids():
            for seq, digest in self.replicas[nid].execution_trace:
                if seq in seen:
                    other_digest, other_node = seen[seq]
                    assert digest == other_digest, (
                        f"divergent execution at seq {seq}: {nid} ran "
                        f"{digest.hex()[:12]}, {other_node} ran "
                        f"{other_digest.hex()[:12]} (seed {self.seed})")
                else:
                    seen[seq] = (digest, nid)

    def assert_block_agreement(self) -> None:
        """Committed transactions sit at identical (block, position) everywhere."""
        positions: dict[tuple[int, int], tuple[bytes, str]] = {}
        heads: dict[int, tuple[bytes, str]] = {}
        for nid in self.honest_ids():
            for block in self.apps[nid].blocks:
                key_head = block.number
                if key_head in heads:
                    other_hash, other_node = heads[key_head]
                    assert block.hash == other_hash, (
                        f"block {block.number} differs between {nid} and "
                        f"{other_node} (seed {self.seed})")
                else:
                    heads[key_head] = (block.hash, nid)
                for position, tx in enumerate(block.transactions):
                    key = (block.number, position)
                    if key in positions:
                        other_tx, other_node = positions[key]
                        assert tx == other_tx, (
                            f"tx at {key} differs between {nid} and {other_node}")
                    else:
                        positions[key] = (tx, nid)

    def assert_all_invariants(self) -> None:
        self.assert_execution_agreement()
        self.assert_block_agreement()


def build_fault_plan(kind: str, seed: int, node_id: str, rings) -> FaultPlan:
    """The four acceptance fault profiles, seeded deterministically."""
    from ..transport.envelope import MessageKind

    rng = random.Random(f"fault:{seed}:{node_id}")
    if kind == "CRASH":
        return FaultPlan(crash_at_step=rng.randint(30, 500))
    if kind == "DROP":
        return FaultPlan(drop_probability=0.3)
    if kind == "DELAY":
        return FaultPlan(delay_bounds=(0.05, 0.8))
    if kind == "EQUIVOCATE":
        mutator = ConsensusEquivocator(rings[node_id], rng)
        return FaultPlan(
            equivocate_kinds=frozenset({MessageKind.PRE_PREPARE,
                                        MessageKind.PREPARE,
                                        MessageKind.REPLY}),
            mutator=mutator)
    raise ValueError(f"unknown fault kind {kind}")
