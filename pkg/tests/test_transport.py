import io

import pytest

from bftflow import crypto
from bftflow.transport import envelope
from bftflow.transport.envelope import MessageKind
from bftflow.transport.peers import PeerDescriptor, PeerRegistry
from bftflow.transport.sim import FaultPlan, SimNetwork


def rings(*ids):
    return crypto.build_rings("hmac-sha256", list(ids), seed=b"transport-test")


def test_envelope_roundtrip_and_verify():
    r = rings("n0", "n1")
    env = envelope.make_envelope(r["n0"], MessageKind.PREPARE, b"body")
    decoded = envelope.envelope_from_bytes(env.to_bytes())
    assert decoded == env
    assert envelope.verify_envelope(r["n1"], decoded)


def test_tampered_envelope_fails_verification():
    r = rings("n0", "n1")
    env = envelope.make_envelope(r["n0"], MessageKind.PREPARE, b"body")
    forged = envelope.SignedEnvelope(env.sender, env.kind, b"other", env.signature)
    assert not envelope.verify_envelope(r["n1"], forged)
    wrong_kind = envelope.SignedEnvelope(env.sender, MessageKind.COMMIT, env.body,
                                         env.signature)
    assert not envelope.verify_envelope(r["n1"], wrong_kind)


def test_frame_roundtrip():
    r = rings("n0")
    env = envelope.make_envelope(r["n0"], MessageKind.BLOCK_SEND, b"x" * 100)
    frame = envelope.write_frame(env)
    stream = io.BytesIO(frame)

    def read_exactly(n):
        data = stream.read(n)
        assert len(data) == n
        return data

    assert envelope.read_frame(read_exactly) == env


def test_peer_registry_uniqueness():
    a = PeerDescriptor("a", "h:1", b"ka")
    dup_id = PeerDescriptor("a", "h:2", b"kb")
    dup_addr = PeerDescriptor("b", "h:1", b"kb")
    with pytest.raises(ValueError):
        PeerRegistry([a, dup_id])
    with pytest.raises(ValueError):
        PeerRegistry([a, dup_addr])
    reg = PeerRegistry([a, PeerDescriptor("b", "h:2", b"kb")])
    assert reg.ids() == ["a", "b"]
    assert "a" in reg and "zzz" not in reg


class Recorder:
    def __init__(self):
        self.envelopes = []
        self.timers = []

    def on_envelope(self, env):
        self.envelopes.append((env.sender, env.kind, env.body))

    def on_timer(self, tag):
        self.timers.append(tag)


def build_net(seed=1, fault=None, fault_node="n0", record=False):
    r = rings("n0", "n1", "n2")
    net = SimNetwork(seed=seed, record_transcript=record)
    handles, actors = {}, {}
    for nid in ["n0", "n1", "n2"]:
        handles[nid] = net.add_node(nid, r[nid],
                                    fault=fault if nid == fault_node else None)
        actors[nid] = Recorder()
        net.bind(nid, actors[nid])
    return net, handles, actors


def test_sim_delivers_and_orders_per_link():
    net, handles, actors = build_net()
    for i in range(20):
        handles["n0"].send("n1", MessageKind.PREPARE, bytes([i]))
    net.drain()
    received = [body[0] for (_, _, body) in actors["n1"].envelopes]
    assert received == list(range(20))


def test_sim_identical_runs_for_same_seed():
    transcripts = []
    for _ in range(2):
        net, handles, actors = build_net(seed=42, record=True)
        for i in range(10):
            handles["n0"].broadcast(["n1", "n2"], MessageKind.COMMIT, bytes([i]))
            handles["n2"].send("n0", MessageKind.PREPARE, bytes([i]))
        net.drain()
        transcripts.append(net.transcript)
    assert transcripts[0] == transcripts[1]


def test_sim_timers_fire_and_cancel():
    net, handles, actors = build_net()
    handles["n1"].set_timer(0.5, "will-fire")
    tid = handles["n1"].set_timer(0.2, "cancelled")
    handles["n1"].cancel_timer(tid)
    net.drain()
    assert actors["n1"].timers == ["will-fire"]
    assert net.now >= 0.5


def test_sim_crash_at_step_stops_node():
    fault = FaultPlan(crash_at_step=1)
    net, handles, actors = build_net(fault=fault, fault_node="n2")
    for i in range(10):
        handles["n0"].send("n2", MessageKind.PREPARE, bytes([i]))
    net.drain()
    assert len(actors["n2"].envelopes) <= 1


def test_sim_drop_probability_thins_traffic():
    fault = FaultPlan(drop_probability=0.5)
    net, handles, actors = build_net(fault=fault, fault_node="n0", seed=7)
    for i in range(200):
        handles["n0"].send("n1", MessageKind.PREPARE, bytes([i % 256]))
    net.drain()
    got = len(actors["n1"].envelopes)
    assert 40 < got < 160


def test_sim_partition_blocks_cross_group_traffic():
    fault = FaultPlan(partitions=[(0.0, 10.0, frozenset({"n0"}))])
    net, handles, actors = build_net(fault=fault, fault_node="n0")
    handles["n0"].send("n1", MessageKind.PREPARE, b"a")
    handles["n1"].send("n0", MessageKind.PREPARE, b"b")
    net.drain()
    assert actors["n1"].envelopes == []
    # traffic not involving the partitioned node flows
    handles["n1"].send("n2", MessageKind.PREPARE, b"c")
    net.drain()
    assert len(actors["n2"].envelopes) == 1


def test_sim_drops_bad_signatures():
    net, handles, actors = build_net()
    # n0 signs as itself but claims to be n1
    real = envelope.make_envelope(handles["n0"].keyring, MessageKind.PREPARE, b"x")
    forged = envelope.SignedEnvelope("n1", real.kind, real.body, real.signature)
    net._submit("n0", "n2", forged)
    net.drain()
    assert actors["n2"].envelopes == []
    assert net.dropped_bad_signature == 1


def test_fault_plan_validation():
    with pytest.raises(ValueError):
        FaultPlan(drop_probability=1.5)
    with pytest.raises(ValueError):
        FaultPlan(delay_bounds=(2.0, 1.0))
    with pytest.raises(ValueError):
        FaultPlan(equivocate_kinds=frozenset({MessageKind.PRE_PREPARE}))
    with pytest.raises(ValueError):
        FaultPlan(partitions=[(1.0, 0.5, frozenset())])
