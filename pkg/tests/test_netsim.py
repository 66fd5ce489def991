import time

import numpy as np
import pytest

from schmm_lmpc.errors import LinkError, TraceFormatError
from schmm_lmpc.netsim import (Channel, ConstantDelay, PacketFrame, TraceDelay, delay_steps, link_seed,
                               load_trace, save_trace)
from schmm_lmpc.schmm import DEFAULT_MASK, DelayTrace, sample_trace
from schmm_lmpc.topology import Topology, complete_graph, ring_graph

G = DEFAULT_MASK
PAIR = Topology.from_edges(2, [(0, 1)])


def frame(sender, k, h=2, n=2, m=1):
    return PacketFrame(sender, k, np.full(n, float(k)), np.zeros((h, m)))


def scripted(topology, taus):
    """Channel whose every link replays ``taus`` in order."""
    src = {}
    for j in range(topology.n_agents):
        for i in topology.neighbors(j):
            src[(j, i)] = TraceDelay(DelayTrace(taus), 0)
    return Channel(topology, src)


def test_frame_is_frozen():
    f = frame(0, 3, h=4)
    assert f.horizon == 4
    with pytest.raises(ValueError):
        f.state[0] = 1.0


@pytest.mark.parametrize("tau,steps", [(10.0, 1), (55.0, 6), (0.5, 1), (20.0, 2), (20.0001, 3)])
def test_delay_steps(tau, steps):
    assert delay_steps(tau, 10.0) == steps


def test_send_schedules_and_drops():
    ch = scripted(PAIR, [10.0, 55.0, G])
    r1 = ch.send(frame(0, 0), 1)
    r2 = ch.send(frame(0, 1), 1)
    r3 = ch.send(frame(0, 2), 1)
    assert (r1.deliver_step, r2.deliver_step) == (1, 7)
    assert r3.dropped and ch.dropped[(0, 1)] == 1
    with pytest.raises(LinkError):
        Channel.constant(ring_graph(4), 10.0).send(frame(0, 0), 2)


def test_deliver_order_and_overtaking():
    ch = scripted(Topology.from_edges(3, [(0, 2), (1, 2)]), [30.0, 10.0])
    ch.send(frame(1, 0), 2)     # 30 ms -> step 3
    ch.send(frame(0, 0), 2)     # 30 ms -> step 3
    ch.send(frame(0, 2), 2)     # 10 ms -> step 3, overtakes nothing but shares the slot
    ch.send(frame(1, 1), 2)     # 10 ms -> step 2, overtakes the step-0 frame of agent 1
    assert ch.deliver(1, 2) == []
    assert [(f.sender, f.send_step) for f in ch.deliver(2, 2)] == [(1, 1)]
    assert [(f.sender, f.send_step) for f in ch.deliver(3, 2)] == [(0, 0), (1, 0), (0, 2)]
    assert ch.in_flight() == 0


def test_zero_delay_arrives_next_step():
    ch = Channel.constant(complete_graph(3), 0.0001)
    for k in range(5):
        ch.broadcast(frame(0, k))
        got = ch.deliver(k + 1, 1)
        assert [f.send_step for f in got] == [k]


def test_conservation_and_determinism(ref_model):
    g = ring_graph(6, [(0, 3)])

    def run(seed):
        ch = Channel.from_model(g, ref_model, seed)
        log = []
        for k in range(300):
            for i in range(6):
                log += [(k, i, f.sender, f.send_step) for f in ch.deliver(k, i)]
            for j in range(6):
                ch.broadcast(frame(j, k))
            for link, (s, d, r) in ch.counters().items():
                assert s == d + r + ch.in_flight(link)
        return log

    a, b = run(5), run(5)
    assert a == b and a != run(6)


def test_link_seeds_differ():
    a = np.random.default_rng(link_seed(1, 0, 1)).random()
    b = np.random.default_rng(link_seed(1, 1, 0)).random()
    assert a != b


def test_trace_replay_is_cyclic():
    src = TraceDelay(DelayTrace([1.0, 2.0, 3.0]), offset=2)
    assert [src.draw() for _ in range(4)] == [3.0, 1.0, 2.0, 3.0]
    assert ConstantDelay(7.0).draw() == 7.0


def test_trace_file_parse(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("# header\n46.0\n\n100000\n58.2\n")
    t = load_trace(p)
    assert len(t) == 3 and t.dropouts.sum() == 1


@pytest.mark.parametrize("bad", ["forty", "-3", "0", "200000"])
def test_trace_file_errors_carry_line_number(tmp_path, bad):
    p = tmp_path / "t.txt"
    p.write_text(f"46.0\n{bad}\n")
    with pytest.raises(TraceFormatError) as exc:
        load_trace(p)
    assert exc.value.lineno == 2


def test_trace_round_trip_and_speed(tmp_path, ref_model):
    trace = sample_trace(ref_model, 10_000, 3)
    p = tmp_path / "t.txt"
    save_trace(trace, p, header="test")
    assert "100000\n" in p.read_text()
    t0 = time.perf_counter()
    back = load_trace(p)
    assert time.perf_counter() - t0 < 1.0
    assert np.array_equal(back.samples, trace.samples)
