import random

import numpy as np
import pytest

from localthresh import protocol as proto
from localthresh.fastsim import FastWorld, make_fast_world
from localthresh.protocol import Params
from localthresh.regions import SourceSet
from localthresh.simulator import (
    ConfigError,
    SimConfig,
    World,
    build_termination_state,
    make_world,
    run,
)
from localthresh.topology import Topology, gen_grid, spanning_tree
from localthresh.wvector import wv_fold

from oracles import def2_violations, random_cyclic_graph, random_tree

SRC2 = SourceSet([(0.0, 0.0), (1.0, 0.0)])


def test_single_peer_is_quiescent():
    w = World(Topology(1, (frozenset(),)), [[0.2, 0.0]], Params(SRC2, 0.001))
    w.initialize()
    assert w.quiescent() and w.series_msgs == [0]
    assert w.correct_fraction() == 1.0


def test_two_peer_micro_run():
    topo = Topology.from_edges(2, [(0, 1)])
    w = World(topo, [[0.0, 0.0], [0.9, 0.0]], Params(SRC2, 0.001), trace=True)
    w.initialize()
    assert w.series_msgs == [2]
    while not w.quiescent():
        w.step()
    # the 0.45 mean belongs to source 0
    assert w.outputs == [0, 0]
    assert w.trace[0].startswith("0 send 0 1 1")


def test_messages_arrive_next_cycle():
    w, _ = make_world(SimConfig(n=16, seed=2), trace=True)
    w.initialize()
    w.step()
    recv = [line for line in w.trace if " recv " in line]
    assert recv and all(line.startswith("1 ") for line in recv)


def test_static_run_converges():
    rec, w = run(SimConfig(n=1024, seed=1))
    assert rec.quiesced and rec.correct_fraction[-1] == 1.0
    assert rec.cycles_to_100 is not None and rec.cycles_to_95 <= rec.cycles_to_100
    assert w.correct_fraction() == 1.0


def test_static_python_run_conserves_and_stops():
    rec, w = run(SimConfig(n=100, topology="ba", seed=3), engine="python")
    assert rec.quiesced and w.all_stopped()
    total, inputs = wv_fold(w.states()), wv_fold(w.live_inputs())
    assert total.weight == pytest.approx(inputs.weight, rel=1e-9)
    assert np.allclose(total.moment, inputs.moment, rtol=1e-9, atol=1e-9)


def test_total_drop_stalls_everything():
    rec, w = run(SimConfig(n=64, drop_rate=0.999999, max_cycles=30, seed=0), trace=True)
    assert not any(" recv " in line for line in w.trace)


def test_drop_rate_validation():
    with pytest.raises(ConfigError):
        SimConfig(drop_rate=1.0)
    with pytest.raises(ConfigError):
        SimConfig(noise_ppmc=-1)
    with pytest.raises(ConfigError):
        SimConfig(topology="torus")


def test_disconnected_topology_rejected():
    topo = Topology.from_edges(4, [(0, 1), (2, 3)])
    with pytest.raises(ConfigError):
        World(topo, np.zeros((4, 2)), Params(SRC2, 0.001))
    with pytest.raises(ConfigError):
        FastWorld(topo, np.zeros((4, 2)), Params(SRC2, 0.001))


def test_trace_is_deterministic():
    cfg = SimConfig(n=64, drop_rate=0.1, noise_ppmc=20_000, max_cycles=60, seed=5)
    _, a = run(cfg, trace=True)
    _, b = run(cfg, trace=True)
    _, c = run(cfg.with_(seed=6), trace=True)
    assert a.trace == b.trace and a.trace != c.trace


def test_engine_selection():
    with pytest.raises(ConfigError):
        run(SimConfig(n=16), trace=True, engine="fast")
    with pytest.raises(ConfigError):
        run(SimConfig(n=16), engine="gpu")


def test_rate_limit_bounds_normalized_messaging():
    for ell in (1, 3):
        rec, w = run(SimConfig(n=256, topology="ba", noise_ppmc=50_000, max_cycles=200, ell=ell))
        # each directed link carries at most one message per ell-cycle window
        window = np.convolve(w.series_msgs, np.ones(ell, dtype=int), mode="valid")
        assert window.max() <= 2 * w.n_edges
        assert rec.normalized_messaging <= 2.0 / ell


def test_churn_removes_peers_and_edges():
    rec, w = run(SimConfig(n=400, churn_ppmc=2000, noise_ppmc=2000, max_cycles=300, seed=1))
    assert w.n_live < 400 and w.live_edges < w.n_edges
    assert w.series_live[-1] == w.n_live


def _compare(cfg, cycles):
    w, _ = make_world(cfg)
    f = make_fast_world(cfg)
    w.initialize()
    f.initialize()
    for _ in range(cycles):
        if not cfg.dynamic and w.quiescent():
            assert f.quiescent()
            break
        w.step()
        f.step()
    assert w.series_frac == f.series_frac
    assert w.series_msgs == f.series_msgs
    assert w.series_edges == f.series_edges
    for i, p in enumerate(w.peers):
        q = f.peer_state(i)
        if p is None:
            assert q is None
            continue
        assert set(p.ledgers) == set(q.ledgers)
        for j, led in p.ledgers.items():
            other = q.ledgers[j]
            assert led.last_sent == other.last_sent and led.last_recv == other.last_recv
            assert led.last_seq_recv == other.last_seq_recv
        assert (p.seq, p.timer, p.last_send_time) == (q.seq, q.timer, q.last_send_time)


@pytest.mark.parametrize(
    "kw",
    [
        {},
        {"policy": "uniform"},
        {"drop_rate": 0.1},
        {"topology": "ba"},
        {"topology": "chord", "ell": 3},
        {"noise_ppmc": 20_000},
        {"churn_ppmc": 5000, "noise_ppmc": 5000},
        {"churn_ppmc": 3000, "drop_rate": 0.05, "policy": "uniform", "topology": "ba"},
    ],
)
def test_fast_engine_matches_reference(kw):
    _compare(SimConfig(n=144, max_cycles=300, bias=0.2).with_(**kw), 300)


def test_termination_state_example():
    # path 0 - 1 - 2 with inputs 0, 1, 2 on a line
    topo = Topology.from_edges(3, [(0, 1), (1, 2)])
    sources = SourceSet([(0.0, 0.0), (2.0, 0.0)])
    peers = build_termination_state(topo, [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    for p in peers:
        assert proto.check_stopping(p, sources) == set()
        assert proto.state(p).value == pytest.approx([1.0, 0.0])
        for j in p.ledgers:
            assert proto.agreement(p, j).value == pytest.approx([1.0, 0.0])


def test_termination_state_with_extra_edges():
    topo = random_cyclic_graph(8, random.Random(3), extra=0.5)
    x = np.random.default_rng(3).normal(size=(8, 2))
    peers = build_termination_state(topo, x.tolist(), spanning_tree(topo, 0))
    src = SourceSet([(0.0, 0.0), (1.0, 1.0), (-1.0, 0.5)])
    assert all(proto.check_stopping(p, src) == set() for p in peers)
    assert all(not def2_violations(p, src.sources) for p in peers)
    total = wv_fold([proto.state(p) for p in peers])
    assert total.value == pytest.approx(x.mean(axis=0))


def test_termination_state_needs_tree():
    with pytest.raises(Exception):
        build_termination_state(gen_grid(2, 2), np.zeros((4, 2)).tolist())
    tree = random_tree(6, random.Random(0))
    assert len(build_termination_state(tree, np.ones((6, 2)).tolist())) == 6
