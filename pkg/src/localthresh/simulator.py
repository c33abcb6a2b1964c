"""Deterministic cycle-driven simulation of LSS over a topology.

One cycle runs, in order: churn departures, input changes, delivery of the
messages sent during the previous cycle (random order, independent drops),
expired timers. Messages produced in a cycle are delivered in the next one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from . import protocol as proto
from .data import DataModel, ResampleStream, gen_inputs
from .metrics import RunRecord, measure
from .protocol import Message, NeighborLedger, Params, PeerState
from .regions import Classifier
from .topology import (
    Topology,
    TopologyError,
    avg_degree,
    gen_ba,
    gen_chord,
    gen_grid,
    grid_shape,
    is_connected,
    spanning_tree,
)
from .wvector import WeightedVector, _raw

log = logging.getLogger(__name__)

TOPOLOGIES = ("ba", "chord", "grid")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    topology: str = "grid"
    n: int = 10_000
    ba_m: int = 2
    grid_rows: Optional[int] = None
    grid_cols: Optional[int] = None
    drop_rate: float = 0.0
    k: int = 3
    d: int = 2
    bias: float = 0.1
    std: float = 1.0
    noise_ppmc: float = 0.0
    churn_ppmc: float = 0.0
    beta: float = 0.001
    ell: int = 1
    max_cycles: int = 10_000
    seed: int = 0
    policy: str = proto.SELECTIVE
    sources: Optional[tuple[tuple[float, ...], ...]] = None
    warmup_fraction: float = 0.1

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"unknown topology {self.topology!r}")
        if not 0 <= self.drop_rate < 1:
            raise ConfigError("drop rate must be in [0, 1)")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.ell < 1:
            raise ConfigError("ell must be >= 1")
        if self.noise_ppmc < 0 or self.churn_ppmc < 0:
            raise ConfigError("event rates must be non-negative")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.policy not in proto.POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}")

    @property
    def dynamic(self) -> bool:
        return self.noise_ppmc > 0 or self.churn_ppmc > 0

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def build_topology(self) -> Topology:
        if self.n == 1:
            return Topology(1, (frozenset(),))
        if self.topology == "ba":
            return gen_ba(self.n, self.ba_m, self.seed)
        if self.topology == "chord":
            return gen_chord(self.n, self.seed)
        rows, cols = self.grid_rows, self.grid_cols
        if rows is None and cols is None:
            rows, cols = grid_shape(self.n)
        elif rows is None:
            rows = self.n // cols
        elif cols is None:
            cols = self.n // rows
        if rows * cols != self.n:
            raise ConfigError(f"grid {rows}x{cols} does not hold n={self.n} peers")
        return gen_grid(rows, cols)

    def build_data(self) -> DataModel:
        return DataModel.random(self.k, self.d, self.bias, self.std, self.seed, self.sources)


class World:
    """Mutable state of one simulation run."""

    def __init__(
        self,
        topology: Topology,
        inputs: np.ndarray,
        params: Params,
        seed: int = 0,
        drop_rate: float = 0.0,
        noise_ppmc: float = 0.0,
        churn_ppmc: float = 0.0,
        data: Optional[DataModel] = None,
        trace: bool = False,
    ):
        if not is_connected(topology):
            raise ConfigError("topology is disconnected")
        if noise_ppmc > 0 and data is None:
            raise ConfigError("noise needs a data model to resample from")
        self.topology = topology
        self.params = params
        self.classifier: Classifier = params.classifier
        self.inputs = np.array(inputs, dtype=float)
        n = topology.n
        self.alive = np.ones(n, dtype=bool)
        self.n_live = n
        self.n_edges = topology.n_edges
        self.live_edges = self.n_edges
        self.drop_rate = drop_rate
        self.p_noise = noise_ppmc / 1e6
        self.p_churn = churn_ppmc / 1e6
        self.rng = np.random.default_rng([seed, 4])
        self.resampler = ResampleStream(data, seed) if data is not None else None
        self.cycle = 0
        self.peers: list[Optional[PeerState]] = [
            PeerState.create(i, self.inputs[i].tolist(), topology.adjacency[i], params.ell)
            for i in range(n)
        ]
        self.inflight: list[tuple[int, int, Message]] = []
        self.timers: dict[int, set[int]] = {}
        self.sent_this_cycle = 0
        self.trace: Optional[list[str]] = [] if trace else None
        self.outputs: list[Optional[int]] = [proto.output(p, self.classifier) for p in self.peers]
        self.counts: dict[Optional[int], int] = {}
        for r in self.outputs:
            self.counts[r] = self.counts.get(r, 0) + 1
        self.truth = self._ground_truth()
        self.series_frac: list[float] = []
        self.series_msgs: list[int] = []
        self.series_live: list[int] = []
        self.series_edges: list[int] = []

    # -- bookkeeping ------------------------------------------------------

    def _ground_truth(self) -> int:
        return self.classifier.classify(self.inputs[self.alive].mean(axis=0).tolist())

    def _set_output(self, i: int) -> None:
        new = proto.output(self.peers[i], self.classifier)
        old = self.outputs[i]
        if new != old:
            self.counts[old] -= 1
            self.counts[new] = self.counts.get(new, 0) + 1
            self.outputs[i] = new

    def _emit(self, i: int, out: list[tuple[int, Message]]) -> None:
        p = self.peers[i]
        if p.timer is not None:
            self.timers.setdefault(p.timer, set()).add(i)
        if not out:
            return
        self.sent_this_cycle += len(out)
        for j, m in out:
            self.inflight.append((i, j, m))
            if self.trace is not None:
                self._log("send", i, j, m)

    def _log(self, kind: str, i: int, j: int, m: Message) -> None:
        self.trace.append(f"{self.cycle} {kind} {i} {j} {m.seq} {m.payload.weight:.9g}")

    def correct_fraction(self) -> float:
        return self.counts.get(self.truth, 0) / self.n_live

    def _record(self) -> None:
        self.series_frac.append(self.correct_fraction())
        self.series_msgs.append(self.sent_this_cycle)
        self.series_live.append(self.n_live)
        self.series_edges.append(self.live_edges)
        self.sent_this_cycle = 0

    # -- lifecycle --------------------------------------------------------

    def initialize(self) -> None:
        """Cycle 0: every peer runs its change handler once."""
        params = self.params
        for i, p in enumerate(self.peers):
            out = proto.on_initialize(p, params, 0)
            self._set_output(i)
            self._emit(i, out)
        self._record()

    def quiescent(self) -> bool:
        return not self.inflight and not self.timers

    def remove_peer(self, i: int) -> None:
        p = self.peers[i]
        self.peers[i] = None
        self.alive[i] = False
        self.n_live -= 1
        self.counts[self.outputs[i]] -= 1
        self.outputs[i] = None
        if p.timer is not None:
            bucket = self.timers.get(p.timer)
            if bucket is not None:
                bucket.discard(i)
                if not bucket:
                    del self.timers[p.timer]
        self.live_edges -= len(p.ledgers)
        if self.trace is not None:
            self.trace.append(f"{self.cycle} leave {i} - 0 0")
        for j in p.ledgers:
            q = self.peers[j]
            if q is None:
                continue
            out = proto.on_neighbor_change(q, self.params, self.cycle, removed=(i,))
            self._set_output(j)
            self._emit(j, out)

    def change_input(self, i: int, x: np.ndarray) -> None:
        self.inputs[i] = x
        out = proto.on_input_change(self.peers[i], x.tolist(), self.params, self.cycle)
        self._set_output(i)
        self._emit(i, out)

    def _draw_subset(self, p: float) -> list[int]:
        if p <= 0:
            return []
        count = int(self.rng.binomial(self.n_live, p))
        if count == 0:
            return []
        live = np.flatnonzero(self.alive)
        picks = self.rng.choice(len(live), size=count, replace=False)
        return sorted(int(live[t]) for t in picks)

    def step(self) -> None:
        self.cycle += 1
        now = self.cycle
        params = self.params
        peers = self.peers
        truth_dirty = False
        # only messages from earlier cycles are delivered now
        batch = self.inflight
        self.inflight = []

        for i in self._draw_subset(self.p_churn):
            if self.n_live > 1:
                self.remove_peer(i)
                truth_dirty = True

        for i in self._draw_subset(self.p_noise):
            if peers[i] is not None:
                self.change_input(i, self.resampler.next())
                truth_dirty = True

        if truth_dirty:
            self.truth = self._ground_truth()

        if batch:
            order = self.rng.permutation(len(batch))
            dropped = self.rng.random(len(batch)) < self.drop_rate if self.drop_rate > 0 else None
            for t in order:
                i, j, m = batch[t]
                q = peers[j]
                if q is None or (dropped is not None and dropped[t]):
                    if self.trace is not None:
                        self._log("drop", i, j, m)
                    continue
                if self.trace is not None:
                    self._log("recv", i, j, m)
                out = proto.on_message(q, i, m, params, now)
                self._set_output(j)
                self._emit(j, out)

        due = self.timers.pop(now, None)
        if due:
            for i in sorted(due):
                p = peers[i]
                if p is None or p.timer != now:
                    continue
                out = proto.on_timer(p, params, now)
                self._set_output(i)
                self._emit(i, out)

        self._record()

    def states(self) -> list[WeightedVector]:
        return [proto.state(p) for p in self.peers if p is not None]

    def live_inputs(self) -> list[WeightedVector]:
        return [p.input for p in self.peers if p is not None]

    def all_stopped(self) -> bool:
        return all(not proto.violations(p, self.classifier) for p in self.peers if p is not None)


def make_world(config: SimConfig, trace: bool = False) -> tuple[World, DataModel]:
    topo = config.build_topology()
    if not is_connected(topo):
        raise ConfigError("generated topology is disconnected")
    data = config.build_data()
    inputs = gen_inputs(data, topo.n)
    params = Params(data.sources, config.beta, config.ell, config.policy)
    world = World(
        topo,
        inputs,
        params,
        seed=config.seed,
        drop_rate=config.drop_rate,
        noise_ppmc=config.noise_ppmc,
        churn_ppmc=config.churn_ppmc,
        data=data,
        trace=trace,
    )
    return world, data


ENGINES = ("auto", "python", "fast")


def run(config: SimConfig, trace: bool = False, engine: str = "auto") -> tuple[RunRecord, World]:
    """Simulate one configuration.

    Static runs stop at quiescence (or ``max_cycles``); dynamic runs always
    last ``max_cycles`` cycles. ``engine`` picks the reference implementation
    (``"python"``) or the compiled one (``"fast"``); both give identical
    results. ``"auto"`` uses the compiled engine unless a trace is requested.
    """
    if engine not in ENGINES:
        raise ConfigError(f"unknown engine {engine!r}")
    if engine == "fast" and trace:
        raise ConfigError("the compiled engine does not record traces")
    if engine == "fast" or (engine == "auto" and not trace):
        from .fastsim import make_fast_world

        world = make_fast_world(config)
    else:
        world, _ = make_world(config, trace)
    world.initialize()
    dynamic = config.dynamic
    while world.cycle < config.max_cycles:
        if not dynamic and world.quiescent():
            break
        world.step()
    warmup = int(config.warmup_fraction * config.max_cycles) if dynamic else 0
    rec = measure(
        world.series_frac,
        world.series_msgs,
        world.series_edges,
        world.n_edges,
        warmup=warmup,
        live_peers=world.series_live,
        realized_avg_degree=avg_degree(world.topology),
        quiesced=world.quiescent(),
    )
    return rec, world


def build_termination_state(
    topology: Topology,
    inputs: Sequence[Sequence[float]],
    parent: Optional[dict[int, Optional[int]]] = None,
) -> list[PeerState]:
    """Ledgers of a global stopping state built along a spanning tree.

    With ``u`` the global mean at weight 1, a node ``i`` with parent ``j``
    sends ``Y_i/2 - u/4`` and receives ``3u/4 - Y_i/2``, where ``Y_i`` is
    ``i``'s state without the parent edge. Every agreement then equals
    ``u/2`` and every state ``u``. Non-tree edges keep zero ledgers.
    ``parent`` is required unless the topology is itself a tree.
    """
    n = topology.n
    if parent is None:
        if topology.n_edges != n - 1:
            raise TopologyError("non-tree topology needs an explicit spanning tree")
        parent = spanning_tree(topology, 0)
    if len(parent) != n:
        raise TopologyError("spanning tree does not cover every node")
    for c, par in parent.items():
        if par is not None and par not in topology.adjacency[c]:
            raise TopologyError(f"tree edge ({c}, {par}) is not in the topology")
    peers = [PeerState.create(i, inputs[i], topology.adjacency[i]) for i in range(n)]
    d = peers[0].dim
    total = peers[0].input
    for p in peers[1:]:
        total = total + p.input
    u = (1.0 / total.weight) * total

    children: dict[int, list[int]] = {i: [] for i in range(n)}
    root = None
    for c, par in parent.items():
        if par is None:
            root = c
        else:
            children[par].append(c)
    order = []
    stack = [root]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(children[v])

    y: dict[int, WeightedVector] = {}
    for v in reversed(order):
        acc = peers[v].input
        for c in children[v]:
            acc = acc + _diff(y[c], u)
        y[v] = acc
        par = parent[v]
        if par is None:
            continue
        up = _diff(0.5 * y[v], 0.25 * u)
        down = _diff(0.75 * u, 0.5 * y[v])
        peers[v].ledgers[par] = NeighborLedger(up, down, 0)
        peers[par].ledgers[v] = NeighborLedger(down, up, 0)
    return peers


def _diff(a: WeightedVector, b: WeightedVector) -> WeightedVector:
    return _raw(tuple(x - y for x, y in zip(a.moment, b.moment)), a.weight - b.weight)
