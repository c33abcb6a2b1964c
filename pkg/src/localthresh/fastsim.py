"""Compiled simulation engine.

Array-based re-implementation of :class:`localthresh.simulator.World` for long
runs. It performs the same floating-point operations in the same order as the
reference engine and consumes random draws from the same numpy stream, so both
produce identical traces (checked by the test-suite).

Ledgers live on directed edges of a CSR adjacency: edge ``e`` runs from its
owner to ``nbr[e]`` and ``rev[e]`` is the opposite direction. Messages are
double-buffered: ``buf_*[phase]`` holds what is delivered this cycle and
``buf_*[1 - phase]`` collects what is sent.
"""

from __future__ import annotations

from collections import namedtuple
from typing import Optional

import numpy as np
from numba import njit

from .data import DataModel, ResampleStream, gen_inputs
from .protocol import UNIFORM, NeighborLedger, Params, PeerState
from .simulator import ConfigError, SimConfig
from .topology import Topology, is_connected
from .wvector import EPS_W, WeightedVector

NO_TIMER = -(2**62)
# columns of ``Net.cnt``
N_LIVE, LIVE_EDGES, SENT, N_DIRTY = 0, 1, 2, 3
# middle axis of ``lm``/``lw`` (ledgers) and ``km``/``kw`` (correction scratch)
S, R = 0, 1
AGR, KEEP = 0, 1
# columns of ``pi`` (per-peer integers) and ``bi`` (buffered message header)
SEQ, LAST, TIMER, OUT = 0, 1, 2, 3
EDGE, MSEQ = 0, 1
# rows of ``vec``
SM, SM2, NM, TMP = 0, 1, 2, 3

# Kernels take plain arrays: numba copies a struct argument on every call,
# which costs far more than the work done per message. The per-event helpers
# are inlined into the kernels; this makes the first compile slow (about a
# minute, cached afterwards) but the hot loop about a quarter faster.
Net = namedtuple(
    "Net",
    [
        "indptr", "nbr", "rev", "ealive", "alive", "inp", "src",
        "lm", "lw", "lseq", "pi", "counts", "cnt",
        "bi", "bm", "bw", "bn",
        "bad", "grow", "km", "kw", "vec", "dirty", "dlist",
        "beta", "ell", "uniform",
    ],
)


@njit(cache=True, inline="always")
def _classify(src, x):
    best = 0
    best_d = np.inf
    k, d = src.shape
    for c in range(k):
        acc = 0.0
        for t in range(d):
            u = src[c, t] - x[t]
            acc += u * u
        if acc < best_d:
            best = c
            best_d = acc
    return best


@njit(cache=True, inline="always")
def _state(i, indptr, ealive, inp, lm, lw, out):
    d = out.shape[0]
    for t in range(d):
        out[t] = inp[i, t]
    w = 1.0
    for e in range(indptr[i], indptr[i + 1]):
        if not ealive[e]:
            continue
        for t in range(d):
            out[t] = out[t] + lm[e, R, t] - lm[e, S, t]
        w += lw[e, R] - lw[e, S]
    return w


@njit(cache=True, inline="always")
def _region(src, tmp, m, w):
    if -EPS_W <= w <= EPS_W:
        return -1
    for t in range(m.shape[0]):
        tmp[t] = m[t] / w
    return _classify(src, tmp)


@njit(cache=True, inline="always")
def _scan(i, strict, skip, mark, sm, tmp, indptr, ealive, inp, src, lm, lw):
    """Set ``mark[e]`` for every violating edge of ``i`` not in ``skip``."""
    d = sm.shape[0]
    sw = _state(i, indptr, ealive, inp, lm, lw, sm)
    if -EPS_W <= sw <= EPS_W:
        return 0
    r = _region(src, tmp, sm, sw)
    count = 0
    for e in range(indptr[i], indptr[i + 1]):
        if not ealive[e] or skip[e]:
            continue
        aw = lw[e, S] + lw[e, R]
        if -EPS_W <= aw <= EPS_W:
            if strict:
                mark[e] = True
                count += 1
            continue
        for t in range(d):
            tmp[t] = (lm[e, S, t] + lm[e, R, t]) / aw
        if _classify(src, tmp) != r:
            mark[e] = True
            count += 1
            continue
        rw = sw - lw[e, S] - lw[e, R]
        if -EPS_W <= rw <= EPS_W:
            continue
        for t in range(d):
            tmp[t] = (sm[t] - lm[e, S, t] - lm[e, R, t]) / rw
        if _classify(src, tmp) != r:
            mark[e] = True
            count += 1
    return count


@njit(cache=True, inline="always")
def _correct_uniform(i, beta, indptr, ealive, inp, lm, lw, bad, vec):
    d = vec.shape[1]
    lo, hi = indptr[i], indptr[i + 1]
    sw = _state(i, indptr, ealive, inp, lm, lw, vec[SM])
    nm = vec[NM]
    for t in range(d):
        nm[t] = inp[i, t]
    nw = 1.0
    deg = 0
    for e in range(lo, hi):
        if not ealive[e]:
            continue
        deg += 1
        for t in range(d):
            nm[t] += 2.0 * lm[e, R, t]
        nw += 2.0 * lw[e, R]
    if abs(nw) <= EPS_W:
        return False
    share = (sw - beta) / (2 * deg)
    for e in range(lo, hi):
        if not ealive[e]:
            continue
        w = lw[e, S] + lw[e, R] + share
        c = w / nw
        for t in range(d):
            lm[e, S, t] = c * nm[t] - lm[e, R, t]
        lw[e, S] = c * nw - lw[e, R]
        bad[e] = True
    return True


@njit(cache=True, inline="always")
def _correct_selective(i, beta, indptr, ealive, inp, src, lm, lw, bad, grow, km, kw, vec):
    d = vec.shape[1]
    lo, hi = indptr[i], indptr[i + 1]
    sm, nm = vec[SM], vec[NM]
    old_w = _state(i, indptr, ealive, inp, lm, lw, sm)
    for e in range(lo, hi):
        if not ealive[e]:
            continue
        for t in range(d):
            km[e, AGR, t] = lm[e, S, t] + lm[e, R, t]
            km[e, KEEP, t] = lm[e, S, t]
        kw[e, AGR] = lw[e, S] + lw[e, R]
        kw[e, KEEP] = lw[e, S]
    spare = old_w - beta
    while True:
        for t in range(d):
            nm[t] = sm[t]
        nw = old_w
        nbad = 0
        for e in range(lo, hi):
            if ealive[e] and bad[e]:
                for t in range(d):
                    nm[t] = nm[t] + km[e, AGR, t]
                nw = nw + kw[e, AGR]
                nbad += 1
        if -EPS_W <= nw <= EPS_W:
            for e in range(lo, hi):
                if ealive[e]:
                    for t in range(d):
                        lm[e, S, t] = km[e, KEEP, t]
                    lw[e, S] = kw[e, KEEP]
            return False
        share = spare / (2 * nbad)
        for e in range(lo, hi):
            if ealive[e] and bad[e]:
                c = (share + kw[e, AGR]) / nw
                for t in range(d):
                    lm[e, S, t] = c * nm[t] - lm[e, R, t]
                lw[e, S] = c * nw - lw[e, R]
        for e in range(lo, hi):
            grow[e] = False
        if _scan(i, True, bad, grow, vec[SM2], vec[TMP], indptr, ealive, inp, src, lm, lw) == 0:
            return True
        for e in range(lo, hi):
            if grow[e]:
                bad[e] = True


@njit(cache=True, inline="always")
def _on_change(i, now, nxt, indptr, ealive, inp, src, lm, lw, pi, cnt,
               bi, bm, bw, bn, bad, grow, km, kw, vec, beta, ell, uniform):
    if now - pi[i, LAST] < ell:
        pi[i, TIMER] = pi[i, LAST] + ell
        return
    lo, hi = indptr[i], indptr[i + 1]
    for e in range(lo, hi):
        bad[e] = False
        # ``grow`` doubles as an all-false skip mask here
        grow[e] = False
    if _scan(i, True, grow, bad, vec[SM], vec[TMP], indptr, ealive, inp, src, lm, lw) == 0:
        return
    if uniform:
        for e in range(lo, hi):
            bad[e] = False
        ok = _correct_uniform(i, beta, indptr, ealive, inp, lm, lw, bad, vec)
    else:
        ok = _correct_selective(i, beta, indptr, ealive, inp, src, lm, lw, bad, grow, km, kw, vec)
    if not ok:
        return
    pi[i, LAST] = now
    pi[i, SEQ] += 1
    s = pi[i, SEQ]
    d = vec.shape[1]
    for e in range(lo, hi):
        if ealive[e] and bad[e]:
            k = bn[nxt]
            bi[nxt, k, EDGE] = e
            bi[nxt, k, MSEQ] = s
            for t in range(d):
                bm[nxt, k, t] = lm[e, S, t]
            bw[nxt, k] = lw[e, S]
            bn[nxt] = k + 1
            cnt[SENT] += 1


@njit(cache=True, inline="always")
def _touch(i, cnt, dirty, dlist):
    if not dirty[i]:
        dirty[i] = True
        dlist[cnt[N_DIRTY]] = i
        cnt[N_DIRTY] += 1


@njit(cache=True)
def _flush_outputs(indptr, ealive, alive, inp, src, lm, lw, pi, counts, cnt, dirty, dlist, vec):
    """Refresh the output of every peer touched since the last flush.

    Outputs never feed back into the protocol, so evaluating them once per
    cycle gives the same per-cycle counts as evaluating after every event.
    """
    k = counts.shape[0] - 1
    for q in range(cnt[N_DIRTY]):
        i = dlist[q]
        dirty[i] = False
        if not alive[i]:
            continue
        w = _state(i, indptr, ealive, inp, lm, lw, vec[SM])
        new = _region(src, vec[TMP], vec[SM], w)
        old = pi[i, OUT]
        if new != old:
            counts[old if old >= 0 else k] -= 1
            counts[new if new >= 0 else k] += 1
            pi[i, OUT] = new
    cnt[N_DIRTY] = 0


@njit(cache=True)
def k_initialize(indptr, nbr, rev, ealive, alive, inp, src, lm, lw, lseq, pi, counts, cnt,
                 bi, bm, bw, bn, bad, grow, km, kw, vec, dirty, dlist, beta, ell, uniform):
    n = inp.shape[0]
    k = counts.shape[0] - 1
    for i in range(n):
        w = _state(i, indptr, ealive, inp, lm, lw, vec[SM])
        r = _region(src, vec[TMP], vec[SM], w)
        pi[i, OUT] = r
        counts[r if r >= 0 else k] += 1
    for i in range(n):
        _on_change(i, 0, 1, indptr, ealive, inp, src, lm, lw, pi, cnt,
                   bi, bm, bw, bn, bad, grow, km, kw, vec, beta, ell, uniform)
        _touch(i, cnt, dirty, dlist)
    _flush_outputs(indptr, ealive, alive, inp, src, lm, lw, pi, counts, cnt, dirty, dlist, vec)


@njit(cache=True)
def k_churn(indptr, nbr, rev, ealive, alive, inp, src, lm, lw, lseq, pi, counts, cnt,
            bi, bm, bw, bn, bad, grow, km, kw, vec, dirty, dlist, beta, ell, uniform, ids, now, nxt):
    k = counts.shape[0] - 1
    for i in ids:
        if cnt[N_LIVE] <= 1:
            continue
        alive[i] = False
        cnt[N_LIVE] -= 1
        old = pi[i, OUT]
        counts[old if old >= 0 else k] -= 1
        pi[i, OUT] = -2
        pi[i, TIMER] = NO_TIMER
        lo, hi = indptr[i], indptr[i + 1]
        live = np.zeros(hi - lo, dtype=np.bool_)
        for e in range(lo, hi):
            if ealive[e]:
                live[e - lo] = True
                cnt[LIVE_EDGES] -= 1
                ealive[e] = False
                ealive[rev[e]] = False
        for e in range(lo, hi):
            j = nbr[e]
            if live[e - lo] and alive[j]:
                _on_change(j, now, nxt, indptr, ealive, inp, src, lm, lw, pi, cnt,
                           bi, bm, bw, bn, bad, grow, km, kw, vec, beta, ell, uniform)
                _touch(j, cnt, dirty, dlist)
    _flush_outputs(indptr, ealive, alive, inp, src, lm, lw, pi, counts, cnt, dirty, dlist, vec)


@njit(cache=True)
def k_cycle(indptr, nbr, rev, ealive, alive, inp, src, lm, lw, lseq, pi, counts, cnt,
            bi, bm, bw, bn, bad, grow, km, kw, vec, dirty, dlist, beta, ell, uniform,
            noise_ids, noise_vals, perm, dropped, use_drop, now, cur, nxt):
    d = vec.shape[1]
    for q in range(noise_ids.shape[0]):
        i = noise_ids[q]
        if not alive[i]:
            continue
        for t in range(d):
            inp[i, t] = noise_vals[q, t]
        _on_change(i, now, nxt, indptr, ealive, inp, src, lm, lw, pi, cnt,
                   bi, bm, bw, bn, bad, grow, km, kw, vec, beta, ell, uniform)
        _touch(i, cnt, dirty, dlist)
    for q in range(perm.shape[0]):
        slot = perm[q]
        e = bi[cur, slot, EDGE]
        j = nbr[e]
        if not alive[j]:
            continue
        if use_drop and dropped[slot]:
            continue
        re = rev[e]
        if ealive[re] and bi[cur, slot, MSEQ] >= lseq[re]:
            lseq[re] = bi[cur, slot, MSEQ]
            for t in range(d):
                lm[re, R, t] = bm[cur, slot, t]
            lw[re, R] = bw[cur, slot]
            _on_change(j, now, nxt, indptr, ealive, inp, src, lm, lw, pi, cnt,
                       bi, bm, bw, bn, bad, grow, km, kw, vec, beta, ell, uniform)
            _touch(j, cnt, dirty, dlist)
    bn[cur] = 0
    for i in range(inp.shape[0]):
        if alive[i] and pi[i, TIMER] == now:
            pi[i, TIMER] = NO_TIMER
            _on_change(i, now, nxt, indptr, ealive, inp, src, lm, lw, pi, cnt,
                       bi, bm, bw, bn, bad, grow, km, kw, vec, beta, ell, uniform)
            _touch(i, cnt, dirty, dlist)
    _flush_outputs(indptr, ealive, alive, inp, src, lm, lw, pi, counts, cnt, dirty, dlist, vec)


@njit(cache=True)
def k_pending_timers(alive, pi):
    for i in range(alive.shape[0]):
        if alive[i] and pi[i, TIMER] != NO_TIMER:
            return True
    return False


class FastWorld:
    """Drop-in replacement for :class:`~localthresh.simulator.World` (no tracing)."""

    def __init__(self, topology: Topology, inputs, params: Params, seed: int = 0,
                 drop_rate: float = 0.0, noise_ppmc: float = 0.0, churn_ppmc: float = 0.0,
                 data: Optional[DataModel] = None):
        if not is_connected(topology):
            raise ConfigError("topology is disconnected")
        if noise_ppmc > 0 and data is None:
            raise ConfigError("noise needs a data model to resample from")
        src = np.array(params.classifier.sources, dtype=float)
        n = topology.n
        inp = np.array(inputs, dtype=float)
        d = inp.shape[1]
        indptr = np.zeros(n + 1, dtype=np.int64)
        nbr_lists = [sorted(topology.adjacency[i]) for i in range(n)]
        for i in range(n):
            indptr[i + 1] = indptr[i] + len(nbr_lists[i])
        m = int(indptr[-1])
        nbr = np.array([j for lst in nbr_lists for j in lst], dtype=np.int64)
        pos = {}
        for i in range(n):
            for off, j in enumerate(nbr_lists[i]):
                pos[(i, j)] = indptr[i] + off
        rev = np.array([pos[(j, i)] for (i, j) in sorted(pos, key=pos.get)], dtype=np.int64)
        cap = max(m, 1)
        pi = np.zeros((n, 4), dtype=np.int64)
        pi[:, LAST] = -params.ell
        pi[:, TIMER] = NO_TIMER
        self.net = Net(
            indptr, nbr, rev, np.ones(m, dtype=np.bool_), np.ones(n, dtype=np.bool_), inp, src,
            np.zeros((m, 2, d)), np.zeros((m, 2)), np.zeros(m, dtype=np.int64), pi,
            np.zeros(len(src) + 1, dtype=np.int64),
            np.array([n, topology.n_edges, 0, 0], dtype=np.int64),
            np.zeros((2, cap, 2), dtype=np.int64), np.zeros((2, cap, d)), np.zeros((2, cap)),
            np.zeros(2, dtype=np.int64),
            np.zeros(m, dtype=np.bool_), np.zeros(m, dtype=np.bool_),
            np.zeros((m, 2, d)), np.zeros((m, 2)), np.zeros((4, d)),
            np.zeros(n, dtype=np.bool_), np.zeros(n, dtype=np.int64),
            float(params.beta), int(params.ell), params.policy == UNIFORM,
        )
        self.topology = topology
        self.params = params
        self.classifier = params.classifier
        self.n_edges = topology.n_edges
        self.drop_rate = drop_rate
        self.p_noise = noise_ppmc / 1e6
        self.p_churn = churn_ppmc / 1e6
        self.rng = np.random.default_rng([seed, 4])
        self.resampler = ResampleStream(data, seed) if data is not None else None
        self.cycle = 0
        self.pending = 1
        self.truth = self._ground_truth()
        self.series_frac: list[float] = []
        self.series_msgs: list[int] = []
        self.series_live: list[int] = []
        self.series_edges: list[int] = []
        self._no_ids = np.zeros(0, dtype=np.int64)
        self._no_vals = np.zeros((0, d))
        self._no_drop = np.zeros(0, dtype=np.bool_)

    @property
    def alive(self) -> np.ndarray:
        return self.net.alive

    @property
    def inputs(self) -> np.ndarray:
        return self.net.inp

    @property
    def n_live(self) -> int:
        return int(self.net.cnt[N_LIVE])

    @property
    def live_edges(self) -> int:
        return int(self.net.cnt[LIVE_EDGES])

    def _ground_truth(self) -> int:
        return self.classifier.classify(self.net.inp[self.net.alive].mean(axis=0).tolist())

    def correct_fraction(self) -> float:
        return int(self.net.counts[self.truth]) / self.n_live

    def _record(self) -> None:
        cnt = self.net.cnt
        self.series_frac.append(self.correct_fraction())
        self.series_msgs.append(int(cnt[SENT]))
        self.series_live.append(int(cnt[N_LIVE]))
        self.series_edges.append(int(cnt[LIVE_EDGES]))
        cnt[SENT] = 0

    def initialize(self) -> None:
        k_initialize(*self.net)
        self._record()

    def quiescent(self) -> bool:
        return self.net.bn[self.pending] == 0 and not k_pending_timers(self.net.alive, self.net.pi)

    def _draw_subset(self, p: float) -> np.ndarray:
        if p <= 0:
            return self._no_ids
        count = int(self.rng.binomial(self.n_live, p))
        if count == 0:
            return self._no_ids
        live = np.flatnonzero(self.net.alive)
        picks = self.rng.choice(len(live), size=count, replace=False)
        return np.sort(live[picks]).astype(np.int64)

    def step(self) -> None:
        self.cycle += 1
        now = self.cycle
        net = self.net
        cur = self.pending
        nxt = 1 - cur
        dirty = False
        churned = self._draw_subset(self.p_churn)
        if len(churned):
            k_churn(*net, churned, now, nxt)
            dirty = True
        noise_ids = self._draw_subset(self.p_noise)
        if len(noise_ids):
            vals = np.array([self.resampler.next() for _ in noise_ids])
            dirty = True
        else:
            vals = self._no_vals
        nb = int(net.bn[cur])
        if nb:
            perm = self.rng.permutation(nb)
            if self.drop_rate > 0:
                dropped = self.rng.random(nb) < self.drop_rate
            else:
                dropped = self._no_drop
        else:
            perm = self._no_ids
            dropped = self._no_drop
        k_cycle(*net, noise_ids, vals, perm, dropped, self.drop_rate > 0, now, cur, nxt)
        if dirty:
            self.truth = self._ground_truth()
        self.pending = nxt
        self._record()

    def peer_state(self, i: int) -> Optional[PeerState]:
        """Rebuild peer ``i`` as a :class:`PeerState` (``None`` once departed)."""
        net = self.net
        if not net.alive[i]:
            return None
        p = PeerState.create(i, net.inp[i].tolist(), (), self.params.ell)
        for e in range(net.indptr[i], net.indptr[i + 1]):
            if net.ealive[e]:
                p.ledgers[int(net.nbr[e])] = NeighborLedger(
                    WeightedVector(net.lm[e, S], net.lw[e, S]),
                    WeightedVector(net.lm[e, R], net.lw[e, R]),
                    int(net.lseq[e]),
                )
        p.seq = int(net.pi[i, SEQ])
        p.last_send_time = int(net.pi[i, LAST])
        p.timer = None if net.pi[i, TIMER] == NO_TIMER else int(net.pi[i, TIMER])
        return p


def make_fast_world(config: SimConfig) -> FastWorld:
    """Fast counterpart of :func:`localthresh.simulator.make_world`."""
    topo = config.build_topology()
    if not is_connected(topo):
        raise ConfigError("generated topology is disconnected")
    data = config.build_data()
    params = Params(data.sources, config.beta, config.ell, config.policy)
    return FastWorld(topo, gen_inputs(data, topo.n), params, seed=config.seed,
                     drop_rate=config.drop_rate, noise_ppmc=config.noise_ppmc,
                     churn_ppmc=config.churn_ppmc, data=data)
