"""Peer state machine of the local source selection (LSS) protocol.

Every peer keeps, per neighbor ``j``, the last weighted vector it sent
(``X_ij``) and the last one it received (``X_ji``). From these it derives the
agreement ``A_ij = X_ij + X_ji`` and its state
``S_i = X_ii + sum_j (X_ji - X_ij)``. The output of a peer is the region of
its state. When the local stopping rule fails the peer re-balances some of its
outgoing ledgers so every corrected agreement has the same value as the state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .regions import Classifier
from .wvector import EPS_W, IllConditionedDifference, WeightedVector, _raw

log = logging.getLogger(__name__)

UNIFORM = "uniform"
SELECTIVE = "selective"
POLICIES = (UNIFORM, SELECTIVE)


class ProtocolError(Exception):
    pass


class DegenerateCorrection(ProtocolError):
    """The correction normalizer has (near-)zero weight."""


class UnknownNeighbor(ProtocolError, KeyError):
    pass


@dataclass
class NeighborLedger:
    last_sent: WeightedVector
    last_recv: WeightedVector
    last_seq_recv: int = 0
    _cache: Optional[tuple] = field(default=None, repr=False, compare=False)

    @classmethod
    def fresh(cls, dim: int) -> "NeighborLedger":
        z = WeightedVector.zero(dim)
        return cls(z, z, 0)


@dataclass(frozen=True)
class Message:
    payload: WeightedVector
    seq: int


@dataclass
class Params:
    """Protocol constants shared by all peers of one run."""

    classifier: Classifier
    beta: float = 0.001
    ell: int = 1
    policy: str = SELECTIVE

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.ell < 1:
            raise ValueError("ell must be >= 1")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")


@dataclass
class PeerState:
    id: int
    input: WeightedVector
    ledgers: dict[int, NeighborLedger] = field(default_factory=dict)
    seq: int = 0
    last_send_time: int = 0
    timer: Optional[int] = None

    @classmethod
    def create(cls, pid: int, x: Sequence[float], neighbors: Iterable[int], ell: int = 1) -> "PeerState":
        """Initial state: input with weight 1, zero ledgers, send clock at -ell."""
        inp = WeightedVector.from_value(x, 1.0)
        ledgers = {j: NeighborLedger.fresh(inp.dim) for j in sorted(neighbors)}
        return cls(pid, inp, ledgers, 0, -ell, None)

    @property
    def dim(self) -> int:
        return self.input.dim

    @property
    def neighbors(self) -> list[int]:
        return list(self.ledgers)


# -- derived quantities ----------------------------------------------------


def agreement(p: PeerState, j: int) -> WeightedVector:
    try:
        led = p.ledgers[j]
    except KeyError:
        raise UnknownNeighbor(j) from None
    return led.last_sent + led.last_recv


def state(p: PeerState) -> WeightedVector:
    inp = p.input
    m = inp.moment
    w = inp.weight
    for led in p.ledgers.values():
        r, x = led.last_recv, led.last_sent
        m = [a + b - c for a, b, c in zip(m, r.moment, x.moment)]
        w += r.weight - x.weight
    return _raw(tuple(m), w)


def output(p: PeerState, classifier: Classifier) -> Optional[int]:
    s = state(p)
    if s.is_zero():
        return None
    return classifier.classify(s.value)


def _region(classifier: Classifier, x: WeightedVector) -> Optional[int]:
    # None marks the zero-weight guard
    w = x.weight
    if -EPS_W <= w <= EPS_W:
        return None
    return classifier.classify([v / w for v in x.moment])


def _agreement_region(led: NeighborLedger, classify) -> Optional[int]:
    # cached per (sent, recv) pair; ledgers are replaced, never mutated
    c = led._cache
    sent, recv = led.last_sent, led.last_recv
    if c is not None and c[0] is sent and c[1] is recv:
        return c[2]
    w = sent.weight + recv.weight
    if -EPS_W <= w <= EPS_W:
        r = None
    else:
        r = classify([(a + b) / w for a, b in zip(sent.moment, recv.moment)])
    led._cache = (sent, recv, r)
    return r


def _scan(
    p: PeerState, classifier: Classifier, strict: bool, skip: Iterable[int] = ()
) -> list[int]:
    s = state(p)
    sw = s.weight
    if -EPS_W <= sw <= EPS_W:
        return []
    sm = s.moment
    classify = classifier.classify
    r = classify([v / sw for v in sm])
    bad = []
    for j, led in p.ledgers.items():
        if j in skip:
            continue
        ra = _agreement_region(led, classify)
        if ra is None:
            if strict:
                bad.append(j)
            continue
        if ra != r:
            bad.append(j)
            continue
        sent, recv = led.last_sent, led.last_recv
        rw = sw - sent.weight - recv.weight
        rest = [x - a - b for x, a, b in zip(sm, sent.moment, recv.moment)]
        if -EPS_W <= rw <= EPS_W:
            # weights cancel: either the zero element or ill-conditioned;
            # both satisfy the guard
            continue
        if classify([v / rw for v in rest]) != r:
            bad.append(j)
    return bad


def check_stopping(p: PeerState, classifier: Classifier) -> set[int]:
    """Neighbors for which the local stopping rule fails.

    For each neighbor ``j`` both the agreement and ``state - agreement`` must
    lie in the region of the state, unless they carry zero weight. An empty
    result means the peer may stay silent.
    """
    return set(_scan(p, classifier, strict=False))


def violations(p: PeerState, classifier: Classifier) -> set[int]:
    """Neighbors the handler must correct.

    Same as :func:`check_stopping`, except that an agreement with zero weight
    is always a violation: an edge nobody has spoken on cannot vouch that both
    ends agree, so silence is only allowed once every agreement is established.
    """
    return set(_scan(p, classifier, strict=True))


# -- corrections -----------------------------------------------------------


def _normalizer(p: PeerState) -> WeightedVector:
    m = list(p.input.moment)
    w = p.input.weight
    d = len(m)
    for led in p.ledgers.values():
        rm = led.last_recv.moment
        for t in range(d):
            m[t] += 2.0 * rm[t]
        w += 2.0 * led.last_recv.weight
    return _raw(tuple(m), w)


def perfect_target(p: PeerState, j: int, new_agreement_weight: float) -> WeightedVector:
    """Agreement with ``j`` that lines up with the post-correction state.

    The value is that of ``X_ii + sum_k 2*X_ki``; the weight is the one
    requested.
    """
    if j not in p.ledgers:
        raise UnknownNeighbor(j)
    if new_agreement_weight <= 0:
        raise ValueError("new agreement weight must be positive")
    norm = _normalizer(p)
    if abs(norm.weight) <= EPS_W:
        raise DegenerateCorrection(f"normalizer weight {norm.weight!r}")
    return (new_agreement_weight / norm.weight) * norm


def _ledger_minus(a: WeightedVector, b: WeightedVector) -> WeightedVector:
    # moment-form difference without the zero-weight canonicalisation:
    # ledgers may legitimately carry zero or negative weight
    return _raw(tuple(x - y for x, y in zip(a.moment, b.moment)), a.weight - b.weight)


def _stamp(p: PeerState, targets: Iterable[int]) -> list[tuple[int, Message]]:
    p.seq += 1
    return [(j, Message(p.ledgers[j].last_sent, p.seq)) for j in sorted(targets)]


def correct_uniform(p: PeerState, beta: float) -> list[tuple[int, Message]]:
    """Re-balance every outgoing ledger, splitting half the spare weight evenly."""
    if not p.ledgers:
        return []
    s = state(p)
    norm = _normalizer(p)
    if abs(norm.weight) <= EPS_W:
        raise DegenerateCorrection(f"normalizer weight {norm.weight!r}")
    share = (s.weight - beta) / (2 * len(p.ledgers))
    new = {}
    for j, led in p.ledgers.items():
        w = led.last_sent.weight + led.last_recv.weight + share
        target = (w / norm.weight) * norm
        new[j] = _ledger_minus(target, led.last_recv)
    for j, x in new.items():
        p.ledgers[j].last_sent = x
    return _stamp(p, new)


def correct_selective(
    p: PeerState, classifier: Classifier, beta: float, initial: Optional[Iterable[int]] = None
) -> list[tuple[int, Message]]:
    """Correct only violating neighbors, growing the set until it is stable.

    Every pass recomputes the targets from the state and agreements as they
    were before the round, so the final ledgers depend only on the final set.
    On a degenerate normalizer the ledgers are restored and the error raised.
    """
    bad = set(violations(p, classifier) if initial is None else initial)
    if not bad:
        return []
    old_s = state(p)
    before = {j: led.last_sent for j, led in p.ledgers.items()}
    agreements = {j: led.last_sent + led.last_recv for j, led in p.ledgers.items()}
    spare = old_s.weight - beta
    while True:
        new_s = old_s
        for j in sorted(bad):
            new_s = new_s + agreements[j]
        if abs(new_s.weight) <= EPS_W:
            for j, x in before.items():
                p.ledgers[j].last_sent = x
            raise DegenerateCorrection(f"combined state weight {new_s.weight!r}")
        share = spare / (2 * len(bad))
        for j in bad:
            w = share + agreements[j].weight
            target = (w / new_s.weight) * new_s
            p.ledgers[j].last_sent = _ledger_minus(target, p.ledgers[j].last_recv)
        # members of ``bad`` now agree with the state by construction
        grown = set(_scan(p, classifier, True, bad))
        if not grown:
            break
        bad |= grown
    return _stamp(p, bad)


# -- event handlers --------------------------------------------------------


def _on_change(p: PeerState, params: Params, now: int) -> list[tuple[int, Message]]:
    if now - p.last_send_time < params.ell:
        p.timer = p.last_send_time + params.ell
        return []
    bad = violations(p, params.classifier)
    if not bad:
        return []
    try:
        if params.policy == UNIFORM:
            out = correct_uniform(p, params.beta)
        else:
            out = correct_selective(p, params.classifier, params.beta, bad)
    except DegenerateCorrection as e:
        log.debug("peer %s skipped correction: %s", p.id, e)
        return []
    p.last_send_time = now
    return out


def on_initialize(p: PeerState, params: Params, now: int = 0) -> list[tuple[int, Message]]:
    return _on_change(p, params, now)


def on_message(p: PeerState, sender: int, m: Message, params: Params, now: int) -> list[tuple[int, Message]]:
    led = p.ledgers.get(sender)
    if led is None or m.seq < led.last_seq_recv:
        return []
    led.last_seq_recv = m.seq
    led.last_recv = m.payload
    return _on_change(p, params, now)


def on_input_change(p: PeerState, x: Sequence[float], params: Params, now: int) -> list[tuple[int, Message]]:
    p.input = WeightedVector.from_value(x, 1.0)
    return _on_change(p, params, now)


def on_timer(p: PeerState, params: Params, now: int) -> list[tuple[int, Message]]:
    p.timer = None
    return _on_change(p, params, now)


def on_neighbor_change(
    p: PeerState,
    params: Params,
    now: int,
    added: Iterable[int] = (),
    removed: Iterable[int] = (),
) -> list[tuple[int, Message]]:
    for j in removed:
        p.ledgers.pop(j, None)
    for j in added:
        if j != p.id and j not in p.ledgers:
            p.ledgers[j] = NeighborLedger.fresh(p.dim)
    return _on_change(p, params, now)
