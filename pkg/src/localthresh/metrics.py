"""Per-run metrics: convergence cycles, message load and accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence


@dataclass
class RunRecord:
    correct_fraction: list[float] = field(default_factory=list)
    messages: list[int] = field(default_factory=list)
    live_peers: list[int] = field(default_factory=list)
    live_edges: list[int] = field(default_factory=list)
    cycles_to_95: Optional[int] = None
    cycles_to_100: Optional[int] = None
    messages_per_link: float = 0.0
    avg_accuracy: float = 0.0
    normalized_messaging: float = 0.0
    realized_avg_degree: float = 0.0
    quiesced: bool = False

    @property
    def cycles(self) -> int:
        return len(self.correct_fraction) - 1

    @property
    def error_rate(self) -> float:
        return 1.0 - self.avg_accuracy


def held_crossing(series: Sequence[float], threshold: float) -> Optional[int]:
    """First index from which ``series`` stays at or above ``threshold``."""
    first = None
    for i in range(len(series) - 1, -1, -1):
        if series[i] >= threshold:
            first = i
        else:
            break
    return first


def measure(
    correct_fraction: Sequence[float],
    messages: Sequence[int],
    live_edges: Sequence[int],
    n_edges: int,
    warmup: int = 0,
    live_peers: Sequence[int] = (),
    realized_avg_degree: float = 0.0,
    quiesced: bool = False,
) -> RunRecord:
    """Summarise per-cycle series (index 0 is the initialisation cycle).

    ``warmup`` cycles are excluded from the accuracy and normalized-messaging
    means; convergence cycles and the per-link total use the whole series.
    """
    frac = list(correct_fraction)
    msgs = list(messages)
    edges = list(live_edges)
    window = range(min(warmup, max(len(frac) - 1, 0)), len(frac))
    rec = RunRecord(frac, msgs, list(live_peers), edges)
    rec.cycles_to_95 = held_crossing(frac, 0.95)
    rec.cycles_to_100 = held_crossing(frac, 1.0 - 1e-12)
    rec.messages_per_link = sum(msgs) / n_edges if n_edges else 0.0
    if len(window):
        rec.avg_accuracy = sum(frac[i] for i in window) / len(window)
        rec.normalized_messaging = sum(
            msgs[i] / edges[i] if edges[i] else 0.0 for i in window
        ) / len(window)
    rec.realized_avg_degree = realized_avg_degree
    rec.quiesced = quiesced
    return rec
