"""Per-second metric bookkeeping and the summary metrics computed from it.

A MetricsLog accumulates one row per simulated second: network and
per-intersection delayed-passenger counts, queued road-vehicle counts
(trams excluded), plus one completion record per vehicle that leaves the
network (mode, accumulated waiting seconds, spawn and exit times). The
summary metrics are pure functions of a log:

    anp  - average delayed passengers per second over a horizon
    aql  - time-average queued road vehicles
    awt  - mean waiting of completed vehicles of one mode (None if none)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field


@dataclass
class CompletedTrip:
    mode: str
    waiting_s: int
    spawn_t: int
    exit_t: int


@dataclass
class MetricsLog:
    n: int
    seconds: list = field(default_factory=list)
    net_delayed: list = field(default_factory=list)
    int_delayed: list = field(default_factory=list)   # one [n] row per second
    net_queued: list = field(default_factory=list)
    int_queued: list = field(default_factory=list)
    completed: list = field(default_factory=list)

    def append(self, t: int, int_delayed, int_queued) -> None:
        self.seconds.append(t)
        self.int_delayed.append(list(int_delayed))
        self.int_queued.append(list(int_queued))
        self.net_delayed.append(sum(int_delayed))
        self.net_queued.append(sum(int_queued))

    def complete(self, mode: str, waiting_s: int, spawn_t: int, exit_t: int) -> None:
        self.completed.append(CompletedTrip(mode, waiting_s, spawn_t, exit_t))

    def window(self, start: int, stop: int) -> "MetricsLog":
        """Seconds with start <= t < stop; completion records are not sliced."""
        out = MetricsLog(n=self.n)
        for k, t in enumerate(self.seconds):
            if start <= t < stop:
                out.append(t, self.int_delayed[k], self.int_queued[k])
        return out

    def __len__(self) -> int:
        return len(self.seconds)


def anp(log: MetricsLog, horizon: int) -> float:
    """Average delayed passengers per second: sum of network counts / horizon."""
    if len(log) == 0:
        raise ValueError("anp: empty log")
    if horizon < 1:
        raise ValueError(f"anp: horizon must be >= 1, got {horizon}")
    return sum(log.net_delayed) / float(horizon)


def aql(log: MetricsLog) -> float:
    """Time-average queued road vehicles (trams never enter the counts)."""
    if len(log) == 0:
        raise ValueError("aql: empty log")
    return sum(log.net_queued) / float(len(log))


def awt(log: MetricsLog, mode: str) -> float | None:
    """Mean waiting of completed vehicles of `mode`; None when none completed."""
    waits = [c.waiting_s for c in log.completed if c.mode == mode]
    if not waits:
        return None
    return sum(waits) / float(len(waits))


def write_metrics_csv(log: MetricsLog, path) -> None:
    """Per-second log: t,delayed_passengers,queue_veh,<per-intersection columns>."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["t", "delayed_passengers", "queue_veh"]
        head += [f"delayed_i{k + 1}" for k in range(log.n)]
        head += [f"queue_i{k + 1}" for k in range(log.n)]
        w.writerow(head)
        for k, t in enumerate(log.seconds):
            row = [t, log.net_delayed[k], log.net_queued[k]]
            row += list(log.int_delayed[k])
            row += list(log.int_queued[k])
            w.writerow(row)


def write_heatmap_csv(log: MetricsLog, path) -> None:
    """Long-format per-second series: t,metric,i1..i{n},network."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "metric"] + [f"i{k + 1}" for k in range(log.n)] + ["network"])
        for k, t in enumerate(log.seconds):
            w.writerow([t, "delayed_passengers"] + list(log.int_delayed[k])
                       + [log.net_delayed[k]])
            w.writerow([t, "queue_veh"] + list(log.int_queued[k])
                       + [log.net_queued[k]])
