"""Energy accounting and per-frame performance figures."""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import EnergyExhausted


class Activity(enum.IntEnum):
    TX = 0
    RX = 1
    SENSE = 2
    IDLE = 3
    SWITCH = 4


def tx_duration(packet_size: int, data_rate: float) -> float:
    return packet_size * 8 / data_rate


class EnergyLedger:
    """Per-node joules split by activity.

    ``power_mw`` maps each ``Activity`` to the radio draw while doing it.
    Charges are clipped at the node's remaining budget; the charge that
    empties a node raises ``EnergyExhausted`` after it has been booked.
    """

    def __init__(self, node_ids: Iterable[int], power_mw: dict[Activity, float],
                 initial_energy: float):
        ids = list(node_ids)
        self.power_w = [0.0] * len(Activity)
        for act, mw in power_mw.items():
            self.power_w[act] = mw * 1e-3
        self.initial = {n: float(initial_energy) for n in ids}
        self.remaining = dict(self.initial)
        self.joules = {n: [0.0] * len(Activity) for n in ids}
        self.dead: set[int] = set()

    def record(self, node: int, activity: Activity, duration: float) -> float:
        if duration < 0:
            raise ValueError("duration must be >= 0")
        cost = self.power_w[activity] * duration
        if cost == 0.0 or node in self.dead:
            return 0.0
        left = self.remaining[node]
        if cost >= left:
            self.joules[node][activity] += left
            self.remaining[node] = 0.0
            self.dead.add(node)
            raise EnergyExhausted(node)
        self.joules[node][activity] += cost
        self.remaining[node] = left - cost
        return cost

    def node_total(self, node: int) -> float:
        return math.fsum(self.joules[node])

    def total(self) -> float:
        return math.fsum(math.fsum(v) for v in self.joules.values())

    def by_activity(self) -> dict[Activity, float]:
        return {a: math.fsum(v[a] for v in self.joules.values()) for a in Activity}


def record_activity(ledger: EnergyLedger, node: int, activity: Activity, duration: float) -> EnergyLedger:
    ledger.record(node, activity, duration)
    return ledger


@dataclass(frozen=True)
class MetricsFrame:
    frame_index: int
    time: float
    avg_sinr_db: float
    running_mean_sinr_db: float
    eq6_residual: float
    cumulative_energy_j: float
    delivered_count: int
    collision_count: int
    outage_indicator: bool


def eq6_residual(samples: Sequence[float], threshold: float) -> float:
    """Expected residual interference when each sample is moved to an
    orthogonal channel with probability sample/threshold:
    sum(d * (1 - d / threshold))."""
    return math.fsum(d * (1.0 - d / threshold) for d in samples)


def frame_avg_sinr(samples: Sequence[float], threshold: float,
                   interfering: Sequence[bool] | None = None) -> tuple[float, float]:
    """Return ``(mean SINR in dB over all samples, expected residual over the
    interfering ones)``. Samples are linear; ``threshold`` is linear too.
    Without explicit flags a sample is interfering when below the threshold.
    """
    if interfering is None:
        interfering = [d < threshold for d in samples]
    avg = math.fsum(10.0 * math.log10(d) for d in samples) / len(samples) if samples else math.nan
    residual = eq6_residual([d for d, f in zip(samples, interfering) if f], threshold)
    return avg, residual


def throughput(delivery_times: Sequence[float], window: tuple[float, float]) -> float:
    """Deliveries with ``start <= t < end`` per second. ``delivery_times`` must be sorted."""
    start, end = window
    if end <= start:
        raise ValueError("window must have positive length")
    count = bisect.bisect_left(delivery_times, end) - bisect.bisect_left(delivery_times, start)
    return count / (end - start)


def outage_estimate(aggregates: Sequence[float], threshold: float) -> float:
    """Fraction of frames whose aggregate interference exceeds ``threshold``."""
    if len(aggregates) == 0:
        raise ValueError("need at least one frame")
    return sum(1 for a in aggregates if a > threshold) / len(aggregates)


def running_mean(values: Sequence[float]) -> list[float]:
    """Cumulative mean ignoring NaN entries (frames with no transmission)."""
    out, total, n = [], 0.0, 0
    for v in values:
        if not math.isnan(v):
            total += v
            n += 1
        out.append(total / n if n else math.nan)
    return out
