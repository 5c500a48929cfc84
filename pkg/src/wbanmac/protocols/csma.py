"""Slotted CSMA/CA contention on the shared base channel.

Contenders draw a uniform backoff in [0, CW) and count it down in idle
backoff slots, freezing while the medium is busy. Those reaching zero in
the same slot transmit together and interfere at each other's receivers.
A contender that cannot finish its frame before the contention period ends
defers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from ..channel import Classification, classify_source, sinr, to_db


@dataclass(frozen=True)
class CapOutcome:
    node: int
    receiver: int
    start: float | None  # None when the node deferred
    end: float | None
    sinr: float | None  # linear, at the receiver
    sensed: float  # seconds spent carrier sensing
    group_size: int  # nodes that started in the same backoff slot

    @property
    def transmitted(self) -> bool:
        return self.start is not None

    def delivered(self, threshold_db: float) -> bool:
        return self.transmitted and to_db(self.sinr) >= threshold_db

    def classification(self, threshold_db: float) -> Classification:
        # a source that never found the medium clear counts as interfering
        if not self.transmitted:
            return Classification.HIGH_INTERFERING
        return classify_source(to_db(self.sinr), threshold_db)


def draw_backoffs(contenders: Sequence[int], cw: Mapping[int, int], rng: np.random.Generator) -> dict[int, int]:
    return {n: int(rng.integers(cw[n])) for n in contenders}


def resolve_contention(backoffs: Mapping[int, int], receiver: Mapping[int, int],
                       rx_mw: Callable[[int, int], float], noise_mw: float,
                       backoff_slot: float, n_slots: int, airtime_slots: Mapping[int, int],
                       t0: float = 0.0) -> dict[int, CapOutcome]:
    """Play out one contention period given fixed backoff counters.

    ``rx_mw(tx, rx)`` is the received power including any channel penalty.
    ``airtime_slots[n]`` is node n's frame length in backoff slots.
    """
    remaining = dict(sorted(backoffs.items()))
    out: dict[int, CapOutcome] = {}
    idle_at = 0
    while remaining:
        c = min(remaining.values())
        start = idle_at + c
        group = [n for n, b in remaining.items() if b == c]
        fits = [n for n in group if start + airtime_slots[n] <= n_slots]
        for n in group:
            if n not in fits:
                out[n] = CapOutcome(n, receiver[n], None, None, None, n_slots * backoff_slot, 0)
        for n in group:
            del remaining[n]
        if not fits:
            # idle countdown continues for the others
            for n in remaining:
                remaining[n] -= c
            idle_at = start
            if idle_at >= n_slots:
                break
            continue
        for n in remaining:
            remaining[n] -= c
        t_start = t0 + start * backoff_slot
        for n in fits:
            r = receiver[n]
            interferers = [rx_mw(o, r) for o in fits if o != n]
            value = sinr(rx_mw(n, r), interferers, noise_mw)
            out[n] = CapOutcome(n, r, t_start, t_start + airtime_slots[n] * backoff_slot,
                                value, start * backoff_slot, len(fits))
        idle_at = start + max(airtime_slots[n] for n in fits)
        if idle_at >= n_slots:
            break
    for n in remaining:
        out[n] = CapOutcome(n, receiver[n], None, None, None, n_slots * backoff_slot, 0)
    return dict(sorted(out.items()))


def collision_groups(outcomes: Mapping[int, CapOutcome]) -> int:
    """Number of backoff slots in which two or more nodes started together."""
    starts: dict[float, int] = {}
    for o in outcomes.values():
        if o.transmitted:
            starts[o.start] = starts.get(o.start, 0) + 1
    return sum(1 for k in starts.values() if k > 1)


def cap_phase(sources: Sequence[int], cw: Mapping[int, int], best_relay: Mapping[int, int],
              rx_mw: Callable[[int, int], float], noise_mw: float, backoff_slot: float,
              cap_duration: float, airtime: float, rng: np.random.Generator,
              t0: float = 0.0) -> dict[int, CapOutcome]:
    """Source-to-relay contention of one frame; one backoff draw per source."""
    n_slots = int(round(cap_duration / backoff_slot))
    a = math.ceil(airtime / backoff_slot - 1e-9)
    backoffs = draw_backoffs(sources, cw, rng)
    return resolve_contention(backoffs, {s: best_relay[s] for s in sources}, rx_mw, noise_mw,
                              backoff_slot, n_slots, {s: a for s in sources}, t0)


def next_cw(cw: int, success: bool, cw_min: int, cw_max: int) -> int:
    return cw_min if success else min(2 * cw, cw_max)
