"""Flexible TDMA: relay choice, per-node slot/channel decisions and the
coordinator's end-of-frame beacon construction."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..channel import Classification, MarkovChannel, find_stable_channel
from ..model import Beacon, Packet, active_nodes


def select_best_relay(source: int, relays: Sequence[int], rx_mw: Callable[[int, int], float]) -> int:
    """Relay with the strongest received power from ``source``; lowest id wins ties."""
    if not relays:
        raise ValueError("need at least one relay")
    return min(relays, key=lambda r: (-rx_mw(source, r), r))


@dataclass
class SourceState:
    node: int
    best_relay: int | None = None
    classification: Classification | None = None
    queue: deque = field(default_factory=deque)
    assigned_slot: int | None = None
    retry_counter: int = 0
    waiting: bool = False
    in_relay: bool = False  # head packet handed to a relay, not yet at C
    cw: int = 8
    channel: int = 0


@dataclass
class RelayState:
    node: int
    buffer: deque = field(default_factory=deque)
    is_best_for: frozenset = frozenset()
    assigned_slot: int | None = None
    retry_counter: int = 0
    waiting: bool = False
    cw: int = 8
    channel: int = 0


@dataclass
class CoordinatorState:
    window: int = 3
    k_history: int = 4
    p_min_slack: int = 1
    p_max_slack: int = 8
    history: dict = field(default_factory=dict)  # frame -> ids heard
    collisions: deque = field(default_factory=deque)

    def __post_init__(self):
        self.collisions = deque([0] * self.k_history, maxlen=self.k_history)


@dataclass(frozen=True)
class TxDecision:
    node: int
    slot: int
    dedicated: bool
    channel: int
    scans: int


def ftdma_node_step(state: SourceState | RelayState, beacon: Beacon, channels: Sequence[MarkovChannel],
                    T: float, T_data: float, tau_s: float, p_thr: float,
                    rng: np.random.Generator) -> TxDecision | None:
    """Decide where a high-interfering source or best relay sends this frame.

    Returns ``None`` when the node sits out its one-frame wait after
    ``max_retries`` failed free-slot frames (the wait is consumed here).
    ``NoStableChannel`` from the channel scan propagates to the caller.
    The scan starts at the beginning of the TDMA part, so a node in slot k
    has k + 1 slots of horizon before its transmission ends.
    """
    slot = beacon.node_slot_list.get(state.node)
    dedicated = slot is not None
    if not dedicated:
        if state.waiting:
            state.waiting = False
            return None
        free = beacon.free_slots
        slot = free.start + int(rng.integers(len(free)))
    ch, scans = find_stable_channel(channels, slot + 1, T, T_data, tau_s, p_thr, rng)
    return TxDecision(state.node, slot, dedicated, ch, scans)


def apply_free_slot_outcome(state: SourceState | RelayState, success: bool, max_retries: int) -> None:
    if success:
        state.retry_counter = 0
        return
    state.retry_counter += 1
    if state.retry_counter >= max_retries:
        state.retry_counter = 0
        state.waiting = True


def predict_p(collisions: Sequence[int], m: int, p_min_slack: int = 1, p_max_slack: int = 8) -> int:
    """Slots for the next frame: m dedicated plus a free-slot slack that grows
    with the mean free-slot collisions of the last k frames."""
    mean = sum(collisions) / len(collisions) if collisions else 0.0
    slack = p_min_slack + math.ceil(mean - 1e-12)
    return m + min(max(slack, p_min_slack), p_max_slack)


def coordinator_frame_end(state: CoordinatorState, frame_index: int, received: dict[int, int],
                          collisions: int) -> Beacon:
    """Book this frame's receptions and build the beacon for the next frame.

    ``received`` maps each node heard this frame to the channel it used.
    Dedicated slots go to every node heard in the last ``window`` frames,
    in id order; the remaining p - m slots are free.
    """
    state.history[frame_index] = set(received)
    for f in [f for f in state.history if f <= frame_index - state.window]:
        del state.history[f]
    state.collisions.append(collisions)
    active = sorted(active_nodes(state.history, frame_index + 1, state.window))
    p = predict_p(list(state.collisions), len(active), state.p_min_slack, state.p_max_slack)
    slots = {n: i for i, n in enumerate(active)}
    return Beacon(frame_index + 1, slots, p - len(active), dict(sorted(received.items())))


def deliver(packets: Sequence[Packet], t: float, hops: int) -> None:
    for pkt in packets:
        pkt.delivered_at = t
        pkt.hops = hops
