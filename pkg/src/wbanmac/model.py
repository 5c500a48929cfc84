"""Domain types shared by the channel model, protocols and simulator."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import (
    ChannelCountTooSmall,
    InvalidValue,
    MissingField,
    NoCoordinator,
    NonPositiveDuration,
)


class Role(enum.Enum):
    SOURCE = "source"
    RELAY = "relay"
    COORDINATOR = "coordinator"


class Scheme(enum.Enum):
    CFTIM = "cftim"
    OR = "or"
    TDMA = "tdma"


DEFAULT_MARKOV = (
    (0.90, 0.10, 0.00),
    (0.05, 0.85, 0.10),
    (0.00, 0.05, 0.95),
)


@dataclass(frozen=True)
class Node:
    id: int
    role: Role
    position: tuple[float, float]
    tx_power: float  # dBm
    energy_remaining: float  # J, initial budget

    def distance_to(self, other: "Node") -> float:
        return math.hypot(self.position[0] - other.position[0],
                          self.position[1] - other.position[1])


@dataclass
class Packet:
    origin: int
    size: int
    created_at: float
    delivered_at: float | None = None
    hops: int = 0


@dataclass(frozen=True)
class Superframe:
    index: int
    beacon_duration: float
    cap_duration: float
    slot_duration: float
    node_slot_list: Mapping[int, int]
    free_slot_count: int

    def __post_init__(self):
        slots = list(self.node_slot_list.values())
        if len(set(slots)) != len(slots):
            raise ValueError("node_slot_list maps two nodes to one slot")
        if self.free_slot_count < 1:
            raise ValueError("a superframe needs p > m")
        if any(s < 0 or s >= self.p for s in slots):
            raise ValueError("slot index outside [0, p)")

    @property
    def m(self) -> int:
        return len(self.node_slot_list)

    @property
    def p(self) -> int:
        return self.m + self.free_slot_count


@dataclass(frozen=True)
class Beacon:
    frame_index: int
    node_slot_list: Mapping[int, int]
    free_slot_count: int
    stable_channel_assignments: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        slots = list(self.node_slot_list.values())
        if len(set(slots)) != len(slots):
            raise ValueError("node_slot_list maps two nodes to one slot")
        if self.free_slot_count < 1:
            raise ValueError("a beacon must announce at least one free slot")

    @property
    def m(self) -> int:
        return len(self.node_slot_list)

    @property
    def p(self) -> int:
        return self.m + self.free_slot_count

    @property
    def free_slots(self) -> range:
        return range(self.m, self.p)


@dataclass(frozen=True)
class ScenarioConfig:
    n_sources: int
    n_relays: int
    channel_count: int
    sim_duration: float
    tx_power: float
    noise_floor: float
    data_rate: float
    packet_size: int
    pathloss_exponent: float
    sinr_threshold: float = 7.0
    slot_duration: float = 0.002
    superframe_period: float = 1.0
    beacon_slots: int = 1
    cap_slots: int = 4
    max_retries: int = 3
    k_history: int = 4
    active_window: int = 3
    p_min_slack: int = 1
    p_max_slack: int = 8
    rng_seed: int = 0
    scheme: Scheme = Scheme.CFTIM
    area: float = 2.0
    reference_distance: float = 0.1
    reference_loss: float = 35.0
    markov_matrix: tuple[tuple[float, ...], ...] = DEFAULT_MARKOV
    # received-power penalty in dB for channel states 1, 2, 3
    state_penalty: tuple[float, float, float] = (15.0, 6.0, 0.0)
    sense_time: float | None = None  # tau_s, defaults to slot_duration / 10
    stability_threshold: float = 0.9
    cw_min: int = 8
    cw_max: int = 64
    tx_mw: float = 36.0
    rx_mw: float = 33.0
    sense_mw: float = 30.0
    idle_mw: float = 0.9
    switch_mw: float = 10.0
    switch_time: float = 100e-6
    initial_energy: float = 1000.0
    nodes: tuple[tuple[str, float, float], ...] | None = None

    @property
    def tau_s(self) -> float:
        return self.sense_time if self.sense_time is not None else self.slot_duration / 10

    @property
    def airtime(self) -> float:
        return self.packet_size * 8 / self.data_rate

    @property
    def noise_mw(self) -> float:
        return dbm_to_mw(self.noise_floor)

    @property
    def steps_per_frame(self) -> int:
        return int(round(self.superframe_period / self.slot_duration))

    @property
    def n_frames(self) -> int:
        return int(math.floor(self.sim_duration / self.superframe_period + 1e-9))

    @property
    def coordinator_id(self) -> int:
        return self.n_sources + self.n_relays

    @property
    def source_ids(self) -> range:
        return range(self.n_sources)

    @property
    def relay_ids(self) -> range:
        return range(self.n_sources, self.n_sources + self.n_relays)

    def replace(self, **changes) -> "ScenarioConfig":
        raw = {f.name: getattr(self, f.name) for f in fields(self)}
        raw.update(changes)
        return validate_scenario(raw)


REQUIRED_FIELDS = (
    "n_sources", "n_relays", "channel_count", "sim_duration", "tx_power",
    "noise_floor", "data_rate", "packet_size", "pathloss_exponent",
)
KNOWN_FIELDS = tuple(f.name for f in fields(ScenarioConfig))
INT_FIELDS = frozenset(
    f.name for f in fields(ScenarioConfig) if f.type == "int"
)

BASELINE = {
    "n_sources": 12,
    "n_relays": 4,
    "channel_count": 8,
    "sim_duration": 2700.0,
    "tx_power": 0.0,
    "noise_floor": -100.0,
    "data_rate": 250_000.0,
    "packet_size": 12,
    "pathloss_exponent": 4.22,
}


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    return 10.0 * math.log10(mw) if mw > 0 else -math.inf


def _as_int(name, value):
    try:
        ok = not isinstance(value, bool) and float(value).is_integer()
    except (TypeError, ValueError):
        ok = False
    if not ok:
        raise InvalidValue(name, f"expected an integer, got {value!r}")
    return int(value)


def _as_float(name, value):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise InvalidValue(name, f"expected a number, got {value!r}") from None


def _matrix(value) -> tuple[tuple[float, ...], ...]:
    flat = list(np.asarray(value, dtype=float).ravel())
    if len(flat) != 9:
        raise InvalidValue("markov_matrix", "needs 9 numbers, row-major")
    rows = tuple(tuple(flat[3 * r:3 * r + 3]) for r in range(3))
    for r, row in enumerate(rows):
        if min(row) < 0 or abs(sum(row) - 1.0) > 1e-12:
            raise InvalidValue("markov_matrix", f"row {r + 1} is not stochastic")
    return rows


def _nodes(value, n_sources, n_relays):
    out = []
    for i, entry in enumerate(value):
        if isinstance(entry, Mapping):
            role, x, y = entry.get("role"), entry.get("x"), entry.get("y")
        else:
            role, x, y = entry
        if role not in {r.value for r in Role}:
            raise InvalidValue("nodes", f"entry {i} has unknown role {role!r}")
        out.append((role, _as_float("nodes", x), _as_float("nodes", y)))
    roles = [r for r, _, _ in out]
    if roles.count("coordinator") != 1:
        raise NoCoordinator("nodes", f"need exactly one coordinator, found {roles.count('coordinator')}")
    if roles.count("source") != n_sources or roles.count("relay") != n_relays:
        raise InvalidValue("nodes", "node roles do not match n_sources / n_relays")
    return tuple(out)


def validate_scenario(raw: Mapping[str, Any]) -> ScenarioConfig:
    """Check a raw mapping and build a ``ScenarioConfig``.

    Raises a ``ScenarioError`` subclass naming the first offending field.
    """
    for name in REQUIRED_FIELDS:
        if raw.get(name) is None:
            raise MissingField(name, "required field is missing")
    unknown = sorted(set(raw) - set(KNOWN_FIELDS))
    if unknown:
        raise InvalidValue(unknown[0], "unknown field")

    kw: dict[str, Any] = {}
    for f in fields(ScenarioConfig):
        if f.name not in raw or raw[f.name] is None:
            continue
        v = raw[f.name]
        if f.name == "scheme":
            try:
                kw["scheme"] = v if isinstance(v, Scheme) else Scheme(str(v).lower())
            except ValueError:
                raise InvalidValue("scheme", f"unknown scheme {v!r}") from None
        elif f.name == "markov_matrix":
            kw[f.name] = _matrix(v)
        elif f.name == "state_penalty":
            vals = tuple(_as_float(f.name, x) for x in v)
            if len(vals) != 3:
                raise InvalidValue(f.name, "needs one value per channel state")
            kw[f.name] = vals
        elif f.name == "nodes":
            kw[f.name] = v
        elif f.name in INT_FIELDS:
            kw[f.name] = _as_int(f.name, v)
        else:
            kw[f.name] = _as_float(f.name, v)

    for name in ("sim_duration", "slot_duration", "superframe_period", "data_rate"):
        if name in kw and kw[name] <= 0:
            raise NonPositiveDuration(name, f"must be > 0, got {kw[name]}")
    if kw.get("sense_time") is not None and kw["sense_time"] <= 0:
        raise NonPositiveDuration("sense_time", "must be > 0")
    if kw.get("switch_time", 0.0) < 0:
        raise NonPositiveDuration("switch_time", "must be >= 0")

    for name, lo in (("n_sources", 1), ("n_relays", 0), ("packet_size", 1),
                     ("beacon_slots", 1), ("cap_slots", 1), ("max_retries", 1),
                     ("k_history", 1), ("active_window", 1), ("p_min_slack", 1),
                     ("cw_min", 1), ("rng_seed", 0)):
        if name in kw and kw[name] < lo:
            raise InvalidValue(name, f"must be >= {lo}")
    if kw.get("p_max_slack", 8) < kw.get("p_min_slack", 1):
        raise InvalidValue("p_max_slack", "must be >= p_min_slack")
    if kw.get("cw_max", 64) < kw.get("cw_min", 8):
        raise InvalidValue("cw_max", "must be >= cw_min")
    if kw["pathloss_exponent"] <= 0:
        raise InvalidValue("pathloss_exponent", "must be > 0")
    if kw["channel_count"] < 2:
        # one shared base channel plus at least one channel for the slot owner
        raise ChannelCountTooSmall(
            "channel_count",
            f"{kw['channel_count']} channel(s) cannot serve {kw['n_sources']} sources "
            "with a base channel and a separate stable channel")
    scheme = kw.get("scheme", Scheme.CFTIM)
    if scheme is not Scheme.TDMA and kw["n_relays"] < 1:
        raise InvalidValue("n_relays", "relay schemes need at least one relay")
    if not 0.0 <= kw.get("stability_threshold", 0.9) <= 1.0:
        raise InvalidValue("stability_threshold", "must be a probability")
    if kw.get("nodes") is not None:
        kw["nodes"] = _nodes(kw["nodes"], kw["n_sources"], kw["n_relays"])

    cfg = ScenarioConfig(**kw)

    if cfg.airtime > cfg.slot_duration:
        raise InvalidValue("slot_duration", "a packet does not fit in one slot")
    ratio = cfg.superframe_period / cfg.slot_duration
    if abs(ratio - round(ratio)) > 1e-6:
        raise InvalidValue("superframe_period", "must be a whole number of slots")
    if max_active_slots(cfg) > cfg.steps_per_frame:
        raise InvalidValue("superframe_period", "too short for the longest active part")
    return cfg


def max_active_slots(cfg: ScenarioConfig) -> int:
    if cfg.scheme is Scheme.TDMA:
        return cfg.beacon_slots + cfg.n_sources
    if cfg.scheme is Scheme.OR:
        return cfg.beacon_slots + 2 * cfg.cap_slots
    return cfg.beacon_slots + cfg.cap_slots + cfg.n_sources + cfg.n_relays + cfg.p_max_slack


def baseline_config(**overrides) -> ScenarioConfig:
    raw = dict(BASELINE)
    raw.update(overrides)
    return validate_scenario(raw)


def place_nodes(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[Node, ...]:
    """Sources then relays then the coordinator, ids dense from 0.

    Random placement is uniform over an ``area`` x ``area`` square with the
    coordinator at its centre; positions closer than the reference distance to
    an already placed node are redrawn.
    """
    if cfg.nodes is not None:
        by_role = {r: [(x, y) for role, x, y in cfg.nodes if role == r.value] for r in Role}
        positions = by_role[Role.SOURCE] + by_role[Role.RELAY] + by_role[Role.COORDINATOR]
    else:
        centre = (cfg.area / 2, cfg.area / 2)
        positions = [centre]
        while len(positions) < cfg.n_sources + cfg.n_relays + 1:
            x, y = rng.uniform(0.0, cfg.area, size=2)
            if all(math.hypot(x - px, y - py) >= cfg.reference_distance for px, py in positions):
                positions.append((float(x), float(y)))
        positions = positions[1:] + positions[:1]

    nodes = []
    for i, pos in enumerate(positions):
        if i < cfg.n_sources:
            role = Role.SOURCE
        elif i < cfg.n_sources + cfg.n_relays:
            role = Role.RELAY
        else:
            role = Role.COORDINATOR
        nodes.append(Node(i, role, (float(pos[0]), float(pos[1])), cfg.tx_power, cfg.initial_energy))
    return tuple(nodes)


def active_nodes(history: Mapping[int, Iterable[int]], frame: int, window: int = 3) -> set[int]:
    """Ids the coordinator heard from in any of the ``window`` frames before ``frame``."""
    active: set[int] = set()
    for f in range(frame - window, frame):
        active.update(history.get(f, ()))
    return active
