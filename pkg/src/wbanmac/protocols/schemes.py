"""Superframe simulators for CFTIM and the two baselines.

All three share the beacon / contention / slot timeline, the channel bank,
packet generation (one packet per source per superframe) and the energy
ledger, so their outputs are directly comparable for a shared seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


from ..channel import ChannelBank, LinkBudget, pathloss_db, to_db
from ..engine import Engine, Event, EventKind, substream
from ..errors import EnergyExhausted, NoStableChannel
from ..metrics import Activity, EnergyLedger, MetricsFrame, outage_estimate
from ..model import Beacon, Packet, ScenarioConfig, Scheme, dbm_to_mw, place_nodes
from .csma import cap_phase, collision_groups, next_cw, resolve_contention
from .ftdma import (
    CoordinatorState,
    RelayState,
    SourceState,
    apply_free_slot_outcome,
    coordinator_frame_end,
    deliver,
    ftdma_node_step,
    select_best_relay,
)

BASE_CHANNEL = 0


@dataclass
class RunResult:
    cfg: ScenarioConfig
    seed: int
    frames: list[MetricsFrame]
    deliveries: list[float]
    packets: list[Packet]
    ledger: EnergyLedger
    trace: list[tuple] = field(default_factory=list)
    no_stable_channel: int = 0
    aggregates: list[float] = field(default_factory=list)  # per-frame sum of interfering SINRs

    @property
    def threshold(self) -> float:
        return 10.0 ** (self.cfg.sinr_threshold / 10.0)

    @property
    def scheme(self) -> Scheme:
        return self.cfg.scheme

    def mean_throughput(self) -> float:
        if not self.frames:
            return 0.0
        return len(self.deliveries) / self.frames[-1].time

    def outage(self) -> float:
        return outage_estimate(self.aggregates, self.threshold) if self.aggregates else 0.0

    def final_energy(self) -> float:
        return self.frames[-1].cumulative_energy_j if self.frames else 0.0

    def final_running_sinr(self) -> float:
        return self.frames[-1].running_mean_sinr_db if self.frames else math.nan


class SuperframeSim:
    """Shared machinery; subclasses lay out the active part of each frame."""

    scheme: Scheme

    def __init__(self, cfg: ScenarioConfig, seed: int | None = None, record_trace: bool = False):
        if cfg.scheme is not self.scheme:
            cfg = cfg.replace(scheme=self.scheme)
        self.cfg = cfg
        self.seed = cfg.rng_seed if seed is None else int(seed)
        self.rng_backoff = substream(self.seed, "backoff")
        self.rng_slot = substream(self.seed, "slot-choice")
        self.nodes = place_nodes(cfg, substream(self.seed, "placement"))
        self.coord = cfg.coordinator_id
        self.sources = list(cfg.source_ids)
        self.relays = list(cfg.relay_ids) if self.scheme is not Scheme.TDMA else []
        self.members = self.sources + self.relays + [self.coord]

        n = len(self.nodes)
        self.gain = [[0.0] * n for _ in range(n)]
        for a in self.nodes:
            for b in self.nodes:
                if a.id != b.id:
                    budget = LinkBudget(a.tx_power, a.distance_to(b), cfg.pathloss_exponent,
                                        cfg.reference_distance, cfg.reference_loss)
                    self.gain[a.id][b.id] = dbm_to_mw(a.tx_power - pathloss_db(budget))
        self.penalty = [10.0 ** (-p / 10.0) for p in cfg.state_penalty]
        self.noise = cfg.noise_mw
        self.thr_db = cfg.sinr_threshold
        self.thr = 10.0 ** (cfg.sinr_threshold / 10.0)
        self.T = cfg.slot_duration
        self.airtime = cfg.airtime
        self.capacity = max(1, int(self.T / self.airtime + 1e-9))

        self.bank = ChannelBank(cfg.channel_count, cfg.markov_matrix, self.T,
                                substream(self.seed, "channel"))
        self.ledger = EnergyLedger(
            self.members,
            {Activity.TX: cfg.tx_mw, Activity.RX: cfg.rx_mw, Activity.SENSE: cfg.sense_mw,
             Activity.IDLE: cfg.idle_mw, Activity.SWITCH: cfg.switch_mw},
            cfg.initial_energy)
        self.busy = {m: 0.0 for m in self.members}

        self.src = {s: SourceState(s, cw=cfg.cw_min) for s in self.sources}
        self.rel = {r: RelayState(r, cw=cfg.cw_min) for r in self.relays}
        if self.relays:
            rx = lambda a, b: self.gain[a][b]
            for s in self.sources:
                self.src[s].best_relay = select_best_relay(s, self.relays, rx)
            for r in self.relays:
                self.rel[r].is_best_for = frozenset(s for s in self.sources if self.src[s].best_relay == r)

        self.engine = Engine(record_trace)
        self.record = record_trace
        h = self.engine.handlers
        h[EventKind.BEACON_START] = self._on_beacon
        h[EventKind.CAP_START] = self._on_cap
        h[EventKind.SLOT_START] = self._on_slot
        h[EventKind.TX_ATTEMPT] = self._on_tx_attempt
        h[EventKind.TX_END] = self._on_tx_end
        h[EventKind.CHANNEL_STEP] = self._on_channel_step
        h[EventKind.FRAME_END] = self._on_frame_end

        self.frames: list[MetricsFrame] = []
        self.deliveries: list[float] = []
        self.packets: list[Packet] = []
        self.no_stable_channel = 0
        self.aggregates: list[float] = []
        self._sinr_sum = 0.0
        self._sinr_frames = 0
        self._reset_frame()
        self.engine.queue.schedule(0.0, EventKind.BEACON_START, 0)

    # -- bookkeeping -------------------------------------------------------

    def _reset_frame(self):
        self.samples: list[float] = []
        self.delivered = 0
        self.collisions = 0

    def charge(self, node: int, activity: Activity, duration: float) -> None:
        if duration <= 0:
            return
        self.busy[node] += duration
        try:
            self.ledger.record(node, activity, duration)
        except EnergyExhausted:
            pass

    def alive(self, node: int) -> bool:
        return node not in self.ledger.dead

    def tune(self, state, channel: int) -> None:
        if state.channel != channel:
            self.charge(state.node, Activity.SWITCH, self.cfg.switch_time)
            state.channel = channel

    def rx_mw(self, tx: int, rx: int, channel: int = BASE_CHANNEL) -> float:
        return self.gain[tx][rx] * self.penalty[self.bank.states[channel] - 1]

    def _deliver(self, packets, t: float, hops: int) -> None:
        deliver(packets, t, hops)
        self.packets.extend(packets)
        self.deliveries.extend([t] * len(packets))
        self.delivered += len(packets)

    # -- frame skeleton ----------------------------------------------------

    def layout(self, frame: int) -> int:
        """Schedule this frame's phase events; return active slot count."""
        raise NotImplementedError

    def _on_beacon(self, ev: Event):
        frame = ev.payload
        self.engine.clock.frame_index = frame
        self.frame_start = ev.time
        self._reset_frame()
        for s in self.sources:
            if self.alive(s):
                self.src[s].queue.append(Packet(s, self.cfg.packet_size, ev.time))
        self.charge(self.coord, Activity.TX, self.airtime)
        for m in self.members:
            if m != self.coord:
                self.charge(m, Activity.RX, self.airtime)
        q = self.engine.queue
        # the channel steps at every boundary go in first so that phase
        # events at the same instant see the stepped state
        total = self.active_slots(frame)
        for i in range(1, total + 1):
            q.schedule(ev.time + i * self.T, EventKind.CHANNEL_STEP, 1)
        self.layout(frame)
        q.schedule(ev.time + total * self.T, EventKind.FRAME_END, frame)
        if self.record:
            return self.beacon_record(frame)

    def beacon_record(self, frame):
        return {"frame": frame}

    def _on_channel_step(self, ev: Event):
        self.bank.step(ev.payload)
        if self.record:
            return {"states": list(self.bank.states)}

    def _on_frame_end(self, ev: Event):
        frame = ev.payload
        cfg = self.cfg
        gap = cfg.steps_per_frame - self.active_slots(frame)
        for m in self.members:
            idle = cfg.superframe_period - self.busy[m]
            self.charge(m, Activity.IDLE, max(idle, 0.0))
            self.busy[m] = 0.0
        rec = self.frame_end(frame)

        samples = self.samples
        if samples:
            avg = math.fsum(10.0 * math.log10(d) for d in samples) / len(samples)
            self._sinr_sum += avg
            self._sinr_frames += 1
        else:
            avg = math.nan
        running = self._sinr_sum / self._sinr_frames if self._sinr_frames else math.nan
        interfering = [d for d in samples if d < self.thr]
        eq6 = math.fsum(d * (1.0 - d / self.thr) for d in interfering)
        aggregate = math.fsum(interfering)
        self.aggregates.append(aggregate)
        outage = aggregate > self.thr
        self.frames.append(MetricsFrame(
            frame, self.frame_start + cfg.superframe_period, avg, running, eq6,
            self.ledger.total(), self.delivered, self.collisions, outage))

        self.bank.step(gap)
        if frame + 1 < cfg.n_frames:
            self.engine.queue.schedule((frame + 1) * cfg.superframe_period,
                                       EventKind.BEACON_START, frame + 1)
        if self.record:
            out = {"frame": frame, "delivered": self.delivered, "collisions": self.collisions,
                   "gap_steps": gap, "states": list(self.bank.states)}
            if rec:
                out.update(rec)
            return out

    def frame_end(self, frame: int):
        return None

    def active_slots(self, frame: int) -> int:
        raise NotImplementedError

    # -- contention helpers ------------------------------------------------

    def contention(self, nodes, receivers, airtime_slots, start, n_bslots):
        bs = self.cfg.tau_s
        cw = {n: (self.src[n] if n in self.src else self.rel[n]).cw for n in nodes}
        backoffs = {n: int(self.rng_backoff.integers(cw[n])) for n in nodes}
        return resolve_contention(backoffs, receivers, self.rx_mw, self.noise, bs, n_bslots,
                                  airtime_slots, start)

    def book_contention(self, outcomes, listeners, start, duration, phase):
        """Energy, SINR samples, CW updates and tx events for one contention period."""
        for lst in listeners:
            self.charge(lst, Activity.RX, duration)
        q = self.engine.queue
        for n, o in outcomes.items():
            state = self.src[n] if n in self.src else self.rel[n]
            self.charge(n, Activity.SENSE, o.sensed)
            if o.transmitted:
                self.charge(n, Activity.TX, o.end - o.start)
                self.samples.append(o.sinr)
                ok = o.delivered(self.thr_db)
                state.cw = next_cw(state.cw, ok, self.cfg.cw_min, self.cfg.cw_max)
                q.schedule(o.start, EventKind.TX_ATTEMPT, (phase, n, o.receiver))
                q.schedule(o.end, EventKind.TX_END, (phase, n, ok))
        self.collisions += collision_groups(outcomes)

    def _on_tx_attempt(self, ev: Event):
        if self.record:
            phase, node, receiver = ev.payload
            return {"phase": phase, "node": node, "to": receiver}

    def relay_take(self, r: int):
        buf = self.rel[r].buffer
        return [buf[i] for i in range(min(len(buf), self.capacity))]

    def relay_release(self, r: int, count: int, t: float):
        buf = self.rel[r].buffer
        pkts = [buf.popleft() for _ in range(count)]
        for p in pkts:
            self.src[p.origin].in_relay = False
        self._deliver(pkts, t, 2)

    def source_to_relay(self, s: int):
        st = self.src[s]
        pkt = st.queue.popleft()
        pkt.hops = 1
        st.in_relay = True
        self.rel[st.best_relay].buffer.append(pkt)

    def cap_contenders(self):
        return [s for s in self.sources
                if self.alive(s) and self.src[s].queue and not self.src[s].in_relay]

    def run(self, t_end: float | None = None) -> RunResult:
        end = self.cfg.sim_duration if t_end is None else min(t_end, self.cfg.sim_duration)
        trace = self.engine.run_until(end)
        return RunResult(self.cfg, self.seed, self.frames, self.deliveries, self.packets,
                         self.ledger, trace, self.no_stable_channel, self.aggregates)

    run_until = run


class CftimSim(SuperframeSim):
    """Sources contend for their best relay in the CAP; high-interfering
    sources and loaded relays then use the flexible TDMA part on a stable
    channel."""

    scheme = Scheme.CFTIM

    def __init__(self, cfg, seed=None, record_trace=False):
        super().__init__(cfg, seed, record_trace)
        self.coordinator = CoordinatorState(cfg.active_window, cfg.k_history,
                                            cfg.p_min_slack, cfg.p_max_slack)
        self.beacon = Beacon(0, {}, cfg.p_min_slack)
        self.rng_scan = substream(self.seed, "scan")

    def active_slots(self, frame):
        return self.cfg.beacon_slots + self.cfg.cap_slots + self.beacon.p

    def beacon_record(self, frame):
        b = self.beacon
        return {"frame": frame, "m": b.m, "p": b.p,
                "slots": [[n, s] for n, s in sorted(b.node_slot_list.items())]}

    def layout(self, frame):
        cfg, q, t0 = self.cfg, self.engine.queue, self.frame_start
        q.schedule(t0 + cfg.beacon_slots * self.T, EventKind.CAP_START, "source")
        self.tdma_start = t0 + (cfg.beacon_slots + cfg.cap_slots) * self.T
        for k in range(self.beacon.p):
            q.schedule(self.tdma_start + k * self.T, EventKind.SLOT_START, k)
        self.plan = None
        self.received: dict[int, int] = {}
        self.ts: list[int] = []
        self.is_: list[int] = []

    def _on_cap(self, ev: Event):
        cfg = self.cfg
        for s in self.sources:
            self.tune(self.src[s], BASE_CHANNEL)
        for r in self.relays:
            self.tune(self.rel[r], BASE_CHANNEL)
        contenders = self.cap_contenders()
        best = {s: self.src[s].best_relay for s in self.sources}
        cap = cfg.cap_slots * self.T
        outcomes = cap_phase(contenders, {s: self.src[s].cw for s in contenders}, best,
                             self.rx_mw, self.noise, cfg.tau_s, cap, self.airtime,
                             self.rng_backoff, ev.time)
        listeners = [r for r in self.relays if self.alive(r)]
        self.book_contention(outcomes, listeners, ev.time, cap, "cap")
        for s, o in outcomes.items():
            cls = o.classification(self.thr_db)
            self.src[s].classification = cls
            (self.ts if cls.value == "TS" else self.is_).append(s)
        if self.record:
            return {"phase": "cap", "ts": list(self.ts), "is": list(self.is_),
                    "deferred": [s for s, o in outcomes.items() if not o.transmitted]}

    def _on_tx_end(self, ev: Event):
        phase, node, ok = ev.payload
        if phase == "cap":
            if ok:
                self.source_to_relay(node)
        else:
            self.slot_end(node, ok, ev.time, phase)
            ok = ok[0]
        if self.record:
            return {"phase": phase, "node": node, "ok": ok}

    def _plan_tdma(self):
        cfg = self.cfg
        channels = self.bank.snapshot()
        candidates = [s for s in self.is_ if self.alive(s) and self.src[s].queue]
        candidates += [r for r in self.relays if self.alive(r) and self.rel[r].buffer]
        plan: dict[int, list] = {}
        skipped = []
        for n in sorted(candidates):
            state = self.src[n] if n in self.src else self.rel[n]
            try:
                d = ftdma_node_step(state, self.beacon, channels, self.T, self.airtime,
                                    cfg.tau_s, cfg.stability_threshold, self.rng_slot)
            except NoStableChannel as err:
                self.no_stable_channel += 1
                self.charge(n, Activity.SENSE, err.scans * cfg.tau_s)
                skipped.append(n)
                continue
            if d is None:
                skipped.append(n)
                continue
            self.charge(n, Activity.SENSE, d.scans * cfg.tau_s)
            self.tune(state, d.channel)
            plan.setdefault(d.slot, []).append(d)
        self.plan = plan
        self.plan_skipped = skipped

    def _on_slot(self, ev: Event):
        k = ev.payload
        if self.plan is None:
            self._plan_tdma()
        self.charge(self.coord, Activity.RX, self.T)
        decisions = self.plan.get(k, [])
        owner = next((n for n, s in self.beacon.node_slot_list.items() if s == k), None)
        rec = None
        if decisions:
            if len(decisions) > 1:
                self.collisions += 1
            powers = {d.node: self.rx_mw(d.node, self.coord, d.channel) for d in decisions}
            q = self.engine.queue
            for d in decisions:
                others = [p for n, p in powers.items() if n != d.node]
                value = powers[d.node] / (math.fsum(others) + self.noise)
                self.samples.append(value)
                ok = len(decisions) == 1 and to_db(value) >= self.thr_db
                count = 1 if d.node in self.src else len(self.relay_take(d.node))
                self.charge(d.node, Activity.TX, count * self.airtime)
                q.schedule(ev.time + count * self.airtime, EventKind.TX_END,
                           ("free" if not d.dedicated else "slot", d.node, (ok, count, d.channel)))
            if self.record:
                rec = {"slot": k, "owner": owner, "free": owner is None,
                       "tx": [[d.node, d.channel, d.dedicated] for d in decisions]}
        elif self.record:
            rec = {"slot": k, "owner": owner, "free": owner is None, "tx": []}
        return rec

    def slot_end(self, node, payload, t, phase):
        ok, count, channel = payload
        state = self.src[node] if node in self.src else self.rel[node]
        if ok:
            self.received[node] = channel
            if node in self.src:
                self._deliver([state.queue.popleft()], t, 1)
            else:
                self.relay_release(node, count, t)
        if phase == "free":
            apply_free_slot_outcome(state, ok, self.cfg.max_retries)
        elif ok:
            state.retry_counter = 0

    def frame_end(self, frame):
        free_collisions = sum(1 for k, ds in (self.plan or {}).items() if len(ds) > 1)
        self.beacon = coordinator_frame_end(self.coordinator, frame, self.received, free_collisions)
        if self.record:
            return {"received": sorted(self.received), "free_collisions": free_collisions,
                    "next_m": self.beacon.m, "next_p": self.beacon.p,
                    "next_slots": [[n, s] for n, s in sorted(self.beacon.node_slot_list.items())]}


class OrSim(SuperframeSim):
    """Two-hop opportunistic relaying with contention on both hops."""

    scheme = Scheme.OR

    def active_slots(self, frame):
        return self.cfg.beacon_slots + 2 * self.cfg.cap_slots

    def layout(self, frame):
        cfg, q, t0 = self.cfg, self.engine.queue, self.frame_start
        q.schedule(t0 + cfg.beacon_slots * self.T, EventKind.CAP_START, "source")
        q.schedule(t0 + (cfg.beacon_slots + cfg.cap_slots) * self.T, EventKind.CAP_START, "relay")

    def _on_cap(self, ev: Event):
        cfg = self.cfg
        cap = cfg.cap_slots * self.T
        n_bslots = int(round(cap / cfg.tau_s))
        if ev.payload == "source":
            contenders = self.cap_contenders()
            a = math.ceil(self.airtime / cfg.tau_s - 1e-9)
            outcomes = self.contention(contenders, {s: self.src[s].best_relay for s in contenders},
                                       {s: a for s in contenders}, ev.time, n_bslots)
            self.book_contention(outcomes, [r for r in self.relays if self.alive(r)],
                                 ev.time, cap, "cap")
        else:
            contenders = [r for r in self.relays if self.alive(r) and self.rel[r].buffer]
            self.load = {r: len(self.relay_take(r)) for r in contenders}
            air = {r: math.ceil(self.load[r] * self.airtime / cfg.tau_s - 1e-9) for r in contenders}
            outcomes = self.contention(contenders, {r: self.coord for r in contenders}, air,
                                       ev.time, n_bslots)
            self.book_contention(outcomes, [self.coord], ev.time, cap, "relay")
        if self.record:
            return {"phase": ev.payload,
                    "tx": [[n, o.start is not None, bool(o.transmitted and o.delivered(self.thr_db))]
                           for n, o in outcomes.items()]}

    def _on_tx_end(self, ev: Event):
        phase, node, ok = ev.payload
        if ok:
            if phase == "cap":
                self.source_to_relay(node)
            else:
                self.relay_release(node, self.load[node], ev.time)
        if self.record:
            return {"phase": phase, "node": node, "ok": ok}

    def _on_slot(self, ev):
        raise AssertionError("OR frames have no TDMA slots")


class TdmaSim(SuperframeSim):
    """Fixed single-hop TDMA: one slot per source every frame, base channel, no relays."""

    scheme = Scheme.TDMA

    def active_slots(self, frame):
        return self.cfg.beacon_slots + self.cfg.n_sources

    def layout(self, frame):
        t = self.frame_start + self.cfg.beacon_slots * self.T
        for k in range(self.cfg.n_sources):
            self.engine.queue.schedule(t + k * self.T, EventKind.SLOT_START, k)

    def _on_slot(self, ev):
        s = self.sources[ev.payload]
        self.charge(self.coord, Activity.RX, self.T)
        st = self.src[s]
        if not (self.alive(s) and st.queue):
            return {"slot": ev.payload, "tx": []} if self.record else None
        value = self.rx_mw(s, self.coord) / self.noise
        self.samples.append(value)
        ok = to_db(value) >= self.thr_db
        self.charge(s, Activity.TX, self.airtime)
        self.engine.queue.schedule(ev.time + self.airtime, EventKind.TX_END, (s, ok))
        if self.record:
            return {"slot": ev.payload, "tx": [s], "ok": ok}

    def _on_tx_end(self, ev):
        s, ok = ev.payload
        if ok:
            self._deliver([self.src[s].queue.popleft()], ev.time, 1)
        if self.record:
            return {"node": s, "ok": ok}

    def _on_cap(self, ev):
        raise AssertionError("TDMA frames have no contention period")


SIMULATORS = {Scheme.CFTIM: CftimSim, Scheme.OR: OrSim, Scheme.TDMA: TdmaSim}


def simulate(cfg: ScenarioConfig, seed: int | None = None, record_trace: bool = False,
             t_end: float | None = None) -> RunResult:
    return SIMULATORS[cfg.scheme](cfg, seed, record_trace).run(t_end)


def run_cftim(cfg, seed=None, record_trace=False):
    return CftimSim(cfg, seed, record_trace).run()


def run_or_baseline(cfg, seed=None, record_trace=False):
    return OrSim(cfg, seed, record_trace).run()


def run_tdma_baseline(cfg, seed=None, record_trace=False):
    return TdmaSim(cfg, seed, record_trace).run()
