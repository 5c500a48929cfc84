import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wbanmac import baseline_config, simulate
from wbanmac.channel import Classification, MarkovChannel
from wbanmac.engine import substream
from wbanmac.errors import NoStableChannel
from wbanmac.model import DEFAULT_MARKOV, Beacon, place_nodes
from wbanmac.protocols import (
    CoordinatorState,
    SourceState,
    apply_free_slot_outcome,
    cap_phase,
    coordinator_frame_end,
    ftdma_node_step,
    next_cw,
    predict_p,
    resolve_contention,
    select_best_relay,
)

from .conftest import ALWAYS_GOOD

T, T_DATA, TAU = 0.002, 384e-6, 0.0002
NOISE = 1e-10


def link_gain(a, b, alpha=4.22):
    d = math.dist(a.position, b.position)
    return 10 ** (-(35.0 + 10 * alpha * math.log10(d / 0.1)) / 10)


# -- best relay -----------------------------------------------------------------

def test_single_relay():
    assert select_best_relay(0, [7], lambda s, r: 1.0) == 7


def test_nearer_relay_wins():
    pos = {0: (0.0, 0.0), 1: (0.2, 0.0), 2: (1.0, 0.0)}
    rx = lambda s, r: 10 ** (-(35 + 42.2 * math.log10(math.dist(pos[s], pos[r]) / 0.1)) / 10)
    assert select_best_relay(0, [2, 1], rx) == 1


def test_ties_go_to_lowest_id():
    assert select_best_relay(0, [9, 4, 6], lambda s, r: 1.0) == 4


@pytest.mark.parametrize("seed", range(10))
def test_best_relay_matches_exhaustive_argmax(seed):
    cfg = baseline_config()
    nodes = place_nodes(cfg, np.random.default_rng(seed))
    relays = list(cfg.relay_ids)
    rx = lambda s, r: link_gain(nodes[s], nodes[r])
    for s in cfg.source_ids:
        best, best_p = None, -1.0
        for r in relays:
            p = rx(s, r)
            if p > best_p:
                best, best_p = r, p
        assert select_best_relay(s, relays, rx) == best


def test_best_relay_needs_relays():
    with pytest.raises(ValueError):
        select_best_relay(0, [], lambda s, r: 1.0)


# -- contention -----------------------------------------------------------------

def test_single_source_no_contention():
    out = cap_phase([0], {0: 8}, {0: 5}, lambda a, b: 1e-6, NOISE, TAU, 4 * T, T_DATA,
                    np.random.default_rng(0))
    o = out[0]
    assert o.transmitted and o.delivered(7.0)
    assert o.classification(7.0) is Classification.NON_INTERFERING
    assert o.group_size == 1


def test_forced_same_slot_collision():
    out = resolve_contention({0: 3, 1: 3}, {0: 5, 1: 6}, lambda a, b: 1e-6, NOISE, TAU, 40,
                             {0: 2, 1: 2})
    for o in out.values():
        assert o.transmitted and o.group_size == 2
        assert 10 * math.log10(o.sinr) < 7.0
        assert not o.delivered(7.0)
        assert o.classification(7.0) is Classification.HIGH_INTERFERING


def test_node_that_cannot_finish_defers():
    out = resolve_contention({0: 39}, {0: 5}, lambda a, b: 1e-6, NOISE, TAU, 40, {0: 2})
    assert not out[0].transmitted
    assert out[0].sensed == pytest.approx(40 * TAU)
    assert out[0].classification(7.0) is Classification.HIGH_INTERFERING


def replay_cap(backoffs, airtime, n_slots):
    """Walk the contention period one backoff slot at a time."""
    counters = dict(backoffs)
    start, deferred = {}, set()
    busy_until = 0
    for t in range(n_slots):
        if t < busy_until:
            continue  # medium busy: counters frozen
        ready = sorted(n for n, c in counters.items() if c == 0)
        fits = [n for n in ready if t + airtime <= n_slots]
        for n in ready:
            del counters[n]
            if n in fits:
                start[n] = t
            else:
                deferred.add(n)
        if fits:
            busy_until = t + airtime
            continue
        for n in counters:
            counters[n] -= 1
    return start, deferred | set(counters)


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("cw", [8, 16, 64])
def test_cap_matches_slot_by_slot_replay(seed, cw):
    cfg = baseline_config()
    nodes = place_nodes(cfg, np.random.default_rng(seed))
    sources = list(cfg.source_ids)
    relays = list(cfg.relay_ids)
    gain = lambda a, b: link_gain(nodes[a], nodes[b])
    best = {s: max(relays, key=lambda r: (gain(s, r), -r)) for s in sources}
    out = cap_phase(sources, {s: cw for s in sources}, best, gain, NOISE, TAU, 4 * T, T_DATA,
                    np.random.default_rng(100 + seed))

    draws = np.random.default_rng(100 + seed)
    backoffs = {s: int(draws.integers(cw)) for s in sources}
    start, deferred = replay_cap(backoffs, 2, 40)
    ts, is_ = set(), set(deferred)
    for s, t in start.items():
        together = [o for o, u in start.items() if u == t and o != s]
        value = gain(s, best[s]) / (sum(gain(o, best[s]) for o in together) + NOISE)
        assert out[s].sinr == pytest.approx(value, rel=1e-12)
        assert out[s].start == pytest.approx(t * TAU)
        (ts if 10 * math.log10(value) >= 7.0 else is_).add(s)
    got_ts = {s for s, o in out.items() if o.classification(7.0) is Classification.NON_INTERFERING}
    assert got_ts == ts
    assert set(out) - got_ts == is_
    assert {s for s, o in out.items() if not o.transmitted} == deferred


@given(st.dictionaries(st.integers(0, 11), st.integers(0, 63), min_size=1, max_size=12),
       st.integers(1, 4), st.integers(10, 60))
def test_contention_outcomes_consistent(backoffs, air, n_slots):
    out = resolve_contention(backoffs, {n: 20 for n in backoffs}, lambda a, b: 1e-6, NOISE, TAU,
                             n_slots, {n: air for n in backoffs})
    start, deferred = replay_cap(backoffs, air, n_slots)
    assert set(out) == set(backoffs)
    assert {n for n, o in out.items() if o.transmitted} == set(start)
    for n, t in start.items():
        assert out[n].start == pytest.approx(t * TAU)
        assert t + air <= n_slots
    # transmissions from different start slots never overlap
    spans = sorted({(o.start, o.end) for o in out.values() if o.transmitted})
    for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
        assert e1 <= s2 + 1e-15


def test_contention_window_doubles_and_resets():
    assert next_cw(8, False, 8, 64) == 16
    assert next_cw(64, False, 8, 64) == 64
    assert next_cw(32, True, 8, 64) == 8


# -- flexible TDMA node ------------------------------------------------------------

def good_channels(n=8):
    return [MarkovChannel(i, 3, DEFAULT_MARKOV, T) for i in range(n)]


def test_assigned_slot_used_without_draw():
    rng = np.random.default_rng(3)
    d = ftdma_node_step(SourceState(5), Beacon(1, {1: 0, 9: 1, 5: 2}, 1), good_channels(),
                        T, T_DATA, TAU, 0.9, rng)
    assert (d.slot, d.dedicated) == (2, True)
    ref = np.random.default_rng(3)
    first = int(ref.permutation(8)[0])
    assert d.channel == first and d.scans == 1
    # the generator advanced by exactly one scan order, no slot draw
    assert rng.random() == ref.random()


def test_sole_free_slot_claimant_gets_dedicated_slot_next():
    state = SourceState(4)
    beacon = Beacon(0, {}, 3)
    d = ftdma_node_step(state, beacon, good_channels(), T, T_DATA, TAU, 0.9, np.random.default_rng(1))
    assert not d.dedicated and d.slot in beacon.free_slots
    coord = CoordinatorState()
    nxt = coordinator_frame_end(coord, 0, {4: d.channel}, 0)
    assert nxt.node_slot_list == {4: 0}
    assert nxt.stable_channel_assignments == {4: d.channel}


def test_two_claimants_one_free_slot_collide():
    beacon = Beacon(0, {7: 0}, 1)
    a = ftdma_node_step(SourceState(1), beacon, good_channels(), T, T_DATA, TAU, 0.9, np.random.default_rng(1))
    b = ftdma_node_step(SourceState(2), beacon, good_channels(), T, T_DATA, TAU, 0.9, np.random.default_rng(2))
    assert a.slot == b.slot == 1
    coord = CoordinatorState()
    nxt = coordinator_frame_end(coord, 0, {7: 0}, collisions=1)
    assert 1 not in nxt.node_slot_list and 2 not in nxt.node_slot_list
    sa, sb = SourceState(1), SourceState(2)
    for s in (sa, sb):
        apply_free_slot_outcome(s, False, 3)
        assert s.retry_counter == 1 and not s.waiting


def test_waiting_node_sits_out_one_frame():
    s = SourceState(3, waiting=True)
    assert ftdma_node_step(s, Beacon(0, {}, 2), good_channels(), T, T_DATA, TAU, 0.9,
                           np.random.default_rng(0)) is None
    assert not s.waiting
    assert ftdma_node_step(s, Beacon(1, {}, 2), good_channels(), T, T_DATA, TAU, 0.9,
                           np.random.default_rng(0)) is not None


def test_no_stable_channel_propagates():
    bad = [MarkovChannel(i, 1, DEFAULT_MARKOV, T) for i in range(8)]
    with pytest.raises(NoStableChannel):
        ftdma_node_step(SourceState(3), Beacon(0, {}, 2), bad, T, T_DATA, TAU, 0.9,
                        np.random.default_rng(0))


@given(st.lists(st.booleans(), max_size=50), st.integers(1, 6))
def test_retry_counter_bounded(outcomes, max_retries):
    s = SourceState(0)
    failures = 0
    for ok in outcomes:
        apply_free_slot_outcome(s, ok, max_retries)
        failures = 0 if ok else failures + 1
        assert 0 <= s.retry_counter < max_retries
        if ok:
            assert s.retry_counter == 0
        elif failures % max_retries == 0:
            assert s.waiting and s.retry_counter == 0


# -- coordinator ------------------------------------------------------------------

def test_predict_p_floor():
    assert predict_p([0, 0, 0, 0], 5, 1) == 6


def test_predict_p_two_collisions():
    assert predict_p([2, 2, 2, 2], 5, 1) == 8


def test_predict_p_clamped():
    assert predict_p([50] * 4, 5, 1, 8) == 13


@given(st.lists(st.integers(0, 20), min_size=1, max_size=10), st.integers(0, 30),
       st.integers(1, 4), st.integers(0, 8))
def test_predict_p_exceeds_m(collisions, m, lo, extra):
    p = predict_p(collisions, m, lo, lo + extra)
    assert m + lo <= p <= m + lo + extra


def test_frame_end_three_successes():
    coord = CoordinatorState()
    b = coordinator_frame_end(coord, 0, {3: 1, 8: 2, 5: 4}, collisions=1)
    assert b.m == 3 and b.p == 5 and b.free_slot_count == 2
    assert b.node_slot_list == {3: 0, 5: 1, 8: 2}


def test_frame_end_no_successes():
    b = coordinator_frame_end(CoordinatorState(), 0, {}, 0)
    assert b.m == 0 and b.p >= 1 and b.node_slot_list == {}


def test_repeat_success_keeps_slot():
    coord = CoordinatorState()
    b1 = coordinator_frame_end(coord, 0, {"a": 0}, 0)
    b2 = coordinator_frame_end(coord, 1, {"a": 0, "b": 3}, 0)
    assert "a" in b1.node_slot_list and "a" in b2.node_slot_list and "b" in b2.node_slot_list


def test_active_window_expires():
    coord = CoordinatorState()
    coordinator_frame_end(coord, 0, {1: 0}, 0)
    for f in (1, 2):
        assert 1 in coordinator_frame_end(coord, f, {}, 0).node_slot_list
    assert 1 not in coordinator_frame_end(coord, 3, {}, 0).node_slot_list


# -- whole-scheme behaviour ------------------------------------------------------

def test_or_single_source_two_hops_every_frame():
    cfg = baseline_config(scheme="or", n_sources=1, n_relays=1, markov_matrix=ALWAYS_GOOD,
                          sim_duration=30.0)
    res = simulate(cfg, seed=4)
    assert [f.delivered_count for f in res.frames] == [1] * 30
    assert all(p.hops == 2 for p in res.packets)
    tx = [res.ledger.joules[n][0] for n in (0, 1)]
    assert tx[0] == pytest.approx(tx[1])
    assert tx[0] == pytest.approx(30 * 2 * TAU * 36e-3)


def test_or_crowded_cap_defers_sources():
    cfg = baseline_config(scheme="or", sim_duration=30.0)
    res = simulate(cfg, seed=2, record_trace=True)
    cap = [rec for _, _, kind, rec in res.trace if kind == "CAP_START" and rec["phase"] == "source"]
    deferred = [sum(1 for _, started, _ in rec["tx"] if not started) for rec in cap]
    assert any(d > 0 for d in deferred)


def test_tdma_fixed_schedule():
    cfg = baseline_config(scheme="tdma", markov_matrix=ALWAYS_GOOD, sim_duration=30.0)
    res = simulate(cfg, seed=3, record_trace=True)
    slots = Counter(int(t) for t, _, kind, _ in res.trace if kind == "SLOT_START")
    assert set(slots.values()) == {12}
    assert all(f.collision_count == 0 for f in res.frames)
    assert [f.delivered_count for f in res.frames] == [12] * 30
    assert all(p.hops == 1 for p in res.packets)


def _frames_of(trace, kind):
    return [(t, rec) for t, _, k, rec in trace if k == kind]


def test_cftim_invariants_short_run():
    cfg = baseline_config(sim_duration=120.0)
    res = simulate(cfg, seed=5, record_trace=True)
    trace = res.trace
    n = cfg.n_sources
    cap = {int(t): rec for t, rec in _frames_of(trace, "CAP_START")}
    for f, rec in cap.items():
        assert not set(rec["ts"]) & set(rec["is"])
    for t, rec in _frames_of(trace, "SLOT_START"):
        if rec["owner"] is not None:
            assert len(rec["tx"]) <= 1
            assert all(dedicated for _, _, dedicated in rec["tx"])
    for _, rec in _frames_of(trace, "BEACON_START"):
        assert rec["p"] > rec["m"]
        slots = [s for _, s in rec["slots"]]
        assert len(slots) == len(set(slots))
    times = [f.time for f in res.frames]
    assert times == sorted(set(times))
    assert all(f.delivered_count <= n for f in res.frames)
    assert all(p.delivered_at >= p.created_at for p in res.packets)
    for p in res.packets:
        f = int(p.delivered_at)
        if p.hops == 1:
            assert p.origin in cap[f]["is"]
        else:
            assert p.hops == 2
    assert any(p.hops == 1 for p in res.packets) and any(p.hops == 2 for p in res.packets)


def test_cftim_above_or_after_warmup():
    cfg = baseline_config(sim_duration=600.0)
    a = simulate(cfg.replace(scheme="cftim"), seed=3)
    b = simulate(cfg.replace(scheme="or"), seed=3)
    avg_a = np.nanmean([f.avg_sinr_db for f in a.frames[300:]])
    avg_b = np.nanmean([f.avg_sinr_db for f in b.frames[300:]])
    assert avg_a >= avg_b


def test_tdma_far_sources_cost_more_per_delivery_than_cftim():
    # paired seed; far sources = the four farthest from the coordinator
    cfg = baseline_config(sim_duration=600.0)
    per_packet = {}
    for scheme in ("tdma", "cftim"):
        res = simulate(cfg.replace(scheme=scheme), seed=1)
        nodes = place_nodes(cfg, substream(1, "placement"))
        c = nodes[cfg.coordinator_id]
        far = sorted(cfg.source_ids, key=lambda i: -nodes[i].distance_to(c))[:4]
        delivered = sum(1 for p in res.packets if p.origin in far)
        per_packet[scheme] = sum(res.ledger.node_total(i) for i in far) / delivered
    assert per_packet["tdma"] > per_packet["cftim"], per_packet
