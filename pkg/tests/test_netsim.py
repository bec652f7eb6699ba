import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wearbed.config import TagSpec
from wearbed.core import Envelope, MessageKind, NodeId, NodeKind, UwbPayload, derive_stream
from wearbed.errors import ParameterError, SchedulingError
from wearbed.harness import simulate
from wearbed.motion import Trajectory
from wearbed.netsim import (Broker, LinkModel, Simulator, delay_sample, delay_samples,
                            format_delivery_line, format_failover_line, loss_prob, mean_delay_us,
                            topic_matches)
from wearbed.scenarios import failover_master_down, static_checkpoints

LINK = LinkModel()


# --- kernel ------------------------------------------------------------------

def test_ties_fire_in_insertion_order():
    sim, seen = Simulator(), []
    for name in "abc":
        sim.schedule(5, seen.append, name)
    sim.run_until(5)
    assert seen == ["a", "b", "c"]


def test_event_at_current_time_fires_before_clock_moves():
    sim, seen = Simulator(), []
    sim.schedule(10, lambda: sim.schedule(10, seen.append, sim.now))
    sim.schedule(11, seen.append, "later")
    sim.run_until(10)
    assert seen == [10] and sim.now == 10


def test_scheduling_in_the_past_fails():
    sim = Simulator()
    sim.schedule(100, lambda: None)
    sim.run_until(100)
    with pytest.raises(SchedulingError):
        sim.schedule(99, lambda: None)


def test_empty_queue_fires_nothing():
    stats = Simulator().run_until(1_000)
    assert stats.events_fired == 0


def test_clock_reaches_t_end_while_events_remain():
    sim = Simulator()
    sim.schedule(50, lambda: None)
    sim.schedule(500, lambda: None)
    stats = sim.run_until(100)
    assert stats.events_fired == 1 and stats.final_time == 100 and sim.pending == 1


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=60))
def test_dequeue_order_is_fire_time_then_insertion(times):
    sim, seen = Simulator(), []
    for i, t in enumerate(times):
        sim.schedule(t, seen.append, (t, i))
    sim.run_until(1000)
    assert seen == sorted(seen)


def test_same_seed_runs_are_identical():
    a = simulate(failover_master_down())
    b = simulate(failover_master_down())
    assert a.sim.events_fired == b.sim.events_fired
    assert a.trace_lines() == b.trace_lines()
    ca, cb = a.store.columns(), b.store.columns()
    assert all(np.array_equal(ca[k], cb[k], equal_nan=True) for k in ca)


def test_one_million_uwb_publishes():
    # 100 tags x 1000 Hz x 10 s with a link that cannot lose anything
    base = static_checkpoints()
    tags = tuple(TagSpec(i, Trajectory.stationary((2.0, 2.0)), 1000.0, None) for i in range(100))
    cfg = replace(base, name="million", duration_s=10.0, tags=tags,
                  link=LinkModel(base_loss=0.0, capacity_msgs_per_s=1e9))
    run = simulate(cfg, keep_payloads=False)
    assert int(run.published[:, 0].sum()) == 1_000_000
    assert len(run.store) == 1_000_000


# --- loss and delay ----------------------------------------------------------

def test_loss_prob_examples():
    assert loss_prob(LINK, 0) == LINK.base_loss
    assert loss_prob(LINK, LINK.capacity_msgs_per_s) == LINK.base_loss
    assert loss_prob(LINK, 2 * LINK.capacity_msgs_per_s) == pytest.approx(0.501, abs=1e-12)


def test_loss_prob_rejects_negative_load():
    with pytest.raises(ParameterError):
        loss_prob(LINK, -1)


def test_delay_without_jitter():
    quiet = replace(LINK, jitter_us=0.0)
    rng = derive_stream(0, "d")
    assert delay_sample(quiet, 0, rng) == quiet.base_delay_us
    assert delay_sample(quiet, quiet.capacity_msgs_per_s, rng) == (
        quiet.base_delay_us + quiet.queue_delay_coeff_us)


def test_delay_mean_matches_analytic_mean():
    load = 20_000.0
    d = delay_samples(LINK, np.full(100_000, load), derive_stream(42, "delay"))
    assert d.mean() == pytest.approx(mean_delay_us(LINK, load), rel=0.01)


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_loss_and_mean_delay_monotone_in_load(a, b):
    lo, hi = sorted((a, b))
    assert loss_prob(LINK, lo) <= loss_prob(LINK, hi)
    assert mean_delay_us(LINK, lo) <= mean_delay_us(LINK, hi)


@given(st.floats(0, 1e6))
def test_loss_prob_is_a_probability(load):
    assert 0.0 <= loss_prob(LINK, load) <= 1.0


def test_invalid_link_rejected():
    with pytest.raises(ParameterError):
        LinkModel(base_loss=1.5)
    with pytest.raises(ParameterError):
        LinkModel(capacity_msgs_per_s=0)


# --- broker ------------------------------------------------------------------

@pytest.mark.parametrize("pattern, topic, hit", [
    ("tags/+/uwb", "tags/7/uwb", True),
    ("tags/+/uwb", "tags/7/imu", False),
    ("tags/#", "tags/7/imu", True),
    ("#", "tags/7/imu", True),
    ("tags/+", "tags/7/uwb", False),
    ("tags/7/uwb", "tags/7/uwb", True),
    ("tags/+/+/x", "tags/7/uwb", False),
])
def test_topic_matching(pattern, topic, hit):
    assert topic_matches(pattern, topic) is hit


def envelope(i=7, seq=0):
    return Envelope(NodeId(NodeKind.TAG, i), seq, MessageKind.UWB, 0, UwbPayload(1.0, 1.0, 0.0))


def test_lossless_regime_reaches_every_subscriber():
    b = Broker()
    subs = [NodeId(NodeKind.SERVER, 0), NodeId(NodeKind.SERVER, 1)]
    b.subscribe("tags/+/uwb", subs[0])
    b.subscribe("tags/#", subs[1])
    out = b.publish("tags/7/uwb", envelope(), replace(LINK, base_loss=0.0), 100.0, derive_stream(1, "l"))
    assert set(out) == set(subs) and all(d.delivered for d in out.values())


def test_overlapping_patterns_deliver_once():
    b = Broker()
    s = NodeId(NodeKind.SERVER, 0)
    b.subscribe("tags/+/uwb", s)
    b.subscribe("tags/#", s)
    assert b.subscribers_for("tags/3/uwb") == (s,)


def test_double_capacity_drops_half():
    b = Broker()
    b.subscribe("tags/+/uwb", NodeId(NodeKind.SERVER, 0))
    link = replace(LINK, base_loss=0.0)
    topics = ["tags/1/uwb"] * 100_000
    _, _, delivered, _ = b.publish_batch(topics, link, np.full(100_000, 2 * link.capacity_msgs_per_s),
                                         derive_stream(42, "link-loss"))
    assert 1 - delivered.mean() == pytest.approx(0.5, abs=0.02)


@given(st.integers(1, 200), st.floats(0, 2e5))
def test_broker_conservation(n, load):
    b = Broker()
    b.subscribe("tags/+/uwb", NodeId(NodeKind.SERVER, 0))
    rng = derive_stream(n, "c")
    for i in range(n):
        out = b.publish("tags/1/uwb", envelope(1, i), LINK, load, rng)
        assert len(out) == 1  # at most once per subscriber
    assert b.published_count == b.delivered_count + b.dropped_count == n


def test_harness_brokers_conserve(failover_run):
    for broker in failover_run.brokers.values():
        assert broker.published_count == broker.delivered_count + broker.dropped_count


def test_trace_line_format():
    assert format_delivery_line(12, "tags/1/uwb", "tag1", 3, "delivered", 4400) == \
        "12\ttags/1/uwb\ttag1\t3\tdelivered\t4400"
    assert format_delivery_line(12, "tags/1/uwb", "tag1", 3, "lost_server_link", None).endswith("\t")
    assert format_failover_line(5, "server1", "Backup", "Master") == "5\tserver1\tBackup\tMaster"
