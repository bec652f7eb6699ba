"""Discrete-event kernel, load-dependent link model and an at-most-once broker.

The kernel is single threaded: events fire in ``(fire_at, insertion_seq)``
order, so a scenario replays identically for a given seed.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .core import Envelope, NodeId, RngStream, SimTime
from .errors import ParameterError, SchedulingError

EPS_LOAD = 1e-12


@dataclass(order=True)
class Event:
    fire_at: SimTime
    insertion_seq: int
    action: Callable = field(compare=False)
    args: tuple = field(default=(), compare=False)


@dataclass(frozen=True)
class RunStats:
    events_fired: int
    final_time: SimTime


class Simulator:
    """Minimal heap-based discrete-event loop."""

    def __init__(self, start: SimTime = 0):
        self.now: SimTime = start
        self._queue: list[Event] = []
        self._seq = 0
        self.events_fired = 0

    def schedule(self, fire_at: SimTime, action: Callable, *args) -> Event:
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise SchedulingError(f"cannot schedule at {fire_at} us, clock is at {self.now} us")
        ev = Event(fire_at, self._seq, action, args)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def schedule_in(self, delay: SimTime, action: Callable, *args) -> Event:
        return self.schedule(self.now + int(delay), action, *args)

    @property
    def pending(self) -> int:
        return len(self._queue)

    def peek_time(self) -> Optional[SimTime]:
        return self._queue[0].fire_at if self._queue else None

    def run_until(self, t_end: SimTime) -> RunStats:
        """Fire every event with ``fire_at <= t_end``.

        The clock stops at ``t_end``, or at the last fired event if the queue
        drains first.
        """
        t_end = int(t_end)
        if t_end < self.now:
            raise SchedulingError(f"t_end {t_end} is before the current time {self.now}")
        fired = 0
        q = self._queue
        while q and q[0].fire_at <= t_end:
            ev = heapq.heappop(q)
            self.now = ev.fire_at
            ev.action(*ev.args)
            fired += 1
        if q:
            self.now = t_end
        self.events_fired += fired
        return RunStats(fired, self.now)


@dataclass(frozen=True)
class LinkModel:
    base_delay_us: float = 2000.0
    jitter_us: float = 500.0
    base_loss: float = 0.001
    capacity_msgs_per_s: float = 50_000.0
    queue_delay_coeff_us: float = 1000.0

    def problems(self) -> list[str]:
        out = []
        for name in ("base_delay_us", "jitter_us", "queue_delay_coeff_us"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                out.append(f"link.{name} must be finite and >= 0, got {v}")
        if not 0.0 <= self.base_loss <= 1.0:
            out.append(f"link.base_loss must lie in [0, 1], got {self.base_loss}")
        if not (math.isfinite(self.capacity_msgs_per_s) and self.capacity_msgs_per_s > 0):
            out.append(f"link.capacity_msgs_per_s must be > 0, got {self.capacity_msgs_per_s}")
        return out

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ParameterError("; ".join(problems))


def loss_prob(link: LinkModel, offered_load_msgs_per_s):
    """Flat base loss plus the overflow fraction of traffic above capacity.

    Accepts a scalar or an array of loads.
    """
    load = np.asarray(offered_load_msgs_per_s, dtype=float)
    if np.any(load < 0):
        raise ParameterError("offered load must be >= 0")
    overflow = np.maximum(0.0, load - link.capacity_msgs_per_s) / np.maximum(load, EPS_LOAD)
    p = np.clip(link.base_loss + overflow, 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


def mean_delay_us(link: LinkModel, offered_load_msgs_per_s: float) -> float:
    """Analytic mean of ``delay_sample`` before rounding to whole microseconds."""
    return (link.base_delay_us + link.jitter_us / math.sqrt(2 * math.pi)
            + link.queue_delay_coeff_us * offered_load_msgs_per_s / link.capacity_msgs_per_s)


def queue_delay_us(link: LinkModel, loads):
    """Deterministic load-dependent part of the one-way delay."""
    return link.queue_delay_coeff_us * np.asarray(loads, dtype=float) / link.capacity_msgs_per_s


def delay_from_normals(link: LinkModel, z, queue_us) -> np.ndarray:
    """Delay in whole microseconds from standard-normal draws ``z``."""
    d = link.base_delay_us + np.maximum(0.0, link.jitter_us * np.asarray(z)) + queue_us
    return np.rint(d).astype(np.int64)


def delay_samples(link: LinkModel, loads, rng: RngStream) -> np.ndarray:
    loads = np.asarray(loads, dtype=float)
    if np.any(loads < 0):
        raise ParameterError("offered load must be >= 0")
    z = rng.generator.standard_normal(loads.shape)
    return delay_from_normals(link, z, queue_delay_us(link, loads))


def delay_sample(link: LinkModel, offered_load_msgs_per_s: float, rng: RngStream) -> SimTime:
    return int(delay_samples(link, np.array([offered_load_msgs_per_s]), rng)[0])


def topic_matches(pattern: str, topic: str) -> bool:
    """MQTT filter match with ``+`` (one level) and trailing ``#`` (any suffix)."""
    pp, tp = pattern.split("/"), topic.split("/")
    for i, part in enumerate(pp):
        if part == "#":
            return i == len(pp) - 1
        if i >= len(tp):
            return False
        if part != "+" and part != tp[i]:
            return False
    return len(pp) == len(tp)


@dataclass(frozen=True)
class Delivery:
    delivered: bool
    delay_us: Optional[SimTime]


class Broker:
    """Topic router with QoS 0 semantics: each subscriber gets a message 0 or 1 times."""

    def __init__(self, node: Optional[NodeId] = None):
        self.node = node
        self.subscriptions: dict[str, list[NodeId]] = {}
        self.published_count = 0
        self.delivered_count = 0
        self.dropped_count = 0
        self._route_cache: dict[str, tuple] = {}

    def subscribe(self, pattern: str, node: NodeId) -> None:
        subs = self.subscriptions.setdefault(pattern, [])
        if node not in subs:
            subs.append(node)
        self._route_cache.clear()

    def subscribers_for(self, topic: str) -> tuple:
        hit = self._route_cache.get(topic)
        if hit is None:
            seen = []
            for pattern, nodes in self.subscriptions.items():
                if topic_matches(pattern, topic):
                    seen.extend(n for n in nodes if n not in seen)
            hit = self._route_cache[topic] = tuple(seen)
        return hit

    def publish(self, topic: str, env: Envelope, link: LinkModel, load_msgs_per_s: float,
                rng: RngStream) -> dict:
        if not topic:
            raise ParameterError("topic must be non-empty")
        self.published_count += 1
        p = loss_prob(link, load_msgs_per_s)
        out = {}
        for sub in self.subscribers_for(topic):
            lost = rng.generator.random() < p
            delay = delay_sample(link, load_msgs_per_s, rng)
            if lost:
                self.dropped_count += 1
                out[sub] = Delivery(False, None)
            else:
                self.delivered_count += 1
                out[sub] = Delivery(True, delay)
        return out

    def publish_batch(self, topics, link: LinkModel, loads, rng: RngStream):
        """Vectorised ``publish`` for many messages at once.

        Returns ``(msg_index, subscribers, delivered, delay_us)`` with one
        entry per (message, matching subscriber) pair.
        """
        loads = np.asarray(loads, dtype=float)
        msg_idx, subs = [], []
        for i, topic in enumerate(topics):
            for s in self.subscribers_for(topic):
                msg_idx.append(i)
                subs.append(s)
        msg_idx = np.asarray(msg_idx, dtype=np.int64)
        self.published_count += len(topics)
        pair_loads = loads[msg_idx] if msg_idx.size else np.zeros(0)
        lost = rng.generator.random(msg_idx.size) < loss_prob(link, pair_loads)
        delays = delay_samples(link, pair_loads, rng)
        self.dropped_count += int(lost.sum())
        self.delivered_count += int((~lost).sum())
        return msg_idx, subs, ~lost, delays


def format_delivery_line(fire_at_us, topic, tag, seq, outcome, delay_us) -> str:
    d = "" if delay_us is None else str(int(delay_us))
    return f"{int(fire_at_us)}\t{topic}\t{tag}\t{int(seq)}\t{outcome}\t{d}"


def format_failover_line(fire_at_us, node, old_state, new_state) -> str:
    return f"{int(fire_at_us)}\t{node}\t{old_state}\t{new_state}"
