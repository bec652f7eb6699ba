"""Scenario runner, sweep orchestration and plot-data export.

A run precomputes each tag's payloads (ranging epochs are trilaterated at
the edge, IMU samples synthesised along the trajectory), then lets the
event kernel move them tag -> edge -> balancer -> server broker. All tags
that emit at the same instant share one event, and the per-message work
inside it is vectorised.
"""
from __future__ import annotations

import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import ScenarioConfig, ServerConfig, SweepConfig, scenario_to_dict
from .core import NodeId, NodeKind, US_PER_S, derive_stream
from .errors import ExportError
from .ha import (Action, AdvertReceived, BalancerState, FaultCleared, HaNodeState, HaState,
                 LocalFault, TimerExpired, balance_assign, balance_on_backend_down,
                 balance_on_backend_up, ha_step)
from .ingest import RecordStore, atomic_write, export_csv
from .localization import trilaterate_batch, simulate_ranges
from .metrics import (MetricsReport, accuracy_stats, compute_plr, delay_stats, plr_from_counts,
                      write_metrics_csv)
from .motion import positions_at, synth_imu_batch
from .netsim import (Broker, Simulator, delay_from_normals, format_delivery_line,
                     format_failover_line, loss_prob, queue_delay_us)

log = logging.getLogger(__name__)

UWB, IMU = 0, 1
KIND_NAMES = ("uwb", "imu")

DROP_REASONS = ("lost_edge_link", "lost_server_link", "no_master", "edge_down",
                "backend_down", "no_edge", "no_backend")
LOST_EDGE_LINK, LOST_SERVER_LINK, NO_MASTER, EDGE_DOWN, BACKEND_DOWN, NO_EDGE, NO_BACKEND = range(7)
#: Reasons caused by a node outage rather than by the link model.
OUTAGE_REASONS = frozenset({NO_MASTER, EDGE_DOWN, BACKEND_DOWN, NO_EDGE, NO_BACKEND})


def emission_times(hz: float, duration_us: int) -> np.ndarray:
    """Emission instants ``floor(k * 1e6 / hz)`` that fall inside the run."""
    n = int(math.ceil(duration_us * hz / US_PER_S)) + 1
    t = np.floor(np.arange(n) * (US_PER_S / hz)).astype(np.int64)
    return t[t < duration_us]


@dataclass
class _Group:
    kind: int
    hz: float
    times: np.ndarray
    pos: np.ndarray          # positions into the run's tag list
    tag_index: np.ndarray    # tag ids
    payload: dict = field(default_factory=dict)   # name -> (n_tags, n_times)
    published: int = 0


class _Liveness:
    """Down intervals of one node, for checks at arbitrary past instants."""

    def __init__(self):
        self.down: list[list] = []

    @property
    def alive(self) -> bool:
        return not self.down or self.down[-1][1] is not None

    def go_down(self, t):
        if self.alive:
            self.down.append([t, None])

    def go_up(self, t):
        if not self.alive:
            self.down[-1][1] = t

    def alive_at(self, t: np.ndarray) -> np.ndarray:
        ok = np.ones(t.shape, dtype=bool)
        for start, end in self.down:
            ok &= ~((t >= start) & (t < (np.iinfo(np.int64).max if end is None else end)))
        return ok


class ScenarioRun:
    """One executed scenario: record store, traffic counters and failover log."""

    def __init__(self, cfg: ScenarioConfig, keep_payloads: bool = True):
        self.cfg = cfg.validate()
        self.keep_payloads = keep_payloads
        self.sim = Simulator()
        self.store = RecordStore()
        self.tags = sorted(cfg.tags, key=lambda t: t.index)
        n = len(self.tags)
        self.tag_ids = np.array([t.index for t in self.tags], dtype=np.int64)
        self.published = np.zeros((n, 2), dtype=np.int64)
        self.delivered = np.zeros((n, 2), dtype=np.int64)
        self.dropped = np.zeros((n, 2, len(DROP_REASONS)), dtype=np.int64)
        self.sent = np.zeros((n, 2), dtype=np.int64)
        self._drops: list[tuple] = []
        self._pending: list[tuple] = []
        self.transitions: list[tuple] = []
        self.imu: dict = {}
        self.last_arrival = 0
        self.duration_us = cfg.duration_us
        self.link = cfg.link
        self.rng_link = derive_stream(cfg.seed, "link")

        self.server_ids = cfg.server_ids()
        self.edge_ids = [NodeId(NodeKind.EDGE, i) for i in range(cfg.edges.count)]
        self.server_live = {s.index: _Liveness() for s in self.server_ids}
        self.edge_live = {e.index: _Liveness() for e in self.edge_ids}
        for e in self.edge_ids:
            if e.index not in cfg.edges.online_indices:
                self.edge_live[e.index].go_down(0)
        self.brokers = {}
        for s in self.server_ids:
            b = Broker(NodeId(NodeKind.BROKER, s.index))
            b.subscribe("tags/+/uwb", s)
            b.subscribe("tags/+/imu", s)
            self.brokers[s.index] = b

        self.rates = np.array([t.uwb_hz + (t.imu_hz or 0.0) for t in self.tags])
        self.server_balancer = BalancerState(list(self.server_ids))
        self.edge_balancer = BalancerState([e for e in self.edge_ids
                                            if e.index in cfg.edges.online_indices])
        self.tag_server = np.full(n, -1, dtype=np.int64)
        self.tag_edge = np.full(n, -1, dtype=np.int64)
        self.server_load = np.zeros(2)
        self.edge_load = np.zeros(max(1, cfg.edges.count))

        self.ha_cfg = {s.index: cfg.failover.for_server(s.index) for s in self.server_ids}
        top = max(self.server_ids, key=lambda s: (self.ha_cfg[s.index].priority, s.index))
        self.ha = {s.index: (HaNodeState.start_master(s, self.ha_cfg[s.index]) if s == top
                             else HaNodeState.start_backup(s, self.ha_cfg[s.index]))
                   for s in self.server_ids}
        self.vip_holder: Optional[int] = top.index
        self._ha_gen = {s.index: 0 for s in self.server_ids}

        self.groups = self._build_groups()
        self._reroute()

    # -- setup ---------------------------------------------------------------

    def _build_groups(self) -> list:
        cfg = self.cfg
        anchor_xy = cfg.anchors.positions
        by_key: dict = {}
        for p, t in enumerate(self.tags):
            by_key.setdefault((UWB, t.uwb_hz), []).append(p)
            if t.imu_hz is not None:
                by_key.setdefault((IMU, t.imu_hz), []).append(p)
        groups = []
        for (kind, hz), members in sorted(by_key.items()):
            times = emission_times(hz, self.duration_us)
            pos = np.array(members, dtype=np.int64)
            g = _Group(kind, hz, times, pos, self.tag_ids[pos])
            self.sent[pos, kind] = times.size
            if kind == UWB:
                true = np.stack([positions_at(self.tags[p].trajectory, times) for p in members])
                ranges = np.concatenate([
                    simulate_ranges(true[i], anchor_xy, cfg.noise,
                                    derive_stream(cfg.seed, f"ranging-noise/tag{self.tags[p].index}"))
                    for i, p in enumerate(members)])
                est, rms, _, conv = trilaterate_batch(anchor_xy, ranges)
                shape = (len(members), times.size)
                g.payload = {"true_x": true[..., 0], "true_y": true[..., 1],
                             "est_x": est[:, 0].reshape(shape), "est_y": est[:, 1].reshape(shape),
                             "residual": rms.reshape(shape), "converged": conv.reshape(shape)}
            else:
                for p in members:
                    tg = self.tags[p]
                    batch = synth_imu_batch(tg.trajectory, times, cfg.imu_dt_s, cfg.imu_noise,
                                            derive_stream(cfg.seed, f"imu-noise/tag{tg.index}"))
                    if self.keep_payloads:
                        self.imu[tg.index] = batch
            groups.append(g)
        return groups

    # -- routing -------------------------------------------------------------

    def _reroute(self) -> None:
        """Place every tag on an edge and a server backend, then refresh loads."""
        for p, t in enumerate(self.tags):
            tid = t.id
            if self.edge_balancer.online_backends:
                self.tag_edge[p] = balance_assign(self.edge_balancer, tid).index
            else:
                self.tag_edge[p] = -1
            if self.server_balancer.online_backends:
                self.tag_server[p] = balance_assign(self.server_balancer, tid).index
            else:
                self.tag_server[p] = -1
        self.server_load = np.zeros(2)
        self.edge_load = np.zeros(max(1, self.cfg.edges.count))
        ok_s, ok_e = self.tag_server >= 0, self.tag_edge >= 0
        np.add.at(self.server_load, self.tag_server[ok_s], self.rates[ok_s])
        np.add.at(self.edge_load, self.tag_edge[ok_e], self.rates[ok_e])
        self._refresh_link_terms()

    def offered_load(self, node: NodeId) -> float:
        if node.kind is NodeKind.SERVER:
            return float(self.server_load[node.index])
        return float(self.edge_load[node.index])

    # -- failover ------------------------------------------------------------

    def _set_ha(self, idx: int, new: HaNodeState) -> None:
        old = self.ha[idx]
        if old.state is not new.state:
            self.transitions.append((self.sim.now, f"server{idx}", old.state.value, new.state.value))
        self.ha[idx] = new
        if old.deadline() != new.deadline():
            self._ha_gen[idx] += 1
            dl = new.deadline()
            if dl is not None and dl <= self.duration_us:
                self.sim.schedule(max(dl, self.sim.now), self._on_ha_timer, idx, self._ha_gen[idx])

    def _ha_event(self, idx: int, event) -> None:
        new, actions = ha_step(self.ha[idx], self.ha_cfg[idx], event, self.sim.now)
        self._set_ha(idx, new)
        for action in actions:
            if action is Action.ASSUME_MASTER:
                self.vip_holder = idx
                self._drop_dead_backends()
            elif action is Action.RELEASE_MASTER:
                if self.vip_holder == idx:
                    self.vip_holder = None
            elif action is Action.SEND_ADVERT:
                prio = self.ha_cfg[idx].priority
                sender = NodeId(NodeKind.SERVER, idx)
                for other in sorted(self.ha):
                    if other != idx and self.ha[other].state is not HaState.FAULT:
                        self._ha_event(other, AdvertReceived(prio, sender))

    def _on_ha_timer(self, idx: int, gen: int) -> None:
        if gen == self._ha_gen[idx]:
            self._ha_event(idx, TimerExpired())

    def _drop_dead_backends(self) -> None:
        changed = False
        for s in list(self.server_balancer.online_backends):
            if not self.server_live[s.index].alive:
                self.server_balancer = balance_on_backend_down(self.server_balancer, s)
                changed = True
        if changed:
            self._reroute()

    def _on_injection(self, node: NodeId, action: str) -> None:
        now = self.sim.now
        if node.kind is NodeKind.SERVER:
            live = self.server_live[node.index]
            if action == "Down":
                # whatever the node had due at this very instant still happens
                if self.ha[node.index].deadline() == now:
                    self._ha_event(node.index, TimerExpired())
                live.go_down(now)
                self._ha_event(node.index, LocalFault())
                self.sim.schedule(now + self.cfg.failover.health_check_delay_us,
                                  self._on_health_check, node)
            else:
                live.go_up(now)
                self._ha_event(node.index, FaultCleared())
                self.server_balancer = balance_on_backend_up(self.server_balancer, node)
                self._reroute()
        else:
            live = self.edge_live[node.index]
            if action == "Down":
                live.go_down(now)
                if node in self.edge_balancer.online_backends:
                    self.edge_balancer = balance_on_backend_down(self.edge_balancer, node)
            else:
                live.go_up(now)
                self.edge_balancer = balance_on_backend_up(self.edge_balancer, node)
            self._reroute()

    def _on_health_check(self, node: NodeId) -> None:
        if not self.server_live[node.index].alive and node in self.server_balancer.online_backends:
            self.server_balancer = balance_on_backend_down(self.server_balancer, node)
            self._reroute()

    # -- traffic -------------------------------------------------------------

    def _refresh_link_terms(self) -> None:
        """Per-tag loss probabilities and queueing delays for the current routing."""
        n = len(self.tags)
        e = np.where(self.tag_edge >= 0, self.tag_edge, 0)
        s = np.where(self.tag_server >= 0, self.tag_server, 0)
        load_e, load_s = self.edge_load[e], self.server_load[s]
        self._p1 = np.asarray(loss_prob(self.link, load_e)).reshape(n)
        self._p2 = np.asarray(loss_prob(self.link, load_s)).reshape(n)
        self._q1 = queue_delay_us(self.link, load_e).reshape(n)
        self._q2 = queue_delay_us(self.link, load_s).reshape(n)
        self._routable = (self.tag_edge >= 0) & (self.tag_server >= 0)

    def _record_drops(self, t, pos, kind, seq, reason, server=-1) -> None:
        pos = np.asarray(pos, dtype=np.int64)
        if pos.size == 0:
            return
        n = pos.size
        self._drops.append((np.broadcast_to(np.asarray(t, dtype=np.int64), (n,)), pos,
                            np.full(n, kind), np.broadcast_to(np.asarray(seq, dtype=np.int64), (n,)),
                            np.full(n, reason), np.broadcast_to(np.asarray(server, dtype=np.int64), (n,))))

    def _on_emit(self, gi: int, k: int) -> None:
        g = self.groups[gi]
        t = int(g.times[k])
        if k + 1 < g.times.size:
            self.sim.schedule(int(g.times[k + 1]), self._on_emit, gi, k + 1)
        g.published += 1
        pos = g.pos
        if self.vip_holder is None:
            self._record_drops(t, pos, g.kind, k, NO_MASTER)
            return
        routable = self._routable[pos]
        if routable.all():
            sel = np.arange(pos.size)
        else:
            e = self.tag_edge[pos]
            self._record_drops(t, pos[e < 0], g.kind, k, NO_EDGE)
            self._record_drops(t, pos[(e >= 0) & ~routable], g.kind, k, NO_BACKEND)
            sel = np.flatnonzero(routable)
            if sel.size == 0:
                return
        p = pos[sel]
        gen = self.rng_link.generator
        u = gen.random((2, sel.size))
        z = gen.standard_normal((2, sel.size))
        lost1 = u[0] < self._p1[p]
        lost2 = (u[1] < self._p2[p]) & ~lost1
        arr1 = t + delay_from_normals(self.link, z[0], self._q1[p])
        arr2 = arr1 + delay_from_normals(self.link, z[1], self._q2[p])
        s = self.tag_server[p]
        if lost1.any():
            self._record_drops(arr1[lost1], p[lost1], g.kind, k, LOST_EDGE_LINK)
        if lost2.any():
            self._record_drops(arr2[lost2], p[lost2], g.kind, k, LOST_SERVER_LINK, s[lost2])
        ok = ~(lost1 | lost2)
        if ok.any():
            self._pending.append((gi, k, sel[ok], self.tag_edge[p[ok]], s[ok], arr1[ok], arr2[ok]))
            self.last_arrival = max(self.last_arrival, int(arr2[ok].max()))

    def _flush_deliveries(self) -> None:
        """Resolve every in-flight message against the node liveness history.

        An edge must be up when the message reaches it and the server must be
        up when the message arrives there. Checking after the clock has passed
        the last arrival gives the same outcome as checking at each arrival,
        because the liveness history up to that instant is already complete.
        """
        by_group: dict = {}
        for item in self._pending:
            by_group.setdefault(item[0], []).append(item)
        self._pending = []
        for gi, items in sorted(by_group.items()):
            g = self.groups[gi]
            sel = np.concatenate([it[2] for it in items])
            ks = np.concatenate([np.full(it[2].size, it[1]) for it in items])
            e = np.concatenate([it[3] for it in items])
            s = np.concatenate([it[4] for it in items])
            arr1 = np.concatenate([it[5] for it in items])
            arr2 = np.concatenate([it[6] for it in items])
            edge_ok = np.ones(sel.size, dtype=bool)
            for idx in np.unique(e).tolist():
                m = e == idx
                edge_ok[m] = self.edge_live[idx].alive_at(arr1[m])
            srv_ok = np.ones(sel.size, dtype=bool)
            for idx in np.unique(s).tolist():
                m = s == idx
                srv_ok[m] = self.server_live[idx].alive_at(arr2[m])
            pos = g.pos[sel]
            bad_e = ~edge_ok
            self._record_drops(arr1[bad_e], pos[bad_e], g.kind, ks[bad_e], EDGE_DOWN)
            bad_s = edge_ok & ~srv_ok
            self._record_drops(arr2[bad_s], pos[bad_s], g.kind, ks[bad_s], BACKEND_DOWN, s[bad_s])
            good = edge_ok & srv_ok
            rows, kg = sel[good], ks[good]
            np.add.at(self.delivered, (pos[good], g.kind), 1)
            kw = {}
            if g.kind == UWB:
                kw = {name: g.payload[name][rows, kg]
                      for name in ("est_x", "est_y", "residual", "true_x", "true_y")}
            self.store.ingest_batch(arr2[good], g.times[kg], g.tag_index[rows], g.kind, kg,
                                    s[good], e[good], **kw)
            for b in np.unique(s[good]).tolist():
                self.brokers[b].delivered_count += int((s[good] == b).sum())

    def _finalize_counters(self) -> None:
        for g in self.groups:
            self.published[g.pos, g.kind] += g.published
        d = self.drops(raw=True)
        np.add.at(self.dropped, (d["pos"], d["kind"], d["reason"]), 1)
        for b, broker in self.brokers.items():
            srv = d["server"] == b
            broker.dropped_count = int(srv.sum())
            broker.published_count = broker.delivered_count + broker.dropped_count

    # -- driver --------------------------------------------------------------

    def run(self) -> "ScenarioRun":
        for inj in sorted(self.cfg.failure_injections, key=lambda i: (i.at_us, str(i.node))):
            self.sim.schedule(inj.at_us, self._on_injection, inj.node, inj.action)
        for idx, st in sorted(self.ha.items()):
            self._ha_gen[idx] += 1
            dl = st.deadline()
            if dl is not None and dl <= self.duration_us:
                self.sim.schedule(dl, self._on_ha_timer, idx, self._ha_gen[idx])
        for gi, g in enumerate(self.groups):
            if g.times.size:
                self.sim.schedule(int(g.times[0]), self._on_emit, gi, 0)
        self.sim.run_until(self.duration_us)
        self.sim.run_until(max(self.sim.now, self.last_arrival))
        while self.sim.pending:
            self.sim.run_until(self.sim.peek_time())
        self.end_time = max(self.duration_us, self.last_arrival, self.sim.now)
        self._flush_deliveries()
        self._finalize_counters()
        return self

    # -- results -------------------------------------------------------------

    def drops(self, raw: bool = False) -> dict:
        """Dropped messages as columns: t_us, tag, kind, seq, reason, server.

        ``server`` is -1 where the message never reached a server hop.
        With ``raw`` the tag column is replaced by the run-local ``pos``.
        """
        if self._drops:
            cols = [np.concatenate([d[i] for d in self._drops]) for i in range(6)]
        else:
            cols = [np.zeros(0, dtype=np.int64)] * 6
        out = {"t_us": cols[0], "kind": cols[2], "seq": cols[3], "reason": cols[4], "server": cols[5]}
        if raw:
            out["pos"] = cols[1]
        else:
            out["tag"] = self.tag_ids[cols[1]]
        return out

    def stream_counts(self):
        sent = {(int(self.tag_ids[p]), KIND_NAMES[k]): int(self.sent[p, k])
                for p in range(len(self.tags)) for k in (UWB, IMU) if self.sent[p, k] > 0}
        return sent

    def report(self, with_scatter: bool = True) -> MetricsReport:
        cfg = self.cfg
        c = self.store.columns()
        sent = self.stream_counts()
        received_seqs = {}
        order = np.lexsort((c["seq"], c["kind"], c["tag"]))
        tags_s, kinds_s, seqs_s = c["tag"][order], c["kind"][order], c["seq"][order]
        keys = tags_s * 2 + kinds_s
        bounds = np.flatnonzero(np.diff(keys)) + 1
        for chunk_keys, chunk in zip(np.split(keys, bounds), np.split(seqs_s, bounds)):
            if chunk_keys.size:
                key = int(chunk_keys[0])
                received_seqs[(key // 2, KIND_NAMES[key % 2])] = chunk
        store_plr = compute_plr(sent, received_seqs)
        received_counts = {s: int(np.asarray(received_seqs.get(s, ())).size) for s in sent}

        dropped_total = self.dropped.sum(axis=2)
        counter_recv = {(int(self.tag_ids[p]), KIND_NAMES[k]): int(self.published[p, k] - dropped_total[p, k])
                        for p in range(len(self.tags)) for k in (UWB, IMU) if self.published[p, k] > 0}
        counter_sent = {(int(self.tag_ids[p]), KIND_NAMES[k]): int(self.published[p, k])
                        for p in range(len(self.tags)) for k in (UWB, IMU) if self.published[p, k] > 0}
        counter_plr = plr_from_counts(counter_sent, counter_recv)

        delay = c["recv_us"] - c["sent_us"]
        delays = {"uwb": delay_stats(delay[c["kind"] == UWB]),
                  "imu": delay_stats(delay[c["kind"] == IMU]),
                  "all": delay_stats(delay)}
        uwb = c["kind"] == UWB
        err = np.hypot(c["est_x"][uwb] - c["true_x"][uwb], c["est_y"][uwb] - c["true_y"][uwb])
        acc = accuracy_stats(err, filter=True)
        scatter = None
        if with_scatter:
            sc = self.store.sorted_columns()
            u = sc["kind"] == UWB
            scatter = {"t_us": sc["sent_us"][u], "est_x": sc["est_x"][u], "est_y": sc["est_y"][u],
                       "true_x": sc["true_x"][u], "true_y": sc["true_y"][u],
                       "err_m": np.hypot(sc["est_x"][u] - sc["true_x"][u], sc["est_y"][u] - sc["true_y"][u])}
        rates = {t.uwb_hz for t in self.tags}
        reasons = self.dropped.sum(axis=(0, 1))
        return MetricsReport(
            scenario=cfg.name, server_config=cfg.servers.value, n_tags=len(self.tags),
            freq_hz=rates.pop() if len(rates) == 1 else None,
            plr={"uwb": store_plr.per_kind["uwb"], "imu": store_plr.per_kind["imu"],
                 "all": store_plr.overall},
            delay_us=delays, accuracy_m=acc, sent_counts=sent, received_counts=received_counts,
            counter_plr={"uwb": counter_plr.per_kind["uwb"], "imu": counter_plr.per_kind["imu"],
                         "all": counter_plr.overall},
            drops_by_reason={DROP_REASONS[i]: int(n) for i, n in enumerate(reasons) if n},
            failover=list(self.transitions), events_fired=self.sim.events_fired, scatter=scatter)

    def trace_lines(self) -> list[str]:
        c = self.store.columns()
        d = self.drops()
        entries = []
        for t, tg, k, sq, s in zip(c["recv_us"].tolist(), c["tag"].tolist(), c["kind"].tolist(),
                                   c["seq"].tolist(), c["sent_us"].tolist()):
            entries.append((t, 1, tg, k, sq, format_delivery_line(
                t, f"tags/{tg}/{KIND_NAMES[k]}", f"tag{tg}", sq, "delivered", t - s)))
        for t, tg, k, sq, reason in zip(d["t_us"].tolist(), d["tag"].tolist(), d["kind"].tolist(),
                                        d["seq"].tolist(), d["reason"].tolist()):
            entries.append((t, 1, tg, k, sq, format_delivery_line(
                t, f"tags/{tg}/{KIND_NAMES[k]}", f"tag{tg}", sq, DROP_REASONS[reason], None)))
        for i, (t, node, old, new) in enumerate(self.transitions):
            entries.append((t, 0, i, 0, 0, format_failover_line(t, node, old, new)))
        entries.sort(key=lambda x: x[:5])
        return [e[5] for e in entries]


def simulate(cfg: ScenarioConfig, keep_payloads: bool = True) -> ScenarioRun:
    """Validate and execute ``cfg`` in memory."""
    return ScenarioRun(cfg, keep_payloads).run()


def _write_text(path, text: str) -> None:
    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
    atomic_write(path, write)


def run_scenario(cfg: ScenarioConfig, out_dir, trace: bool = False,
                 messages: bool = True, plots: bool = True) -> MetricsReport:
    """Run one scenario and write its artifacts into ``out_dir``.

    Writes ``messages.csv``, ``metrics.csv``, ``scenario.json``, the plot
    CSVs and, with ``trace``, ``trace.tsv``.
    """
    import json

    run = simulate(cfg, keep_payloads=False)
    report = run.report(with_scatter=plots)
    os.makedirs(out_dir, exist_ok=True)
    if messages:
        export_csv(run.store, os.path.join(out_dir, "messages.csv"))
    write_metrics_csv([report], os.path.join(out_dir, "metrics.csv"))
    _write_text(os.path.join(out_dir, "scenario.json"),
                json.dumps(scenario_to_dict(cfg), indent=2, sort_keys=True) + "\n")
    if trace:
        _write_text(os.path.join(out_dir, "trace.tsv"), "\n".join(run.trace_lines()) + "\n")
    if plots:
        emit_plot_data([report], out_dir)
    return report


def _csv_num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6f}"


def emit_plot_data(reports, out_dir) -> list:
    """Long-format CSVs for the PLR, delay and accuracy figures."""
    reports = list(reports)
    if not reports:
        raise ValueError("emit_plot_data needs at least one report")
    os.makedirs(out_dir, exist_ok=True)
    files = []

    def label(r):
        freq = "" if r.freq_hz is None else f"{r.freq_hz:g}"
        return [r.scenario, r.server_config, str(r.n_tags), freq]

    lines = ["scenario,server_config,n_tags,freq_hz,plr,plr_uwb,plr_imu"]
    for r in reports:
        lines.append(",".join(label(r) + [_csv_num(r.plr.get("all")), _csv_num(r.plr.get("uwb")),
                                         _csv_num(r.plr.get("imu"))]))
    path = os.path.join(out_dir, "plr_vs_tags.csv")
    _write_text(path, "\n".join(lines) + "\n")
    files.append(path)

    lines = ["scenario,server_config,n_tags,freq_hz,kind,delay_mean_us,delay_p50_us,"
             "delay_p95_us,delay_p99_us,delay_max_us"]
    for r in reports:
        for kind in ("uwb", "imu"):
            d = r.delay_us.get(kind)
            vals = [d.mean, d.p50, d.p95, d.p99, d.max] if d else [None] * 5
            lines.append(",".join(label(r) + [kind] + [_csv_num(v) for v in vals]))
    path = os.path.join(out_dir, "delay_vs_tags.csv")
    _write_text(path, "\n".join(lines) + "\n")
    files.append(path)

    scatters = [r.scatter for r in reports if r.scatter is not None]
    if scatters:
        out = ["t_us,est_x,est_y,true_x,true_y,err_m"]
        for sc in scatters:
            for row in zip(sc["t_us"].tolist(), sc["est_x"].tolist(), sc["est_y"].tolist(),
                           sc["true_x"].tolist(), sc["true_y"].tolist(), sc["err_m"].tolist()):
                out.append(f"{row[0]},{row[1]:.6f},{row[2]:.6f},{row[3]:.6f},{row[4]:.6f},{row[5]:.6f}")
        path = os.path.join(out_dir, "accuracy_scatter.csv")
        _write_text(path, "\n".join(out) + "\n")
        files.append(path)
    return files


@dataclass
class SweepResult:
    reports: dict                      # (n_tags, freq_hz, ServerConfig) -> MetricsReport
    failures: list = field(default_factory=list)   # (cell, message)

    def ordered(self, sweep: SweepConfig) -> list:
        return [self.reports[c] for c in sweep.cells() if c in self.reports]


def cell_dirname(cell) -> str:
    n, f, sc = cell
    return f"{ServerConfig(sc).value}_tags{n}_f{f:g}"


def _run_cell(sweep: SweepConfig, cell, out_dir, cell_artifacts: bool, cell_messages: bool):
    try:
        cfg = sweep.cell_config(*cell)
        if cell_artifacts and out_dir is not None:
            report = run_scenario(cfg, os.path.join(out_dir, "cells", cell_dirname(cell)),
                                  messages=cell_messages, plots=False)
        else:
            report = simulate(cfg, keep_payloads=False).report(with_scatter=False)
        return cell, report.without_scatter(), None
    except Exception as exc:  # isolate the cell, keep the sweep going
        return cell, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"


def run_sweep(sweep: SweepConfig, out_dir=None, jobs: int = 1, cell_artifacts: bool = True,
              cell_messages: bool = False) -> SweepResult:
    """Run every cell of the grid; results do not depend on ``jobs``.

    With ``out_dir`` the combined ``metrics.csv`` and plot CSVs go to its
    root and each cell gets ``cells/<name>/`` with its own metrics and
    scenario file (plus ``messages.csv`` when ``cell_messages`` is set).
    """
    sweep.validate()
    cells = sweep.cells()
    args = [(sweep, c, out_dir, cell_artifacts, cell_messages) for c in cells]
    if jobs <= 1:
        outcomes = [_run_cell(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell, *zip(*args)))
    result = SweepResult({})
    for cell, report, err in outcomes:
        if err is None:
            result.reports[cell] = report
        else:
            log.error("sweep cell %s failed: %s", cell, err)
            result.failures.append((cell, err))
    if out_dir is not None:
        ordered = result.ordered(sweep)
        write_metrics_csv(ordered, os.path.join(out_dir, "metrics.csv"))
        if ordered:
            emit_plot_data(ordered, out_dir)
        if result.failures:
            _write_text(os.path.join(out_dir, "failures.txt"),
                        "".join(f"{cell_dirname(c)}\t{msg.splitlines()[0]}\n" for c, msg in result.failures))
    return result
