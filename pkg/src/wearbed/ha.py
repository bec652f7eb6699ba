"""VRRP-style master/backup failover and a sticky round-robin balancer.

``ha_step`` is a pure transition function: it never mutates its input and
returns the new state together with the actions the caller must carry out.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

from .core import NodeId, SimTime
from .errors import NoBackendError, ParameterError


@dataclass(frozen=True)
class FailoverConfig:
    priority: int = 100
    advert_interval_us: int = 1_000_000
    preempt: bool = True

    def __post_init__(self):
        if not 1 <= self.priority <= 254:
            raise ParameterError(f"priority must be in 1..254, got {self.priority}")
        if self.advert_interval_us <= 0:
            raise ParameterError("advert_interval_us must be > 0")

    @property
    def skew_us(self) -> int:
        return ((256 - self.priority) * self.advert_interval_us) // 256

    @property
    def master_down_interval_us(self) -> int:
        return 3 * self.advert_interval_us + self.skew_us


class HaState(str, enum.Enum):
    INIT = "Init"
    BACKUP = "Backup"
    MASTER = "Master"
    FAULT = "Fault"


@dataclass(frozen=True)
class AdvertReceived:
    priority: int
    sender: NodeId


@dataclass(frozen=True)
class TimerExpired:
    pass


@dataclass(frozen=True)
class LocalFault:
    pass


@dataclass(frozen=True)
class FaultCleared:
    pass


class Action(str, enum.Enum):
    SEND_ADVERT = "SendAdvert"
    ASSUME_MASTER = "AssumeMaster"
    RELEASE_MASTER = "ReleaseMaster"


@dataclass(frozen=True)
class HaNodeState:
    """Failover state of one server.

    ``master_down_timer`` is the Backup deadline; ``next_advert_at`` is the
    Master's next advertisement time. Only the one matching ``state`` is live.
    """

    node: NodeId
    state: HaState = HaState.INIT
    master_down_timer: Optional[SimTime] = None
    last_advert_priority: int = 0
    next_advert_at: Optional[SimTime] = None

    @classmethod
    def start_backup(cls, node: NodeId, cfg: FailoverConfig, now: SimTime = 0) -> "HaNodeState":
        return cls(node, HaState.BACKUP, now + cfg.master_down_interval_us)

    @classmethod
    def start_master(cls, node: NodeId, cfg: FailoverConfig, now: SimTime = 0) -> "HaNodeState":
        return cls(node, HaState.MASTER, None, cfg.priority, now + cfg.advert_interval_us)

    def deadline(self) -> Optional[SimTime]:
        if self.state is HaState.BACKUP:
            return self.master_down_timer
        if self.state is HaState.MASTER:
            return self.next_advert_at
        return None


def ha_step(state: HaNodeState, cfg: FailoverConfig, event, now: SimTime):
    """Advance one node's failover state machine by one event.

    Returns ``(new_state, actions)``. An advert claiming to come from the node
    itself is malformed and ignored.
    """
    s = state.state
    mdi = cfg.master_down_interval_us

    if isinstance(event, LocalFault):
        if s is HaState.FAULT:
            return state, []
        actions = [Action.RELEASE_MASTER] if s is HaState.MASTER else []
        return replace(state, state=HaState.FAULT, master_down_timer=None, next_advert_at=None), actions

    if isinstance(event, FaultCleared):
        if s is not HaState.FAULT:
            return state, []
        return replace(state, state=HaState.BACKUP, master_down_timer=now + mdi), []

    if s in (HaState.FAULT, HaState.INIT):
        if s is HaState.INIT and isinstance(event, TimerExpired):
            # cold start: listen for a master before claiming the role
            return replace(state, state=HaState.BACKUP, master_down_timer=now + mdi), []
        return state, []

    if isinstance(event, AdvertReceived):
        if event.sender == state.node:
            return state, []
        if s is HaState.BACKUP:
            if event.priority >= cfg.priority or not cfg.preempt:
                return replace(state, master_down_timer=now + mdi,
                               last_advert_priority=event.priority), []
            # lower-priority master and we preempt: let the timer run out
            return replace(state, last_advert_priority=event.priority), []
        # Master
        if event.priority > cfg.priority or (
                event.priority == cfg.priority and event.sender.index > state.node.index):
            return (replace(state, state=HaState.BACKUP, master_down_timer=now + mdi,
                            next_advert_at=None, last_advert_priority=event.priority),
                    [Action.RELEASE_MASTER])
        return state, []

    if isinstance(event, TimerExpired):
        if s is HaState.BACKUP:
            if state.master_down_timer is not None and now < state.master_down_timer:
                return state, []
            return (replace(state, state=HaState.MASTER, master_down_timer=None,
                            next_advert_at=now + cfg.advert_interval_us),
                    [Action.ASSUME_MASTER, Action.SEND_ADVERT])
        if state.next_advert_at is not None and now < state.next_advert_at:
            return state, []
        return replace(state, next_advert_at=now + cfg.advert_interval_us), [Action.SEND_ADVERT]

    raise ParameterError(f"unknown failover event {event!r}")


@dataclass
class BalancerState:
    online_backends: list
    assignments: dict = field(default_factory=dict)
    next_index: int = 0

    def counts(self) -> dict:
        out = {b: 0 for b in self.online_backends}
        for b in self.assignments.values():
            out[b] = out.get(b, 0) + 1
        return out

    def copy(self) -> "BalancerState":
        return BalancerState(list(self.online_backends), dict(self.assignments), self.next_index)


def balance_assign(balancer: BalancerState, tag: NodeId) -> NodeId:
    """Round-robin pick for a new tag; a tag already placed keeps its backend."""
    current = balancer.assignments.get(tag)
    if current is not None and current in balancer.online_backends:
        return current
    if not balancer.online_backends:
        raise NoBackendError("no online backend")
    chosen = balancer.online_backends[balancer.next_index % len(balancer.online_backends)]
    balancer.next_index += 1
    balancer.assignments[tag] = chosen
    return chosen


def balance_on_backend_down(balancer: BalancerState, dead: NodeId) -> BalancerState:
    """New state with ``dead`` removed and its tags spread over the survivors.

    Orphaned tags are re-placed in ascending tag order. With no survivor they
    are left unassigned.
    """
    if dead not in balancer.online_backends:
        raise ParameterError(f"{dead} is not an online backend")
    out = balancer.copy()
    out.online_backends.remove(dead)
    orphans = sorted(t for t, b in out.assignments.items() if b == dead)
    for t in orphans:
        del out.assignments[t]
    if out.online_backends:
        for t in orphans:
            balance_assign(out, t)
    return out


def balance_on_backend_up(balancer: BalancerState, node: NodeId) -> BalancerState:
    """New state with ``node`` back online. Existing assignments do not move;
    only unassigned tags are placed."""
    out = balancer.copy()
    if node not in out.online_backends:
        out.online_backends.append(node)
        out.online_backends.sort()
    return out
