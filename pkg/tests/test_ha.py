import pytest
from hypothesis import given, strategies as st

from wearbed.core import NodeId, NodeKind
from wearbed.errors import NoBackendError, ParameterError
from wearbed.ha import (Action, AdvertReceived, BalancerState, FailoverConfig, FaultCleared,
                        HaNodeState, HaState, LocalFault, TimerExpired, balance_assign,
                        balance_on_backend_down, balance_on_backend_up, ha_step)
from wearbed.netsim import Simulator

S = 1_000_000


def srv(i):
    return NodeId(NodeKind.SERVER, i)


def tag(i):
    return NodeId(NodeKind.TAG, i)


def test_master_down_interval_formula():
    cfg = FailoverConfig(priority=100)
    assert cfg.skew_us == 609_375
    assert cfg.master_down_interval_us == 3_609_375


def test_priority_bounds():
    with pytest.raises(ParameterError):
        FailoverConfig(priority=0)
    with pytest.raises(ParameterError):
        FailoverConfig(priority=255)


def test_backup_with_regular_adverts_stays_backup():
    cfg = FailoverConfig(100)
    st_ = HaNodeState.start_backup(srv(1), cfg)
    for t in range(1, 200):
        st_, acts = ha_step(st_, cfg, AdvertReceived(200, srv(0)), t * S)
        assert acts == [] and st_.state is HaState.BACKUP
        st_, acts = ha_step(st_, cfg, TimerExpired(), t * S + S // 2)  # early, ignored
        assert st_.state is HaState.BACKUP


def test_takeover_after_master_silenced_at_10s():
    cfg = FailoverConfig(100)
    st_ = HaNodeState.start_backup(srv(1), cfg)
    for t in range(1, 11):
        st_, _ = ha_step(st_, cfg, AdvertReceived(200, srv(0)), t * S)
    deadline = st_.deadline()
    st_, acts = ha_step(st_, cfg, TimerExpired(), deadline)
    assert st_.state is HaState.MASTER
    assert acts == [Action.ASSUME_MASTER, Action.SEND_ADVERT]
    assert abs(deadline - 13_609_000) <= S


def test_fault_and_recovery():
    cfg = FailoverConfig(200)
    m = HaNodeState.start_master(srv(0), cfg)
    m, acts = ha_step(m, cfg, LocalFault(), 5 * S)
    assert m.state is HaState.FAULT and acts == [Action.RELEASE_MASTER]
    m, acts = ha_step(m, cfg, AdvertReceived(100, srv(1)), 6 * S)
    assert m.state is HaState.FAULT
    m, acts = ha_step(m, cfg, FaultCleared(), 7 * S)
    assert m.state is HaState.BACKUP and m.deadline() == 7 * S + cfg.master_down_interval_us


def test_preempting_backup_ignores_weaker_master():
    cfg = FailoverConfig(200)
    b = HaNodeState.start_backup(srv(0), cfg)
    b, _ = ha_step(b, cfg, AdvertReceived(100, srv(1)), S)
    assert b.deadline() == cfg.master_down_interval_us  # not refreshed


def test_master_yields_to_stronger_advert():
    cfg = FailoverConfig(100)
    m = HaNodeState.start_master(srv(1), cfg)
    m, acts = ha_step(m, cfg, AdvertReceived(200, srv(0)), S)
    assert m.state is HaState.BACKUP and acts == [Action.RELEASE_MASTER]


def test_equal_priority_higher_index_wins():
    cfg = FailoverConfig(100)
    m = HaNodeState.start_master(srv(0), cfg)
    m, _ = ha_step(m, cfg, AdvertReceived(100, srv(1)), S)
    assert m.state is HaState.BACKUP
    m2 = HaNodeState.start_master(srv(1), cfg)
    m2, _ = ha_step(m2, cfg, AdvertReceived(100, srv(0)), S)
    assert m2.state is HaState.MASTER


def test_own_advert_ignored():
    cfg = FailoverConfig(100)
    b = HaNodeState.start_backup(srv(1), cfg)
    assert ha_step(b, cfg, AdvertReceived(200, srv(1)), S) == (b, [])


# --- a small cluster driver used as an independent check -------------------

class Cluster:
    def __init__(self, prios, master=None):
        self.sim = Simulator()
        self.cfg = {i: FailoverConfig(p) for i, p in enumerate(prios)}
        self.state = {i: (HaNodeState.start_master(srv(i), c) if i == master
                          else HaNodeState.start_backup(srv(i), c)) for i, c in self.cfg.items()}
        self.gen = {i: 0 for i in self.cfg}
        self.history = []  # (time, node, new state)
        for i in self.cfg:
            self._arm(i)

    def _arm(self, i):
        self.gen[i] += 1
        dl = self.state[i].deadline()
        if dl is not None:
            self.sim.schedule(dl, self._timer, i, self.gen[i])

    def _timer(self, i, g):
        if g == self.gen[i]:
            self.step(i, TimerExpired())

    def step(self, i, ev):
        old = self.state[i]
        new, acts = ha_step(old, self.cfg[i], ev, self.sim.now)
        self.state[i] = new
        if new.state is not old.state:
            self.history.append((self.sim.now, i, new.state))
        if new.deadline() != old.deadline():
            self._arm(i)
        if Action.SEND_ADVERT in acts:
            for j in self.cfg:
                if j != i and self.state[j].state is not HaState.FAULT:
                    self.step(j, AdvertReceived(self.cfg[i].priority, srv(i)))

    def masters(self):
        return [i for i, s in self.state.items() if s.state is HaState.MASTER]


def test_strongest_backup_wins_after_master_dies():
    c = Cluster([254, 100, 200], master=0)
    c.sim.run_until(10 * S)
    c.step(0, LocalFault())
    c.sim.run_until(30 * S)
    assert c.masters() == [2]


def test_cold_start_elects_highest_priority():
    c = Cluster([100, 200, 150])
    c.sim.run_until(20 * S)
    assert c.masters() == [1]


@given(st.lists(st.tuples(st.integers(0, 2), st.booleans(), st.integers(1, 5 * S)),
                min_size=1, max_size=8))
def test_single_master_and_liveness(script):
    prios = [200, 100, 150]
    c = Cluster(prios, master=0)
    mdi = max(cfg.master_down_interval_us for cfg in c.cfg.values())
    t = S
    for node, down, gap in script:
        t += gap
        c.sim.run_until(t)
        c.step(node, LocalFault() if down else FaultCleared())
    settle = t + 2 * mdi
    c.sim.run_until(settle)
    alive = [i for i, s in c.state.items() if s.state is not HaState.FAULT]
    if alive:
        assert c.masters() == [max(alive, key=lambda i: prios[i])]
    else:
        assert c.masters() == []


# --- balancer ----------------------------------------------------------------

def test_round_robin_order():
    b = BalancerState([srv(0), srv(1)])
    assert [balance_assign(b, tag(i)) for i in range(4)] == [srv(0), srv(1), srv(0), srv(1)]


def test_single_backend_takes_everything():
    b = BalancerState([srv(0)])
    assert {balance_assign(b, tag(i)) for i in range(10)} == {srv(0)}


def test_even_split_of_100_tags():
    b = BalancerState([srv(0), srv(1)])
    for i in range(100):
        balance_assign(b, tag(i))
    assert b.counts() == {srv(0): 50, srv(1): 50}


def test_no_backend_raises():
    with pytest.raises(NoBackendError):
        balance_assign(BalancerState([]), tag(0))


def test_survivor_takes_all_orphans():
    b = BalancerState([srv(0), srv(1)])
    for i in range(10):
        balance_assign(b, tag(i))
    after = balance_on_backend_down(b, srv(1))
    assert set(after.assignments.values()) == {srv(0)} and len(after.assignments) == 10


def test_orphans_split_over_two_survivors():
    b = BalancerState([srv(0), srv(1), srv(2)])
    for i in range(100):
        balance_assign(b, tag(i))
    assert sorted(b.counts().values()) == [33, 33, 34]
    orphans = [t for t, s in b.assignments.items() if s == srv(2)]
    after = balance_on_backend_down(b, srv(2))
    moved = [after.assignments[t] for t in orphans]
    assert abs(moved.count(srv(0)) - moved.count(srv(1))) <= 1
    assert min(moved.count(srv(0)), moved.count(srv(1))) >= 16


def test_readding_does_not_move_stayers():
    b = BalancerState([srv(0), srv(1), srv(2)])
    for i in range(30):
        balance_assign(b, tag(i))
    down = balance_on_backend_down(b, srv(1))
    up = balance_on_backend_up(down, srv(1))
    for i in range(30):
        balance_assign(up, tag(i))
    stayers = [t for t, s in b.assignments.items() if s != srv(1)]
    assert all(up.assignments[t] == b.assignments[t] for t in stayers)


def test_removing_unknown_backend_fails():
    with pytest.raises(ParameterError):
        balance_on_backend_down(BalancerState([srv(0)]), srv(3))


@given(st.integers(1, 6), st.integers(0, 300))
def test_balance_within_one(k, n):
    b = BalancerState([srv(i) for i in range(k)])
    for i in range(n):
        balance_assign(b, tag(i))
    counts = list(b.counts().values())
    assert max(counts) - min(counts) <= 1


@given(st.lists(st.tuples(st.sampled_from(["assign", "down", "up"]), st.integers(0, 3),
                          st.integers(0, 40)), max_size=60))
def test_sticky_and_consistent(ops):
    b = BalancerState([srv(i) for i in range(4)])
    for op, s, t in ops:
        before = dict(b.assignments)
        if op == "assign" and b.online_backends:
            balance_assign(b, tag(t))
        elif op == "down" and srv(s) in b.online_backends:
            b = balance_on_backend_down(b, srv(s))
        elif op == "up":
            b = balance_on_backend_up(b, srv(s))
        for tg, prev in before.items():
            if prev in b.online_backends:
                assert b.assignments.get(tg) == prev
        assert all(v in b.online_backends for v in b.assignments.values())
