"""Built-in replications of the static, dynamic, failover and stress experiments.

The anchor layout (0,0), (6,0), (0,6) is our own choice; it encloses every
checkpoint used below.
"""
from __future__ import annotations

from dataclasses import replace

from .config import (EdgeSpec, FailureInjection, ScenarioConfig, ServerConfig, SweepConfig,
                     TagSpec)
from .core import NodeId, NodeKind, Position2D, seconds_to_us
from .localization import AnchorSet, RangingNoiseModel
from .motion import ImuNoise, Trajectory
from .netsim import LinkModel

DEFAULT_ANCHORS = ((0.0, 0.0), (6.0, 0.0), (0.0, 6.0))

# Static checkpoints and the positions the testbed reported for them.
P1, P2, P3 = Position2D(1.55, 0.0), Position2D(1.9115, 5.938), Position2D(5.353, 2.724)
R1, R2, R3 = Position2D(1.65, 0.0), Position2D(1.9115, 6.038), Position2D(5.453, 2.724)
CHECKPOINTS = {"P1": P1, "P2": P2, "P3": P3}
RECORDED = {"P1": R1, "P2": R2, "P3": R3}

# Dynamic checkpoints, walked in 8 s.
D1, D2, D3 = Position2D(1.0, 1.0), Position2D(3.5, 2.0), Position2D(5.0, 3.5)
DYNAMIC_DURATION_S = 8.0

STATIC_DWELL_S = 60.0
DEFAULT_SEED = 42


def default_anchors() -> AnchorSet:
    return AnchorSet.from_xy(DEFAULT_ANCHORS)


def checkpoint_trajectory(points=(P1, P2, P3), dwell_s: float = STATIC_DWELL_S) -> Trajectory:
    """Stand still at each point for ``dwell_s``, hopping instantly between them."""
    dwell = seconds_to_us(dwell_s)
    wps = []
    for i, p in enumerate(points):
        wps.append((i * dwell, p))
        wps.append(((i + 1) * dwell - 1, p))
    return Trajectory(tuple(wps))


def dynamic_trajectory() -> Trajectory:
    """D1 -> D2 -> D3 at constant speed, arriving at D3 after 8 s."""
    legs = [D2.as_array() - D1.as_array(), D3.as_array() - D2.as_array()]
    lengths = [float((leg ** 2).sum() ** 0.5) for leg in legs]
    t_d2 = DYNAMIC_DURATION_S * lengths[0] / sum(lengths)
    return Trajectory(((0, D1), (seconds_to_us(t_d2), D2), (seconds_to_us(DYNAMIC_DURATION_S), D3)))


def _base(name: str, duration_s: float, tags, **kw) -> ScenarioConfig:
    return ScenarioConfig(name=name, seed=DEFAULT_SEED, duration_s=duration_s,
                          anchors=default_anchors(), tags=tuple(tags), **kw)


def static_checkpoints(sigma_m: float = 0.10) -> ScenarioConfig:
    traj = checkpoint_trajectory()
    return _base("static_checkpoints", 3 * STATIC_DWELL_S, [TagSpec(0, traj)],
                 noise=RangingNoiseModel(sigma_m=sigma_m))


def dynamic_path() -> ScenarioConfig:
    return _base("dynamic_path", DYNAMIC_DURATION_S, [TagSpec(0, dynamic_trajectory())],
                 imu_noise=ImuNoise(accel_mps2=0.02, gyro_radps=0.002, mag_uT=0.5))


def _spread_tags(n: int, uwb_hz: float, imu_hz):
    spots = [P1, P2, P3, Position2D(2.0, 2.0)]
    return [TagSpec(i, Trajectory.stationary(spots[i % len(spots)]), uwb_hz, imu_hz)
            for i in range(n)]


def failover_master_down() -> ScenarioConfig:
    """Ten tags, both servers, master killed at t = 10 s."""
    return _base("failover_master_down", 30.0, _spread_tags(10, 10.0, 100.0),
                 servers=ServerConfig.MASTER_AND_BACKUP,
                 failure_injections=(FailureInjection(seconds_to_us(10.0),
                                                      NodeId(NodeKind.SERVER, 0), "Down"),))


def stress_default(duration_s: float = 30.0) -> SweepConfig:
    """The 5 x 4 x 3 tags/frequency/server grid.

    The flat ``base_loss`` is zero here so that any loss in the grid comes
    from load; a Bernoulli floor of 1e-3 on a handful of messages would
    otherwise dominate the low-load cells with sampling noise.
    """
    base = _base("stress_default", duration_s, _spread_tags(4, 10.0, 10.0),
                 link=replace(LinkModel(), base_loss=0.0), edges=EdgeSpec(3))
    return SweepConfig(base)


def builtin_scenarios() -> dict:
    """Name -> ScenarioConfig (or SweepConfig for ``stress_default``)."""
    return {
        "static_checkpoints": static_checkpoints(),
        "dynamic_path": dynamic_path(),
        "failover_master_down": failover_master_down(),
        "stress_default": stress_default(),
    }
