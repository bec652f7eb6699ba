"""Scenario and sweep configuration, JSON (de)serialisation and validation."""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

import jsonschema

from .core import NodeId, NodeKind, Position2D, UINT64_MASK, seconds_to_us
from .errors import ParameterError, ValidationError, WearbedError
from .ha import FailoverConfig
from .localization import Anchor, AnchorSet, RangingNoiseModel, anchor_set_problems
from .motion import ImuNoise, Trajectory
from .netsim import LinkModel

MAX_RATE_HZ = 1000.0


class ServerConfig(str, enum.Enum):
    MASTER_ONLY = "MasterOnly"
    BACKUP_ONLY = "BackupOnly"
    MASTER_AND_BACKUP = "MasterAndBackup"

    @property
    def server_indices(self) -> tuple:
        return {"MasterOnly": (0,), "BackupOnly": (1,), "MasterAndBackup": (0, 1)}[self.value]


@dataclass(frozen=True)
class TagSpec:
    index: int
    trajectory: Trajectory
    uwb_hz: float = 10.0
    imu_hz: Optional[float] = 100.0  # None disables the IMU stream

    @property
    def id(self) -> NodeId:
        return NodeId(NodeKind.TAG, self.index)


@dataclass(frozen=True)
class EdgeSpec:
    count: int = 3
    online: Optional[tuple] = None  # None means every edge is online

    @property
    def online_indices(self) -> tuple:
        return tuple(range(self.count)) if self.online is None else tuple(sorted(self.online))


@dataclass(frozen=True)
class FailoverSettings:
    master_priority: int = 200
    backup_priority: int = 100
    advert_interval_us: int = 1_000_000
    preempt: bool = True
    health_check_us: Optional[int] = None  # default: 3 advert intervals

    def for_server(self, index: int) -> FailoverConfig:
        prio = self.master_priority if index == 0 else self.backup_priority
        return FailoverConfig(prio, self.advert_interval_us, self.preempt)

    @property
    def health_check_delay_us(self) -> int:
        return 3 * self.advert_interval_us if self.health_check_us is None else self.health_check_us


@dataclass(frozen=True)
class FailureInjection:
    at_us: int
    node: NodeId
    action: str  # "Down" | "Up"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    duration_s: float
    anchors: AnchorSet
    tags: tuple
    edges: EdgeSpec = EdgeSpec()
    servers: ServerConfig = ServerConfig.MASTER_AND_BACKUP
    link: LinkModel = LinkModel()
    noise: RangingNoiseModel = RangingNoiseModel()
    imu_noise: ImuNoise = ImuNoise()
    failover: FailoverSettings = FailoverSettings()
    failure_injections: tuple = ()
    imu_dt_s: float = 0.01

    @property
    def duration_us(self) -> int:
        return seconds_to_us(self.duration_s)

    def server_ids(self) -> list:
        return [NodeId(NodeKind.SERVER, i) for i in self.servers.server_indices]

    def problems(self) -> list[str]:
        """Every invariant this configuration violates."""
        out = []
        if not self.name:
            out.append("name must be non-empty")
        if not (isinstance(self.seed, int) and 0 <= self.seed <= UINT64_MASK):
            out.append(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not (math.isfinite(self.duration_s) and self.duration_s > 0):
            out.append(f"duration_s must be > 0, got {self.duration_s}")
        out.extend(anchor_set_problems(self.anchors.anchors))
        if not self.tags:
            out.append("at least one tag is required")
        idx = [t.index for t in self.tags]
        if len(set(idx)) != len(idx):
            out.append("tag indices must be unique")
        for t in self.tags:
            if not (0 < t.uwb_hz <= MAX_RATE_HZ):
                out.append(f"tag{t.index}: uwb_hz must lie in (0, 1000], got {t.uwb_hz}")
            if t.imu_hz is not None and not (0 < t.imu_hz <= MAX_RATE_HZ):
                out.append(f"tag{t.index}: imu_hz must lie in (0, 1000], got {t.imu_hz}")
        if self.edges.count < 1:
            out.append("edges.count must be >= 1")
        online = self.edges.online_indices
        if any(not 0 <= e < self.edges.count for e in online):
            out.append(f"edges.online {list(online)} references edges outside 0..{self.edges.count - 1}")
        if not online:
            out.append("at least one edge must be online")
        servers = set(self.server_ids())
        for inj in self.failure_injections:
            if inj.action not in ("Down", "Up"):
                out.append(f"failure injection action must be Down or Up, got {inj.action!r}")
            if inj.node.kind is NodeKind.SERVER and inj.node not in servers:
                out.append(f"failure injection targets {inj.node}, absent in {self.servers.value}")
            elif inj.node.kind is NodeKind.EDGE and not 0 <= inj.node.index < self.edges.count:
                out.append(f"failure injection targets unknown {inj.node}")
            elif inj.node.kind not in (NodeKind.SERVER, NodeKind.EDGE):
                out.append(f"failure injection can only target servers or edges, got {inj.node}")
            if not 0 <= inj.at_us <= self.duration_us:
                out.append(f"failure injection at {inj.at_us} us lies outside the run")
        if not self.imu_dt_s > 0:
            out.append("imu_dt_s must be > 0")
        return out

    def validate(self) -> "ScenarioConfig":
        problems = self.problems()
        if problems:
            raise ValidationError(problems)
        return self


def _cell_hash(n_tags: int, freq_hz: float, server_config: ServerConfig) -> int:
    text = f"{n_tags}|{freq_hz!r}|{ServerConfig(server_config).value}"
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def cell_seed(base_seed: int, n_tags: int, freq_hz: float, server_config) -> int:
    return (int(base_seed) ^ _cell_hash(n_tags, float(freq_hz), server_config)) & UINT64_MASK


@dataclass(frozen=True)
class SweepConfig:
    base: ScenarioConfig
    tag_counts: tuple = (1, 10, 25, 50, 100)
    freqs_hz: tuple = (1.0, 10.0, 100.0, 1000.0)
    server_configs: tuple = (ServerConfig.MASTER_ONLY, ServerConfig.BACKUP_ONLY,
                             ServerConfig.MASTER_AND_BACKUP)

    def cells(self) -> list:
        return [(n, float(f), ServerConfig(s)) for s in self.server_configs
                for n in self.tag_counts for f in self.freqs_hz]

    def cell_config(self, n_tags: int, freq_hz: float, server_config) -> ScenarioConfig:
        """Scenario for one grid cell: ``n_tags`` copies of the base tag templates,
        both streams at ``freq_hz``, seeded from the cell coordinates."""
        sc = ServerConfig(server_config)
        templates = self.base.tags
        tags = tuple(TagSpec(i, templates[i % len(templates)].trajectory, float(freq_hz),
                             None if templates[i % len(templates)].imu_hz is None else float(freq_hz))
                     for i in range(n_tags))
        return replace(self.base,
                       name=f"{self.base.name}/{sc.value}/tags{n_tags}/f{freq_hz:g}",
                       seed=cell_seed(self.base.seed, n_tags, freq_hz, sc),
                       tags=tags, servers=sc,
                       failure_injections=tuple(i for i in self.base.failure_injections
                                                if i.node.kind is not NodeKind.SERVER
                                                or i.node.index in sc.server_indices))

    def problems(self) -> list[str]:
        out = [f"base: {p}" for p in self.base.problems()]
        if not self.tag_counts or any(n < 1 for n in self.tag_counts):
            out.append("tag_counts must be non-empty positive integers")
        if not self.freqs_hz or any(not 0 < f <= MAX_RATE_HZ for f in self.freqs_hz):
            out.append("freqs_hz must be non-empty and within (0, 1000]")
        if not self.server_configs:
            out.append("server_configs must be non-empty")
        return out

    def validate(self) -> "SweepConfig":
        problems = self.problems()
        if problems:
            raise ValidationError(problems)
        return self


# --- JSON -----------------------------------------------------------------

def _schema(name: str) -> dict:
    return json.loads(resources.files("wearbed.schemas").joinpath(name).read_text())


def _schema_errors(data, name: str, prefix: str = "") -> list[str]:
    validator = jsonschema.Draft202012Validator(_schema(name))
    out = []
    for err in sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.path))):
        where = "/".join(str(p) for p in err.path) or "<root>"
        out.append(f"{prefix}{where}: {err.message}")
    return out


def _trajectory_from(d) -> Trajectory:
    wps = tuple((seconds_to_us(w["t_s"]), Position2D(float(w["x_m"]), float(w["y_m"])))
                for w in d["waypoints"])
    return Trajectory(wps, bool(d.get("wrap", False)))


def scenario_from_dict(data: dict) -> ScenarioConfig:
    """Build and validate a ScenarioConfig, reporting every violation at once."""
    problems = _schema_errors(data, "scenario.schema.json")
    if problems:
        raise ValidationError(problems)

    def attempt(label, fn):
        try:
            return fn()
        except (WearbedError, ValueError) as exc:
            problems.append(f"{label}: {exc}")
            return None

    anchors_raw = [Anchor(NodeId(NodeKind.ANCHOR, int(a.get("index", i))),
                          Position2D(float(a["x_m"]), float(a["y_m"])))
                   for i, a in enumerate(data["anchors"])]
    anchor_problems = anchor_set_problems(anchors_raw)
    problems.extend(f"anchors: {p}" for p in anchor_problems)
    anchors = None if anchor_problems else AnchorSet(tuple(anchors_raw))

    tags = []
    for i, t in enumerate(data["tags"]):
        traj = attempt(f"tags[{i}].trajectory", lambda t=t: _trajectory_from(t["trajectory"]))
        if traj is not None:
            imu = t.get("imu_hz", 100.0)
            tags.append(TagSpec(int(t.get("index", i)), traj, float(t.get("uwb_hz", 10.0)),
                                None if imu is None else float(imu)))
    edges_raw = data.get("edges", {})
    edges = EdgeSpec(int(edges_raw.get("count", 3)),
                     None if edges_raw.get("online") is None else tuple(edges_raw["online"]))
    link = attempt("link", lambda: LinkModel(**data.get("link", {})))
    noise = attempt("noise", lambda: RangingNoiseModel(**data.get("noise", {})))
    imu_noise = attempt("imu_noise", lambda: ImuNoise(**data.get("imu_noise", {})))
    failover = FailoverSettings(**data.get("failover", {}))
    attempt("failover", lambda: (failover.for_server(0), failover.for_server(1)))
    injections = []
    for i, inj in enumerate(data.get("failure_injections", [])):
        node = attempt(f"failure_injections[{i}].node", lambda inj=inj: NodeId.parse(inj["node"]))
        if node is not None:
            injections.append(FailureInjection(seconds_to_us(inj["t_s"]), node, inj["action"]))

    if anchors is None or link is None or noise is None or imu_noise is None:
        raise ValidationError(problems)
    cfg = ScenarioConfig(
        name=data["name"], seed=int(data.get("seed", 0)), duration_s=float(data["duration_s"]),
        anchors=anchors, tags=tuple(tags), edges=edges, servers=ServerConfig(data.get("servers", "MasterAndBackup")),
        link=link, noise=noise, imu_noise=imu_noise, failover=failover,
        failure_injections=tuple(injections), imu_dt_s=float(data.get("imu_dt_s", 0.01)))
    problems.extend(cfg.problems())
    if problems:
        raise ValidationError(problems)
    return cfg


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "name": cfg.name,
        "seed": cfg.seed,
        "duration_s": cfg.duration_s,
        "anchors": [{"index": a.id.index, "x_m": a.position.x_m, "y_m": a.position.y_m}
                    for a in cfg.anchors],
        "tags": [{
            "index": t.index,
            "trajectory": {"waypoints": [{"t_s": tu / 1e6, "x_m": p.x_m, "y_m": p.y_m}
                                         for tu, p in t.trajectory.waypoints],
                           "wrap": t.trajectory.wrap},
            "uwb_hz": t.uwb_hz, "imu_hz": t.imu_hz} for t in cfg.tags],
        "edges": {"count": cfg.edges.count,
                  "online": None if cfg.edges.online is None else list(cfg.edges.online)},
        "servers": cfg.servers.value,
        "link": vars(cfg.link).copy(),
        "noise": vars(cfg.noise).copy(),
        "imu_noise": vars(cfg.imu_noise).copy(),
        "failover": vars(cfg.failover).copy(),
        "failure_injections": [{"t_s": i.at_us / 1e6, "node": str(i.node), "action": i.action}
                               for i in cfg.failure_injections],
        "imu_dt_s": cfg.imu_dt_s,
    }


def sweep_from_dict(data: dict) -> SweepConfig:
    problems = _schema_errors(data, "sweep.schema.json")
    if problems:
        raise ValidationError(problems)
    base_data = dict(data["base"])
    base = scenario_from_dict(base_data)
    kwargs = {}
    if "tag_counts" in data:
        kwargs["tag_counts"] = tuple(int(n) for n in data["tag_counts"])
    if "freqs_hz" in data:
        kwargs["freqs_hz"] = tuple(float(f) for f in data["freqs_hz"])
    if "server_configs" in data:
        kwargs["server_configs"] = tuple(ServerConfig(s) for s in data["server_configs"])
    return SweepConfig(base, **kwargs).validate()


def sweep_to_dict(sweep: SweepConfig) -> dict:
    return {"base": scenario_to_dict(sweep.base), "tag_counts": list(sweep.tag_counts),
            "freqs_hz": list(sweep.freqs_hz),
            "server_configs": [ServerConfig(s).value for s in sweep.server_configs]}


def load_json(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError([f"{path}: not valid JSON ({exc})"]) from exc


def load_scenario(path) -> ScenarioConfig:
    return scenario_from_dict(load_json(path))


def load_sweep(path) -> SweepConfig:
    return sweep_from_dict(load_json(path))
