"""Domain types, simulation time, identifiers and seeded random streams.

Simulation time is an ``int`` number of microseconds since scenario start.
Every other module uses these types; nothing here depends on them.
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ParameterError

#: Integer microseconds since scenario start.
SimTime = int

US_PER_S = 1_000_000
UINT64_MASK = (1 << 64) - 1


def seconds_to_us(seconds: float) -> SimTime:
    """Round a duration in seconds to the nearest microsecond."""
    return int(round(seconds * US_PER_S))


def us_to_seconds(us: SimTime) -> float:
    return us / US_PER_S


class NodeKind(str, enum.Enum):
    TAG = "tag"
    ANCHOR = "anchor"
    EDGE = "edge"
    SERVER = "server"
    BROKER = "broker"


@dataclass(frozen=True, order=True)
class NodeId:
    kind: NodeKind
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ParameterError(f"node index must be non-negative, got {self.index}")
        if not isinstance(self.kind, NodeKind):
            object.__setattr__(self, "kind", NodeKind(self.kind))

    def __str__(self) -> str:
        return f"{self.kind.value}{self.index}"

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        """Inverse of ``str()``: ``"server1"`` -> ``NodeId(SERVER, 1)``."""
        for kind in NodeKind:
            if text.startswith(kind.value) and text[len(kind.value):].isdigit():
                return cls(kind, int(text[len(kind.value):]))
        raise ParameterError(f"cannot parse node id {text!r}")


def tag(i: int) -> NodeId:
    return NodeId(NodeKind.TAG, i)


def anchor(i: int) -> NodeId:
    return NodeId(NodeKind.ANCHOR, i)


def edge(i: int) -> NodeId:
    return NodeId(NodeKind.EDGE, i)


def server(i: int) -> NodeId:
    return NodeId(NodeKind.SERVER, i)


@dataclass(frozen=True)
class Position2D:
    x_m: float
    y_m: float

    def __post_init__(self):
        if not (math.isfinite(self.x_m) and math.isfinite(self.y_m)):
            raise ParameterError(f"non-finite position ({self.x_m}, {self.y_m})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_m, self.y_m], dtype=float)

    def __iter__(self):
        yield self.x_m
        yield self.y_m


class MessageKind(str, enum.Enum):
    UWB = "uwb"
    IMU = "imu"


@dataclass(frozen=True)
class UwbPayload:
    """Position fix computed at the edge from one ranging epoch."""

    est_x_m: float
    est_y_m: float
    residual_rms_m: float


@dataclass(frozen=True)
class ImuPayload:
    accel_mps2: tuple
    gyro_radps: tuple
    mag_uT: tuple
    orientation: tuple
    linear_accel_mps2: tuple


Payload = Union[UwbPayload, ImuPayload]


@dataclass(frozen=True)
class Envelope:
    tag_id: NodeId
    seq: int
    kind: MessageKind
    sent_at: SimTime
    payload: Payload

    def __post_init__(self):
        if self.seq < 0:
            raise ParameterError("seq must be non-negative")
        if self.sent_at < 0:
            raise ParameterError("sent_at must be non-negative")
        expected = UwbPayload if self.kind is MessageKind.UWB else ImuPayload
        if not isinstance(self.payload, expected):
            raise ParameterError(f"{self.kind.value} envelope carries {type(self.payload).__name__}")

    @property
    def topic(self) -> str:
        return f"tags/{self.tag_id.index}/{self.kind.value}"

    @property
    def key(self) -> tuple:
        return (self.tag_id.index, self.kind.value, self.seq)


def _label_words(label: str) -> tuple[int, ...]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


@dataclass
class RngStream:
    """Reproducible random substream identified by ``(seed, stream_label)``.

    Backed by numpy's PCG64 seeded through ``SeedSequence`` with the label
    hashed into the spawn key, so each labelled stream is independent of
    how many draws any other stream has made.
    """

    seed: int
    stream_label: str
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not self.stream_label:
            raise ParameterError("stream label must be non-empty")
        self.seed = int(self.seed) & UINT64_MASK
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=_label_words(self.stream_label))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def normal(self, mean=0.0, sigma=1.0, size=None):
        return self.generator.normal(mean, sigma, size)

    def uniform(self, size=None):
        return self.generator.random(size)

    def substream(self, suffix: str) -> "RngStream":
        return RngStream(self.seed, f"{self.stream_label}/{suffix}")


def derive_stream(seed: int, label: str) -> RngStream:
    return RngStream(seed, label)


def next_gaussian(stream: RngStream, mean: float, sigma: float) -> float:
    """One draw from Normal(mean, sigma**2); ``sigma == 0`` returns ``mean`` exactly."""
    if not math.isfinite(sigma):
        raise ParameterError("sigma must be finite")
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    draw = float(stream.generator.standard_normal())
    if sigma == 0:
        return float(mean)
    return float(mean) + sigma * draw
