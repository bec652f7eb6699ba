"""UWB two-way ranging model and 2D trilateration.

The solver is Gauss-Newton on the range residuals, started from the
linearised closed form. ``grid_oracle`` is a deliberately naive exhaustive
search used only to cross-check the solver.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import NodeId, NodeKind, Position2D, RngStream, SimTime
from .errors import DegenerateGeometryError, InsufficientGeometryError, ParameterError

SPEED_OF_LIGHT_MPS = 299_792_458.0
MIN_TRIANGLE_AREA_M2 = 1e-6
MAD_SCALE = 1.4826


@dataclass(frozen=True)
class Anchor:
    id: NodeId
    position: Position2D


def triangle_area(a, b, c) -> float:
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))


def max_triangle_area(points: np.ndarray) -> float:
    best = 0.0
    for i, j, k in itertools.combinations(range(len(points)), 3):
        best = max(best, triangle_area(points[i], points[j], points[k]))
    return best


@dataclass(frozen=True)
class AnchorSet:
    anchors: tuple

    def __post_init__(self):
        anchors = tuple(self.anchors)
        object.__setattr__(self, "anchors", anchors)
        problems = anchor_set_problems(anchors)
        if problems:
            if len(anchors) < 3:
                raise InsufficientGeometryError(problems[0])
            if any("collinear" in p for p in problems):
                raise DegenerateGeometryError("; ".join(problems))
            raise ParameterError("; ".join(problems))

    @classmethod
    def from_xy(cls, coords: Sequence[Sequence[float]]) -> "AnchorSet":
        return cls(tuple(Anchor(NodeId(NodeKind.ANCHOR, i), Position2D(float(x), float(y)))
                         for i, (x, y) in enumerate(coords)))

    @property
    def positions(self) -> np.ndarray:
        return np.array([[a.position.x_m, a.position.y_m] for a in self.anchors], dtype=float)

    @property
    def ids(self) -> list:
        return [a.id for a in self.anchors]

    def __len__(self):
        return len(self.anchors)

    def __iter__(self):
        return iter(self.anchors)


def anchor_set_problems(anchors) -> list[str]:
    """Every AnchorSet invariant violated by ``anchors`` (empty when valid)."""
    problems = []
    if len(anchors) < 3:
        problems.append(f"need at least 3 anchors, got {len(anchors)}")
    ids = [a.id for a in anchors]
    if len(set(ids)) != len(ids):
        problems.append("anchor ids are not unique")
    if len(anchors) >= 3:
        pts = np.array([[a.position.x_m, a.position.y_m] for a in anchors], dtype=float)
        if max_triangle_area(pts) <= MIN_TRIANGLE_AREA_M2:
            problems.append("anchors are collinear (no triangle with area > 1e-6 m^2)")
    return problems


@dataclass(frozen=True)
class RangeMeasurement:
    anchor_id: NodeId
    distance_m: float
    measured_at: SimTime = 0

    def __post_init__(self):
        if not math.isfinite(self.distance_m) or self.distance_m < 0:
            raise ParameterError(f"distance must be finite and >= 0, got {self.distance_m}")


@dataclass(frozen=True)
class RangeSet:
    tag_id: NodeId
    epoch: SimTime
    measurements: tuple

    def __post_init__(self):
        object.__setattr__(self, "measurements", tuple(self.measurements))
        ids = [m.anchor_id for m in self.measurements]
        if len(set(ids)) != len(ids):
            raise ParameterError("more than one measurement per anchor in one epoch")

    @classmethod
    def from_distances(cls, anchors: AnchorSet, distances, tag_id=None, epoch: SimTime = 0):
        tag_id = tag_id or NodeId(NodeKind.TAG, 0)
        return cls(tag_id, epoch, tuple(RangeMeasurement(a.id, float(d), epoch)
                                        for a, d in zip(anchors, distances)))


@dataclass(frozen=True)
class PositionFix:
    position: Position2D
    residual_rms_m: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class RangingNoiseModel:
    sigma_m: float = 0.10
    bias_m: float = 0.0
    outlier_prob: float = 0.0
    outlier_sigma_m: float = 1.0

    def __post_init__(self):
        if not self.sigma_m >= 0:
            raise ParameterError("sigma_m must be >= 0")
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise ParameterError("outlier_prob must lie in [0, 1]")
        if not self.outlier_sigma_m >= 0:
            raise ParameterError("outlier_sigma_m must be >= 0")


def distance_from_tof(round_trip_tof: float) -> float:
    """Two-way ranging: one-way distance for a round-trip time of flight in seconds."""
    if not math.isfinite(round_trip_tof):
        raise ParameterError("time of flight must be finite")
    if round_trip_tof < 0:
        raise ParameterError(f"time of flight must be >= 0, got {round_trip_tof}")
    return SPEED_OF_LIGHT_MPS * round_trip_tof / 2.0


def simulate_ranges(true_xy: np.ndarray, anchor_xy: np.ndarray, noise: RangingNoiseModel,
                    rng: RngStream) -> np.ndarray:
    """Noisy distances for K true positions to m anchors, shape (K, m).

    The stream is always advanced by three (K, m) blocks (gaussian, outlier
    coin, outlier gaussian) so draws line up regardless of the noise settings.
    """
    true_xy = np.atleast_2d(np.asarray(true_xy, dtype=float))
    anchor_xy = np.asarray(anchor_xy, dtype=float)
    shape = (true_xy.shape[0], anchor_xy.shape[0])
    g = rng.generator
    z = g.standard_normal(shape)
    coin = g.random(shape)
    z_out = g.standard_normal(shape)
    d = np.linalg.norm(true_xy[:, None, :] - anchor_xy[None, :, :], axis=2)
    d = d + noise.bias_m + noise.sigma_m * z
    d = d + np.where(coin < noise.outlier_prob, noise.outlier_sigma_m * z_out, 0.0)
    return np.maximum(d, 0.0)


def simulate_range(true_pos: Position2D, anchor: Anchor, noise: RangingNoiseModel,
                   rng: RngStream, measured_at: SimTime = 0) -> RangeMeasurement:
    d = simulate_ranges(np.array([[true_pos.x_m, true_pos.y_m]]),
                        np.array([[anchor.position.x_m, anchor.position.y_m]]), noise, rng)
    return RangeMeasurement(anchor.id, float(d[0, 0]), measured_at)


def linearized_fix(anchor_xy: np.ndarray, distances: np.ndarray) -> np.ndarray:
    """Closed-form start point: subtract the first anchor's circle from the rest.

    ``distances`` is (K, m); returns (K, 2).
    """
    a0 = anchor_xy[0]
    A = 2.0 * (anchor_xy[1:] - a0)
    d = np.atleast_2d(distances)
    b = (np.sum(anchor_xy[1:] ** 2, axis=1) - np.sum(a0 ** 2)
         - d[:, 1:] ** 2 + d[:, :1] ** 2)
    return b @ np.linalg.pinv(A).T


def _cost(p, anchor_xy, d):
    r = np.linalg.norm(p[:, None, :] - anchor_xy[None, :, :], axis=2)
    return np.sum((r - d) ** 2, axis=1)


def trilaterate_batch(anchor_xy, distances, max_iterations: int = 50, tol_m: float = 1e-6,
                      initial=None):
    """Vectorised Gauss-Newton over K independent epochs sharing one anchor layout.

    Returns ``(positions (K,2), residual_rms (K,), iterations (K,), converged (K,))``.
    A step that increases the cost is halved (at most 30 times) before it is taken.
    """
    anchor_xy = np.asarray(anchor_xy, dtype=float)
    d = np.atleast_2d(np.asarray(distances, dtype=float))
    K = d.shape[0]
    p = linearized_fix(anchor_xy, d) if initial is None else np.array(initial, dtype=float).reshape(K, 2)
    iterations = np.zeros(K, dtype=np.int64)
    converged = np.zeros(K, dtype=bool)
    active = np.arange(K)
    for _ in range(max_iterations):
        if active.size == 0:
            break
        pa, da = p[active], d[active]
        diff = pa[:, None, :] - anchor_xy[None, :, :]
        r = np.maximum(np.linalg.norm(diff, axis=2), 1e-12)
        J = diff / r[:, :, None]
        res = r - da
        h00 = np.sum(J[:, :, 0] ** 2, axis=1)
        h11 = np.sum(J[:, :, 1] ** 2, axis=1)
        h01 = np.sum(J[:, :, 0] * J[:, :, 1], axis=1)
        g0 = np.sum(J[:, :, 0] * res, axis=1)
        g1 = np.sum(J[:, :, 1] * res, axis=1)
        det = h00 * h11 - h01 ** 2
        ok = np.abs(det) > 1e-18
        safe = np.where(ok, det, 1.0)
        step = np.zeros_like(pa)
        step[:, 0] = np.where(ok, -(h11 * g0 - h01 * g1) / safe, 0.0)
        step[:, 1] = np.where(ok, -(-h01 * g0 + h00 * g1) / safe, 0.0)

        cost0 = np.sum(res ** 2, axis=1)
        scale = np.ones(active.size)
        for _ in range(30):
            worse = _cost(pa + step * scale[:, None], anchor_xy, da) > cost0 * (1 + 1e-12) + 1e-30
            if not worse.any():
                break
            scale[worse] *= 0.5
        step *= scale[:, None]

        p[active] = pa + step
        iterations[active] += 1
        done = np.linalg.norm(step, axis=1) < tol_m
        converged[active[done]] = True
        active = active[~done]

    r = np.linalg.norm(p[:, None, :] - anchor_xy[None, :, :], axis=2)
    rms = np.sqrt(np.mean((r - d) ** 2, axis=1))
    return p, rms, iterations, converged


def _usable(ranges: RangeSet, anchors: AnchorSet):
    by_id = {a.id: a for a in anchors}
    pairs = [(by_id[m.anchor_id], m.distance_m) for m in ranges.measurements if m.anchor_id in by_id]
    if len(pairs) < 3:
        raise InsufficientGeometryError(f"need ranges to at least 3 known anchors, got {len(pairs)}")
    xy = np.array([[a.position.x_m, a.position.y_m] for a, _ in pairs])
    if max_triangle_area(xy) <= MIN_TRIANGLE_AREA_M2:
        raise DegenerateGeometryError("ranged anchors are collinear")
    return xy, np.array([dist for _, dist in pairs])


def trilaterate(ranges: RangeSet, anchors: AnchorSet, max_iterations: int = 50,
                tol_m: float = 1e-6) -> PositionFix:
    xy, d = _usable(ranges, anchors)
    p, rms, its, conv = trilaterate_batch(xy, d[None, :], max_iterations, tol_m)
    return PositionFix(Position2D(float(p[0, 0]), float(p[0, 1])), float(rms[0]),
                       int(its[0]), bool(conv[0]))


def grid_oracle(ranges: RangeSet, anchors: AnchorSet, bounds, resolution_m: float) -> Position2D:
    """Exhaustive arg-min of the range objective over grid cell centres.

    ``bounds`` is ``(x_min, y_min, x_max, y_max)``. Ties resolve to the
    smallest y, then the smallest x.
    """
    if not resolution_m > 0:
        raise ParameterError("resolution must be > 0")
    x_min, y_min, x_max, y_max = map(float, bounds)
    nx = int(math.floor((x_max - x_min) / resolution_m + 1e-9))
    ny = int(math.floor((y_max - y_min) / resolution_m + 1e-9))
    if nx <= 0 or ny <= 0:
        raise ParameterError("grid is empty for these bounds and resolution")
    xy, d = _usable(ranges, anchors)
    xs = x_min + (np.arange(nx) + 0.5) * resolution_m
    best_val, best_xy = math.inf, None
    rows = max(1, 2_000_000 // (nx * len(d)))
    for y0 in range(0, ny, rows):
        ys = y_min + (np.arange(y0, min(ny, y0 + rows)) + 0.5) * resolution_m
        obj = np.zeros((ys.size, nx))
        for (ax, ay), di in zip(xy, d):
            obj += (np.hypot(xs[None, :] - ax, ys[:, None] - ay) - di) ** 2
        k = int(np.argmin(obj))
        val = obj.flat[k]
        if val < best_val:
            best_val = val
            best_xy = (float(xs[k % nx]), float(ys[k // nx]))
    return Position2D(*best_xy)


def position_error(estimate: Position2D, truth: Position2D) -> float:
    return math.hypot(estimate.x_m - truth.x_m, estimate.y_m - truth.y_m)


def filter_outliers(errors, k: float = 3.0) -> list:
    """Drop values more than ``k`` scaled MADs from the median.

    With a zero MAD there is no spread to judge against, so the input is
    returned unchanged. ``k`` below 1/1.4826 could reject every value and is
    refused; at or above it at least half the values always survive.
    """
    if not k * MAD_SCALE >= 1.0:
        raise ParameterError(f"k must be >= {1 / MAD_SCALE:.4f}, got {k}")
    values = list(errors)
    if not values:
        raise ParameterError("cannot filter an empty list")
    arr = np.asarray(values, dtype=float)
    med = np.median(arr)
    mad = MAD_SCALE * np.median(np.abs(arr - med))
    if mad == 0:
        return values
    return [v for v, keep in zip(values, np.abs(arr - med) <= k * mad) if keep]
