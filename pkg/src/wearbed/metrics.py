"""Packet loss ratio, delay and tracking-accuracy statistics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import ParameterError
from .ingest import atomic_write
from .localization import filter_outliers

KINDS = ("uwb", "imu")

METRICS_HEADER = ("scenario,server_config,n_tags,freq_hz,kind,sent,received,plr,"
                  "delay_mean_us,delay_p50_us,delay_p95_us,delay_p99_us,delay_max_us,"
                  "acc_mean_m,acc_mean_filtered_m,acc_max_m")


@dataclass(frozen=True)
class DelayStats:
    mean: float
    p50: int
    p95: int
    p99: int
    max: int


@dataclass(frozen=True)
class AccuracyStats:
    mean: float
    min: float
    max: float
    mean_filtered: Optional[float]
    count: int = 0


@dataclass(frozen=True)
class PlrResult:
    per_stream: dict
    per_kind: dict
    overall: Optional[float]
    sent: dict = field(default_factory=dict)
    lost: dict = field(default_factory=dict)


def _ratio(lost: int, sent: int) -> Optional[float]:
    return None if sent == 0 else lost / sent


def plr_from_counts(sent: Mapping, received: Mapping) -> PlrResult:
    """Loss ratios from per-stream message counts.

    Streams are keyed ``(tag, kind)``. Streams with nothing sent are left out
    of every aggregate and report ``None`` themselves.
    """
    per_stream, lost_by_kind, sent_by_kind = {}, {}, {}
    for stream, n_sent in sent.items():
        n_recv = int(received.get(stream, 0))
        if n_recv > n_sent:
            raise ParameterError(f"stream {stream} received {n_recv} of {n_sent} sent")
        per_stream[stream] = _ratio(n_sent - n_recv, n_sent)
        kind = stream[1]
        sent_by_kind[kind] = sent_by_kind.get(kind, 0) + n_sent
        lost_by_kind[kind] = lost_by_kind.get(kind, 0) + n_sent - n_recv
    per_kind = {k: _ratio(lost_by_kind.get(k, 0), sent_by_kind.get(k, 0)) for k in KINDS}
    total_sent = sum(sent_by_kind.values())
    total_lost = sum(lost_by_kind.values())
    per_kind_sent = {k: sent_by_kind.get(k, 0) for k in KINDS}
    per_kind_lost = {k: lost_by_kind.get(k, 0) for k in KINDS}
    per_kind_sent["all"], per_kind_lost["all"] = total_sent, total_lost
    return PlrResult(per_stream, per_kind, _ratio(total_lost, total_sent), per_kind_sent, per_kind_lost)


def compute_plr(sent: Mapping, received_seqs: Mapping) -> PlrResult:
    """PLR = 1 - |received| / sent per stream, message-weighted across streams."""
    counts = {}
    for stream, n_sent in sent.items():
        seqs = np.unique(np.asarray(list(received_seqs.get(stream, ())), dtype=np.int64))
        if seqs.size and (seqs[0] < 0 or seqs[-1] >= n_sent):
            raise ParameterError(f"stream {stream} has received seqs outside 0..{n_sent - 1}")
        counts[stream] = seqs.size
    return plr_from_counts(sent, counts)


def nearest_rank(sorted_values, percent: int):
    """The ceil(q*N)-th smallest value, computed in integers to avoid float drift."""
    n = len(sorted_values)
    rank = max(1, (percent * n + 99) // 100)
    return sorted_values[rank - 1]


def _mean(values) -> float:
    """Order-independent mean; the final division cannot push it outside [min, max]."""
    m = math.fsum(values) / len(values)
    return min(max(m, min(values)), max(values))


def delay_stats(delays_us) -> Optional[DelayStats]:
    arr = np.sort(np.asarray(delays_us, dtype=np.int64))
    if arr.size == 0:
        return None
    return DelayStats(mean=math.fsum(arr.tolist()) / arr.size,
                      p50=int(nearest_rank(arr, 50)), p95=int(nearest_rank(arr, 95)),
                      p99=int(nearest_rank(arr, 99)), max=int(arr[-1]))


def accuracy_stats(errors_m, filter: bool = True, k: float = 3.0) -> Optional[AccuracyStats]:
    errs = [float(e) for e in errors_m]
    if not errs:
        return None
    filtered = None
    if filter:
        filtered = _mean(filter_outliers(errs, k))
    return AccuracyStats(_mean(errs), min(errs), max(errs), filtered, len(errs))


def loss_series(drop_times_us, bucket_us: int = 1_000_000, end_us: Optional[int] = None) -> np.ndarray:
    """Drops per time bucket, for locating loss bursts."""
    t = np.asarray(drop_times_us, dtype=np.int64)
    n_buckets = int((end_us if end_us is not None else (t.max() + 1 if t.size else 0)) // bucket_us) + 1
    return np.bincount(t // bucket_us, minlength=n_buckets)


@dataclass
class MetricsReport:
    scenario: str
    server_config: str
    n_tags: int
    freq_hz: Optional[float]
    plr: dict
    delay_us: dict
    accuracy_m: Optional[AccuracyStats]
    sent_counts: dict
    received_counts: dict
    counter_plr: dict = field(default_factory=dict)
    drops_by_reason: dict = field(default_factory=dict)
    failover: list = field(default_factory=list)
    events_fired: int = 0
    scatter: Optional[dict] = field(default=None, repr=False)

    def totals(self, kind: str) -> tuple[int, int]:
        """(sent, received) summed over streams of ``kind`` ('all' for both)."""
        sent = sum(v for (t, k), v in self.sent_counts.items() if kind in ("all", k))
        recv = sum(v for (t, k), v in self.received_counts.items() if kind in ("all", k))
        return sent, recv

    def without_scatter(self) -> "MetricsReport":
        from dataclasses import replace
        return replace(self, scatter=None)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6f}"


def _freq_label(freq) -> str:
    if freq is None:
        return ""
    return str(int(freq)) if float(freq).is_integer() else f"{freq:g}"


def metrics_rows(report: MetricsReport) -> list[list[str]]:
    rows = []
    for kind in KINDS + ("all",):
        sent, recv = report.totals(kind)
        d = report.delay_us.get(kind)
        acc = report.accuracy_m if kind in ("uwb", "all") else None
        rows.append([
            report.scenario, report.server_config, str(report.n_tags), _freq_label(report.freq_hz),
            kind, str(sent), str(recv), _fmt(report.plr.get(kind)),
            _fmt(d.mean if d else None), _fmt(d.p50 if d else None), _fmt(d.p95 if d else None),
            _fmt(d.p99 if d else None), _fmt(d.max if d else None),
            _fmt(acc.mean if acc else None), _fmt(acc.mean_filtered if acc else None),
            _fmt(acc.max if acc else None),
        ])
    return rows


def write_metrics_csv(reports: Iterable[MetricsReport], path) -> int:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER.split(","))
    n = 0
    for r in reports:
        for row in metrics_rows(r):
            w.writerow(row)
            n += 1
    text = buf.getvalue()

    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            fh.write(text)

    atomic_write(path, write)
    return n


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
