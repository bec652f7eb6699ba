"""Server-side record store with (tag, kind, seq) de-duplication and CSV export.

The store is column oriented: scenario runs push whole delivery batches at a
time, and a single-record ``ingest`` exists for everything else.
"""
from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np
import polars as pl

from .core import Envelope, MessageKind, NodeId, Position2D, SimTime
from .errors import ClockViolationError, ExportError
from .localization import PositionFix

MESSAGES_HEADER = ("recv_us,sent_us,delay_us,tag,kind,seq,server,edge,"
                   "est_x_m,est_y_m,residual_m,true_x_m,true_y_m,err_m")

KIND_CODES = {MessageKind.UWB: 0, MessageKind.IMU: 1}
KIND_NAMES = ("uwb", "imu")

_INT_COLS = ("recv_us", "sent_us", "tag", "kind", "seq", "server", "edge")
_FLOAT_COLS = ("est_x", "est_y", "residual", "true_x", "true_y")


def record_key(tag: int, kind: int, seq: int) -> int:
    return (int(tag) << 34) | (int(kind) << 33) | int(seq)


@dataclass(frozen=True)
class ReceivedRecord:
    recv_at: SimTime
    env: Envelope
    server: NodeId
    edge: NodeId
    fix: Optional[PositionFix] = None
    truth: Optional[Position2D] = None


class RecordStore:
    """Append-only message store keyed on (tag, kind, seq)."""

    def __init__(self):
        self.seen: set[int] = set()
        self.rejected_count = 0
        self._chunks: list[dict] = []
        self._cache: Optional[dict] = None

    def __len__(self) -> int:
        return len(self.seen)

    def ingest(self, rec: ReceivedRecord) -> bool:
        env = rec.env
        if rec.recv_at < env.sent_at:
            raise ClockViolationError(f"record for {env.key} received at {rec.recv_at} "
                                      f"before it was sent at {env.sent_at}")
        kind = KIND_CODES[env.kind]
        key = record_key(env.tag_id.index, kind, env.seq)
        if key in self.seen:
            self.rejected_count += 1
            return False
        self.seen.add(key)
        if env.kind is MessageKind.UWB:
            if rec.fix is not None:
                est = (rec.fix.position.x_m, rec.fix.position.y_m, rec.fix.residual_rms_m)
            else:
                p = env.payload
                est = (p.est_x_m, p.est_y_m, p.residual_rms_m)
            truth = (rec.truth.x_m, rec.truth.y_m) if rec.truth else (math.nan, math.nan)
        else:
            est, truth = (math.nan,) * 3, (math.nan, math.nan)
        row = {
            "recv_us": [rec.recv_at], "sent_us": [env.sent_at], "tag": [env.tag_id.index],
            "kind": [kind], "seq": [env.seq], "server": [rec.server.index], "edge": [rec.edge.index],
            "est_x": [est[0]], "est_y": [est[1]], "residual": [est[2]],
            "true_x": [truth[0]], "true_y": [truth[1]],
        }
        self._append({k: np.asarray(v, dtype=np.int64 if k in _INT_COLS else float)
                      for k, v in row.items()})
        return True

    def ingest_batch(self, recv_us, sent_us, tag, kind, seq, server, edge,
                     est_x=None, est_y=None, residual=None, true_x=None, true_y=None) -> np.ndarray:
        """Bulk ``ingest``; returns the accepted mask. Missing float columns are NaN."""
        recv_us = np.asarray(recv_us, dtype=np.int64)
        n = recv_us.size
        sent_us = np.broadcast_to(np.asarray(sent_us, dtype=np.int64), (n,))
        if np.any(recv_us < sent_us):
            raise ClockViolationError("record received before it was sent")
        tag = np.broadcast_to(np.asarray(tag, dtype=np.int64), (n,))
        kind = np.broadcast_to(np.asarray(kind, dtype=np.int64), (n,))
        seq = np.broadcast_to(np.asarray(seq, dtype=np.int64), (n,))
        keys = ((tag << 34) | (kind << 33) | seq).tolist()
        seen = self.seen
        accepted = np.empty(n, dtype=bool)
        for i, k in enumerate(keys):
            if k in seen:
                accepted[i] = False
            else:
                seen.add(k)
                accepted[i] = True
        self.rejected_count += int(n - accepted.sum())
        nan = np.full(n, np.nan)

        def col(v, dtype):
            return np.broadcast_to(np.asarray(v, dtype=dtype), (n,))[accepted]

        self._append({
            "recv_us": recv_us[accepted], "sent_us": sent_us[accepted], "tag": tag[accepted],
            "kind": kind[accepted], "seq": seq[accepted],
            "server": col(server, np.int64), "edge": col(edge, np.int64),
            "est_x": col(nan if est_x is None else est_x, float),
            "est_y": col(nan if est_y is None else est_y, float),
            "residual": col(nan if residual is None else residual, float),
            "true_x": col(nan if true_x is None else true_x, float),
            "true_y": col(nan if true_y is None else true_y, float),
        })
        return accepted

    def _append(self, chunk: dict) -> None:
        if chunk["recv_us"].size:
            self._chunks.append(chunk)
            self._cache = None

    def columns(self) -> dict:
        """All accepted records as numpy columns, in ingest order."""
        if self._cache is None:
            if not self._chunks:
                self._cache = {k: np.zeros(0, dtype=np.int64 if k in _INT_COLS else float)
                               for k in _INT_COLS + _FLOAT_COLS}
            else:
                self._cache = {k: np.concatenate([c[k] for c in self._chunks])
                               for k in _INT_COLS + _FLOAT_COLS}
                self._chunks = [self._cache]
        return self._cache

    def sorted_columns(self) -> dict:
        """Columns ordered by recv time, then tag, seq and kind."""
        c = self.columns()
        order = np.lexsort((c["kind"], c["seq"], c["tag"], c["recv_us"]))
        return {k: v[order] for k, v in c.items()}


def _messages_frame(store: RecordStore) -> pl.DataFrame:
    c = dict(store.sorted_columns())
    imu = c["kind"] == KIND_CODES[MessageKind.IMU]
    for name in _FLOAT_COLS:  # IMU rows carry no position fields
        c[name] = np.where(imu, np.nan, c[name])
    err = np.hypot(c["est_x"] - c["true_x"], c["est_y"] - c["true_y"])
    frame = pl.DataFrame({
        "recv_us": c["recv_us"], "sent_us": c["sent_us"], "delay_us": c["recv_us"] - c["sent_us"],
        "tag": c["tag"], "kind": np.asarray(KIND_NAMES, dtype=object)[c["kind"]].astype(str),
        "seq": c["seq"], "server": c["server"], "edge": c["edge"],
        "est_x_m": c["est_x"], "est_y_m": c["est_y"], "residual_m": c["residual"],
        "true_x_m": c["true_x"], "true_y_m": c["true_y"], "err_m": err,
    }, schema_overrides={"kind": pl.Utf8})
    floats = ["est_x_m", "est_y_m", "residual_m", "true_x_m", "true_y_m", "err_m"]
    return frame.with_columns([pl.col(f).fill_nan(None) for f in floats])


def atomic_write(path, writer) -> None:
    """Run ``writer(tmp_path)`` then move the result into place; clean up on failure."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    tmp = None
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
        os.close(fd)
        writer(tmp)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except OSError as exc:
        if tmp and os.path.exists(tmp):
            os.remove(tmp)
        raise ExportError(f"could not write {path}: {exc}") from exc


def export_csv(store: RecordStore, path) -> int:
    """Write ``messages.csv``; returns the number of data rows."""
    frame = _messages_frame(store)

    def write(tmp):
        if frame.height == 0:
            with open(tmp, "w", newline="") as fh:
                fh.write(MESSAGES_HEADER + "\n")
        else:
            frame.write_csv(tmp, float_precision=6, line_terminator="\n")

    atomic_write(path, write)
    return frame.height


def read_messages_csv(path) -> pl.DataFrame:
    return pl.read_csv(path, schema_overrides={"kind": pl.Utf8})
