import csv
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wearbed.core import (Envelope, ImuPayload, MessageKind, NodeId, NodeKind, Position2D,
                          UwbPayload)
from wearbed.errors import ClockViolationError, ExportError
from wearbed.ingest import (MESSAGES_HEADER, ReceivedRecord, RecordStore, atomic_write,
                            export_csv, read_messages_csv)

SRV, EDGE = NodeId(NodeKind.SERVER, 0), NodeId(NodeKind.EDGE, 1)


def uwb(tag=0, seq=0, sent=1000, recv=5000, est=(1.0, 2.0), truth=(1.1, 2.0)):
    env = Envelope(NodeId(NodeKind.TAG, tag), seq, MessageKind.UWB, sent,
                   UwbPayload(est[0], est[1], 0.01))
    return ReceivedRecord(recv, env, SRV, EDGE, truth=Position2D(*truth))


def imu(tag=0, seq=0, sent=1000, recv=4000):
    env = Envelope(NodeId(NodeKind.TAG, tag), seq, MessageKind.IMU, sent,
                   ImuPayload((0, 0, 9.81), (0, 0, 0), (50, 0, 0), (1, 0, 0, 0), (0, 0, 0)))
    return ReceivedRecord(recv, env, SRV, EDGE)


def test_fresh_record_accepted():
    assert RecordStore().ingest(uwb()) is True


def test_duplicate_rejected():
    s = RecordStore()
    s.ingest(uwb(seq=4))
    assert s.ingest(uwb(seq=4, recv=9000)) is False
    assert len(s) == 1 and s.rejected_count == 1


def test_same_seq_different_kind_is_distinct():
    s = RecordStore()
    assert s.ingest(uwb(seq=4)) and s.ingest(imu(seq=4))


def test_thousand_unique_records():
    s = RecordStore()
    for i in range(1000):
        s.ingest(uwb(tag=i % 7, seq=i))
    assert len(s) == 1000


def test_received_before_sent_rejected():
    with pytest.raises(ClockViolationError):
        RecordStore().ingest(uwb(sent=10, recv=5))
    with pytest.raises(ClockViolationError):
        RecordStore().ingest_batch([5], [10], 0, 0, 0, 0, 0)


def test_batch_dedups_within_and_across_batches():
    s = RecordStore()
    acc = s.ingest_batch([10, 11, 12], 0, [1, 1, 2], 0, [0, 0, 0], 0, 0)
    assert acc.tolist() == [True, False, True]
    acc = s.ingest_batch([20], 0, [2], 0, [0], 0, 0)
    assert acc.tolist() == [False]
    assert len(s) == 2 and s.rejected_count == 2


def test_empty_export_is_header_only(tmp_path):
    p = tmp_path / "m.csv"
    assert export_csv(RecordStore(), p) == 0
    assert p.read_text() == MESSAGES_HEADER + "\n"


def test_three_records_four_lines(tmp_path):
    s = RecordStore()
    s.ingest(uwb(seq=0))
    s.ingest(uwb(seq=1))
    s.ingest(imu(seq=0))
    p = tmp_path / "m.csv"
    assert export_csv(s, p) == 3
    assert len(p.read_text().splitlines()) == 4


def test_export_twice_byte_identical(tmp_path):
    s = RecordStore()
    for i in range(50):
        s.ingest(uwb(seq=i, recv=5000 + 17 * i, est=(i / 7, i / 3)))
    export_csv(s, tmp_path / "a.csv")
    export_csv(s, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_export_field_values(tmp_path):
    s = RecordStore()
    s.ingest(uwb(seq=3, sent=1000, recv=5432, est=(1.0, 2.0), truth=(1.1, 2.0)))
    s.ingest(imu(seq=8, sent=900, recv=2000))
    export_csv(s, tmp_path / "m.csv")
    with open(tmp_path / "m.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == MESSAGES_HEADER.split(",")
    first, second = rows  # ordered by receive time
    assert first["kind"] == "imu" and first["est_x_m"] == "" and first["err_m"] == ""
    assert second["delay_us"] == "4432"
    assert second["est_x_m"] == "1.000000" and second["true_x_m"] == "1.100000"
    assert second["err_m"] == "0.100000"
    assert second["server"] == "0" and second["edge"] == "1"


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1), st.integers(0, 20),
                          st.integers(0, 10 ** 6), st.floats(-100, 100), st.floats(-100, 100)),
                max_size=40))
def test_round_trip_and_row_count(rows):
    import tempfile
    s = RecordStore()
    accepted = 0
    for tag, kind, seq, delay, x, y in rows:
        accepted += int(s.ingest_batch([delay + 7], 7, tag, kind, seq, 0, 2, est_x=x, est_y=y,
                                       residual=0.0, true_x=x, true_y=y)[0])
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.csv")
        assert export_csv(s, path) == accepted == len(s)
        back = read_messages_csv(path)
    c = s.sorted_columns()
    assert back.height == accepted
    if accepted:
        assert back["recv_us"].to_list() == c["recv_us"].tolist()
        assert back["seq"].to_list() == c["seq"].tolist()
        uwb_rows = c["kind"] == 0
        est = back["est_x_m"].to_list()
        for v, k, x in zip(est, c["kind"], c["est_x"]):
            if k == 1:
                assert v is None
            else:
                assert abs(v - x) <= 5e-7


def test_failed_write_leaves_no_temp(tmp_path):
    def boom(tmp):
        raise OSError("disk full")
    with pytest.raises(ExportError):
        atomic_write(tmp_path / "x.csv", boom)
    assert os.listdir(tmp_path) == []


def test_unwritable_target_raises_export_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ExportError):
        export_csv(RecordStore(), blocker / "m.csv")
