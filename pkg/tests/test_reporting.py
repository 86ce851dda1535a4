import io
import json

import pytest

from starsim.errors import ReportError
from starsim.schemas.recovery import RecoveryReport
from starsim.schemas.stats import Stats, WriteCounts
from starsim.services.reporting import COLUMNS, build_report, load_stats, render_csv, report


def make_stats(scheme, aw_mode=None, trace_name="array", **writes):
    return Stats(
        trace_name=trace_name,
        scheme=scheme,
        aw_mode=aw_mode,
        mem_bytes=1 << 20,
        seed=0,
        writes=WriteCounts(**writes),
    )


def test_write_counts_total():
    counts = WriteCounts(data=10, metadata_evict=3, ahead_write=2, lsb_flush=1)
    assert counts.total == 16
    assert counts.model_dump()["total"] == 16


def test_ratios_are_relative_to_wb():
    rows = build_report(
        [
            make_stats("anubis", data=100, st_block=100),
            make_stats("wb", data=100),
            make_stats("star", "aw-l", data=100, ahead_write=80),
        ]
    )
    assert [row.scheme for row in rows] == ["wb", "aw-l", "anubis"]
    assert [row.write_ratio for row in rows] == [1.0, 1.8, 2.0]


def test_missing_wb_leaves_the_ratio_empty():
    rows = build_report([make_stats("strict", data=10, strict_branch=30)])
    assert rows[0].write_ratio is None
    assert rows[0].total_writes == 40


def test_rows_carry_recovery_time():
    stats = make_stats("star", "aw-h", data=5)
    stats.recovery = RecoveryReport(scheme="aw-h", reads=1000)
    (row,) = build_report([stats])
    assert row.recovery_time_s == pytest.approx(1e-4)


def test_empty_report():
    with pytest.raises(ReportError):
        build_report([])


def test_csv_layout():
    handle = io.StringIO()
    render_csv(build_report([make_stats("wb", data=4)]), handle)
    header, row = handle.getvalue().splitlines()
    assert header == ",".join(COLUMNS)
    assert row == "array,wb,4,1.0,,"


def test_stats_files_round_trip(tmp_path):
    paths = []
    for stats in (make_stats("wb", data=50), make_stats("anubis", data=50, st_block=50)):
        path = tmp_path / f"{stats.label}.json"
        path.write_text(stats.model_dump_json())
        paths.append(path)
    assert load_stats(paths[1]).total_writes == 100
    assert [row.write_ratio for row in report(paths)] == [1.0, 2.0]


def test_schema_version_mismatch(tmp_path):
    path = tmp_path / "old.json"
    payload = json.loads(make_stats("wb", data=1).model_dump_json())
    payload["schema_version"] = 99
    path.write_text(json.dumps(payload))
    with pytest.raises(ReportError, match="schema_version"):
        load_stats(path)


def test_unreadable_stats(tmp_path):
    with pytest.raises(ReportError):
        load_stats(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ReportError):
        load_stats(bad)
