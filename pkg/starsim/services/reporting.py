from __future__ import annotations

import csv
import json
import logging
from collections.abc import Iterable
from pathlib import Path
from typing import TextIO

from pydantic import ValidationError

from starsim.errors import ReportError
from starsim.schemas.stats import STATS_SCHEMA_VERSION, ReportRow, Stats

logger = logging.getLogger(__name__)

SCHEME_ORDER = ("wb", "aw-h", "aw-m", "aw-l", "anubis", "strict")
COLUMNS = tuple(ReportRow.model_fields)


def load_stats(path: str | Path) -> Stats:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ReportError(f"cannot read stats file {path}: {exc}") from exc
    version = raw.get("schema_version") if isinstance(raw, dict) else None
    if version != STATS_SCHEMA_VERSION:
        raise ReportError(
            f"{path}: schema_version {version!r}, expected {STATS_SCHEMA_VERSION}"
        )
    try:
        return Stats.model_validate(raw)
    except ValidationError as exc:
        raise ReportError(f"{path}: {exc}") from exc


def build_report(runs: Iterable[Stats]) -> list[ReportRow]:
    """
    One row per run, write totals normalized to the WB run of the same trace.

    Rows are sorted by trace name, then in SCHEME_ORDER.
    """
    runs = list(runs)
    if not runs:
        raise ReportError("no stats to report")
    baseline = {run.trace_name: run.total_writes for run in runs if run.label == "wb"}
    rows = []
    for run in runs:
        wb_writes = baseline.get(run.trace_name)
        if wb_writes is None:
            logger.warning("no WB run for %s; ratio left empty", run.trace_name)
        ratio = run.total_writes / wb_writes if wb_writes else None
        recovery = run.recovery or (run.recoveries[-1] if run.recoveries else None)
        rows.append(
            ReportRow(
                trace_name=run.trace_name,
                scheme=run.label,
                total_writes=run.total_writes,
                write_ratio=ratio,
                recovery_time_s=recovery.time_s if recovery else None,
                bitmap_hit_ratio=run.bitmap_hit_ratio,
            )
        )
    rank = {label: i for i, label in enumerate(SCHEME_ORDER)}
    rows.sort(key=lambda row: (row.trace_name, rank.get(row.scheme, len(rank))))
    return rows


def render_csv(rows: list[ReportRow], handle: TextIO) -> None:
    writer = csv.DictWriter(handle, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: "" if value is None else value for key, value in row.model_dump().items()})


def write_csv(rows: list[ReportRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        render_csv(rows, handle)


def write_json(rows: list[ReportRow], path: str | Path) -> None:
    payload = [row.model_dump() for row in rows]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def report(stats_files: Iterable[str | Path]) -> list[ReportRow]:
    return build_report(load_stats(path) for path in stats_files)
