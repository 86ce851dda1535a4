from pydantic import BaseModel, Field, computed_field

from starsim.schemas.recovery import RecoveryReport

STATS_SCHEMA_VERSION = 1


class WriteCounts(BaseModel):
    """NVM line writes by cause; every engine write lands in exactly one field."""

    data: int = 0
    metadata_evict: int = 0
    ahead_write: int = 0
    bitmap_spill: int = 0
    st_block: int = 0
    strict_branch: int = 0
    reencrypt: int = 0
    lsb_flush: int = 0

    @computed_field
    @property
    def total(self) -> int:
        return (
            self.data
            + self.metadata_evict
            + self.ahead_write
            + self.bitmap_spill
            + self.st_block
            + self.strict_branch
            + self.reencrypt
            + self.lsb_flush
        )


class Stats(BaseModel):
    schema_version: int = STATS_SCHEMA_VERSION
    trace_name: str
    scheme: str
    aw_mode: str | None = None
    mem_bytes: int
    seed: int
    events: int = 0
    writes: WriteCounts = Field(default_factory=WriteCounts)
    reads: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    evictions: int = 0
    cached_lines: int = 0
    dirty_lines: int = 0
    dirty_ratio_at_crash: float | None = None
    bitmap_accesses: int = 0
    bitmap_hit_ratio: float | None = None
    lsb_forced_flushes: int = 0
    recovery: RecoveryReport | None = None
    recoveries: list[RecoveryReport] = []

    @computed_field
    @property
    def total_writes(self) -> int:
        return self.writes.total

    @property
    def label(self) -> str:
        return self.aw_mode or self.scheme


class ReportRow(BaseModel):
    trace_name: str
    scheme: str
    total_writes: int
    write_ratio: float | None = None
    recovery_time_s: float | None = None
    bitmap_hit_ratio: float | None = None
