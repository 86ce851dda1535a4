from typing import Literal

from pydantic import BaseModel, computed_field

from starsim.models.geometry import LineId, LineKind


class RecoveryReport(BaseModel):
    """Outcome of one crash recovery."""

    scheme: str
    crash_event: int | None = None
    verdict: Literal["verified", "root_mismatch"] = "verified"
    detail: str | None = None
    # (kind, level, index) of every restored node, in restore order
    restored: list[tuple[int, int, int]] = []
    dirty_lines: int = 0
    index_reads: int = 0
    reads: int = 0
    functional_reads: int = 0
    writes: int = 0
    read_ns: int = 100

    @computed_field
    @property
    def time_ns(self) -> int:
        return self.reads * self.read_ns

    @property
    def time_s(self) -> float:
        return self.time_ns / 1e9

    @property
    def verified(self) -> bool:
        return self.verdict == "verified"

    def restored_ids(self) -> list[LineId]:
        return [LineId(LineKind(kind), level, index) for kind, level, index in self.restored]
