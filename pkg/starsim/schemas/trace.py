from typing import Literal

from pydantic import BaseModel, field_validator

from starsim.models.geometry import LINE_BYTES

TRACE_MAGIC = "#star-trace v1"


class TraceEvent(BaseModel):
    """One memory-level access: an LLC writeback (W) or fill (R)."""

    op: Literal["R", "W"]
    addr: int

    @field_validator("addr")
    @classmethod
    def _aligned(cls, value: int) -> int:
        if value < 0 or value % LINE_BYTES:
            raise ValueError(f"address {value:#x} is not a non-negative multiple of {LINE_BYTES}")
        return value

    def render(self) -> str:
        return f"{self.op} {self.addr:#x}"


class Trace(BaseModel):
    mem_bytes: int
    events: list[TraceEvent]
    name: str = "trace"

    def header(self) -> str:
        return f"{TRACE_MAGIC} mem={self.mem_bytes}"
