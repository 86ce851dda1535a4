from starsim.schemas.trace import Trace, TraceEvent
from starsim.schemas.stats import ReportRow, Stats, WriteCounts
from starsim.schemas.recovery import RecoveryReport

__all__ = [
    "Trace",
    "TraceEvent",
    "ReportRow",
    "Stats",
    "WriteCounts",
    "RecoveryReport",
]
