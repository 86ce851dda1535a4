from starsim.commands.trace import register as register_trace
from starsim.commands.run import register as register_run
from starsim.commands.report import register as register_report

__all__ = [
    "register_trace",
    "register_run",
    "register_report",
]
