from starsim.models.geometry import Geometry, LineId, LineKind, build_geometry
from starsim.models.lines import (
    BitmapLineContent,
    CounterBlockContent,
    DataLineContent,
    MacField,
    SitNodeContent,
)
from starsim.models.nvm import NvmImage
from starsim.models.snapshot import ChipState, CrashSnapshot

__all__ = [
    "Geometry",
    "LineId",
    "LineKind",
    "build_geometry",
    "BitmapLineContent",
    "CounterBlockContent",
    "DataLineContent",
    "MacField",
    "SitNodeContent",
    "NvmImage",
    "ChipState",
    "CrashSnapshot",
]
