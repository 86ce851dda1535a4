from __future__ import annotations

from dataclasses import dataclass

from starsim.models.geometry import Geometry
from starsim.models.nvm import NvmImage


@dataclass(frozen=True)
class ChipState:
    """On-chip non-volatile registers that survive a crash."""

    sit_root_counters: tuple[int, ...]
    cache_tree_root: int
    top_index_line: int


@dataclass(frozen=True)
class CrashSnapshot:
    """
    Everything that survives power loss.

    `nvm` already contains the battery-flushed ADR bitmap lines in its
    recovery area. The cache statistics are kept for reporting only;
    recovery never looks at them.
    """

    geometry: Geometry
    nvm: NvmImage
    chip: ChipState
    scheme: str
    event_index: int
    dirty_lines: int
    cached_lines: int
    cache_capacity_lines: int

    @property
    def dirty_ratio(self) -> float:
        return self.dirty_lines / self.cached_lines if self.cached_lines else 0.0
