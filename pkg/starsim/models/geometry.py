from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

from starsim.errors import ConfigError

LINE_BYTES = 64
COUNTERS_PER_BLOCK = 64
TREE_ARITY = 8
PAGE_BYTES = LINE_BYTES * COUNTERS_PER_BLOCK
BITMAP_BITS = 512


class LineKind(IntEnum):
    USER_DATA = 0
    COUNTER_BLOCK = 1
    SIT_NODE = 2
    BITMAP_L1 = 3
    BITMAP_L2 = 4


class LineId(NamedTuple):
    """A 64-byte line. `level` is -1 for user data and bitmap lines."""

    kind: LineKind
    level: int
    index: int

    @classmethod
    def data(cls, index: int) -> LineId:
        return cls(LineKind.USER_DATA, -1, index)

    @classmethod
    def node(cls, level: int, index: int) -> LineId:
        kind = LineKind.COUNTER_BLOCK if level == 0 else LineKind.SIT_NODE
        return cls(kind, level, index)

    @classmethod
    def bitmap(cls, layer: int, index: int) -> LineId:
        return cls(LineKind.BITMAP_L1 if layer == 1 else LineKind.BITMAP_L2, -1, index)

    @property
    def is_metadata(self) -> bool:
        return self.kind in (LineKind.COUNTER_BLOCK, LineKind.SIT_NODE)

    def __str__(self) -> str:
        if self.kind == LineKind.USER_DATA:
            return f"data[{self.index}]"
        if self.is_metadata:
            return f"L{self.level}[{self.index}]"
        return f"{self.kind.name.lower()}[{self.index}]"


@dataclass(frozen=True)
class Geometry:
    """
    Address space and SIT shape for one memory size.

    NVM layout, in order: user data, metadata nodes level by level (counter
    blocks first, the root slot last and never written), recovery-area L1
    bitmap lines, recovery-area L2 bitmap lines.
    """

    mem_bytes: int
    level_sizes: tuple[int, ...]
    line_bytes: int = LINE_BYTES
    counters_per_block: int = COUNTERS_PER_BLOCK
    tree_arity: int = TREE_ARITY
    level_offsets: tuple[int, ...] = field(init=False)
    _region_starts: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        offsets = [0]
        for size in self.level_sizes:
            offsets.append(offsets[-1] + size)
        object.__setattr__(self, "level_offsets", tuple(offsets))
        data_lines = self.mem_bytes // LINE_BYTES
        starts = (
            0,
            data_lines,
            data_lines + self.metadata_lines,
            data_lines + self.metadata_lines + self.bitmap_l1_lines,
            data_lines + self.metadata_lines + self.bitmap_l1_lines + self.bitmap_l2_lines,
        )
        object.__setattr__(self, "_region_starts", starts)

    @property
    def levels(self) -> int:
        return len(self.level_sizes)

    @property
    def depth_with_data(self) -> int:
        """Tree depth counting the user-data level."""
        return self.levels + 1

    @property
    def data_lines(self) -> int:
        return self.mem_bytes // LINE_BYTES

    @property
    def metadata_lines(self) -> int:
        return sum(self.level_sizes)

    @property
    def bitmap_l1_lines(self) -> int:
        return -(-self.metadata_lines // BITMAP_BITS)

    @property
    def bitmap_l2_lines(self) -> int:
        return -(-self.bitmap_l1_lines // BITMAP_BITS)

    @property
    def root(self) -> LineId:
        return LineId.node(self.levels - 1, 0)

    def is_root(self, line: LineId) -> bool:
        return line.is_metadata and line.level == self.levels - 1

    # -- tree shape ---------------------------------------------------------

    def parent_of(self, line: LineId) -> LineId:
        if line.kind == LineKind.USER_DATA:
            return LineId.node(0, line.index // self.counters_per_block)
        if not line.is_metadata:
            raise ValueError(f"{line} is not part of the tree")
        if self.is_root(line):
            raise ValueError("the root has no parent")
        return LineId.node(line.level + 1, line.index // self.tree_arity)

    def counter_slot(self, child: LineId) -> int:
        if child.kind == LineKind.USER_DATA:
            return child.index % self.counters_per_block
        return child.index % self.tree_arity

    def children_of(self, line: LineId) -> list[LineId]:
        if not line.is_metadata:
            raise ValueError(f"{line} has no children")
        if line.level == 0:
            base = line.index * self.counters_per_block
            return [LineId.data(base + i) for i in range(self.counters_per_block)]
        below = self.level_sizes[line.level - 1]
        base = line.index * self.tree_arity
        return [
            LineId.node(line.level - 1, i)
            for i in range(base, min(base + self.tree_arity, below))
        ]

    def contains(self, line: LineId) -> bool:
        if line.kind == LineKind.USER_DATA:
            return 0 <= line.index < self.data_lines
        if line.is_metadata:
            return 0 <= line.level < self.levels and 0 <= line.index < self.level_sizes[line.level]
        if line.kind == LineKind.BITMAP_L1:
            return 0 <= line.index < self.bitmap_l1_lines
        return 0 <= line.index < self.bitmap_l2_lines

    # -- metadata ordinals --------------------------------------------------

    def ordinal(self, line: LineId) -> int:
        """Position of a metadata line in the metadata region."""
        return self.level_offsets[line.level] + line.index

    def node_at(self, ordinal: int) -> LineId:
        level = bisect.bisect_right(self.level_offsets, ordinal) - 1
        return LineId.node(level, ordinal - self.level_offsets[level])

    # -- byte offsets -------------------------------------------------------

    def offset(self, line: LineId) -> int:
        if not self.contains(line):
            raise ValueError(f"{line} is outside the geometry")
        starts = self._region_starts
        if line.kind == LineKind.USER_DATA:
            number = line.index
        elif line.is_metadata:
            number = starts[1] + self.ordinal(line)
        elif line.kind == LineKind.BITMAP_L1:
            number = starts[2] + line.index
        else:
            number = starts[3] + line.index
        return number * LINE_BYTES

    def line_id(self, offset: int) -> LineId:
        if offset % LINE_BYTES:
            raise ValueError(f"offset {offset:#x} is not line aligned")
        number = offset // LINE_BYTES
        starts = self._region_starts
        if not 0 <= number < starts[4]:
            raise ValueError(f"offset {offset:#x} is outside the image")
        region = bisect.bisect_right(starts, number) - 1
        local = number - starts[region]
        if region == 0:
            return LineId.data(local)
        if region == 1:
            return self.node_at(local)
        return LineId.bitmap(region - 1, local)

    def data_line(self, addr: int) -> LineId:
        """User-data line for a byte address."""
        if not 0 <= addr < self.mem_bytes:
            raise ValueError(f"address {addr:#x} is outside user memory")
        return LineId.data(addr // LINE_BYTES)


def build_geometry(mem_bytes: int) -> Geometry:
    """Level sizes by repeated ceiling division, counter blocks first."""
    if mem_bytes <= 0 or mem_bytes % PAGE_BYTES:
        raise ConfigError(f"memory size must be a positive multiple of {PAGE_BYTES} bytes")
    sizes = [mem_bytes // PAGE_BYTES]
    while sizes[-1] > 1:
        sizes.append(-(-sizes[-1] // TREE_ARITY))
    return Geometry(mem_bytes=mem_bytes, level_sizes=tuple(sizes))
