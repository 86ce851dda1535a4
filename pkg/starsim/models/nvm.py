from __future__ import annotations

from collections.abc import Callable

from starsim.models.geometry import Geometry, LineId
from starsim.models.lines import LineContent


class NvmImage:
    """
    Sparse persistent line store.

    Lines never written hold their genesis content, produced on demand by
    the `genesis` callback. Contents are immutable so cloning is a dict copy.
    """

    def __init__(
        self,
        geometry: Geometry,
        genesis: Callable[[LineId], LineContent],
        record_history: bool = False,
    ):
        self.geometry = geometry
        self.genesis = genesis
        self.record_history = record_history
        self.lines: dict[LineId, LineContent] = {}
        self.history: dict[LineId, list[LineContent]] = {}
        self.reads = 0
        self.writes = 0

    def read(self, line: LineId) -> LineContent:
        """Counted read."""
        self.reads += 1
        return self.peek(line)

    def peek(self, line: LineId) -> LineContent:
        """Uncounted read, for oracles and recovery bookkeeping."""
        content = self.lines.get(line)
        return self.genesis(line) if content is None else content

    def write(self, line: LineId, content: LineContent) -> None:
        self.writes += 1
        if self.record_history:
            self.history.setdefault(line, [self.peek(line)]).append(content)
        self.lines[line] = content

    def replace(self, line: LineId, content: LineContent) -> None:
        """Overwrite without accounting (crash flush, tampering, recovery area reset)."""
        self.lines[line] = content

    def discard(self, line: LineId) -> None:
        self.lines.pop(line, None)

    def versions(self, line: LineId) -> list[LineContent]:
        """Every content the line has held, oldest first (needs record_history)."""
        return list(self.history.get(line, [self.peek(line)]))

    def clone(self) -> NvmImage:
        copy = NvmImage(self.geometry, self.genesis, record_history=False)
        copy.lines = dict(self.lines)
        return copy

    def __len__(self) -> int:
        return len(self.lines)
