from __future__ import annotations

import logging
from collections import OrderedDict
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass
from enum import IntEnum
from typing import Protocol

from starsim.errors import InvariantViolation
from starsim.models.geometry import LINE_BYTES, TREE_ARITY, Geometry, LineId, LineKind
from starsim.models.lines import NodeContent
from starsim.services.crypto import Prf

logger = logging.getLogger(__name__)


class Intent(IntEnum):
    READ = 0
    MODIFY = 1


@dataclass(slots=True)
class CacheLine:
    id: LineId
    content: NodeContent
    parent_counter: int
    dirty: bool = False
    # NVM copy differs from content
    stale: bool = False
    # counter increments since the line was last written to NVM
    increments: int = 0

    @property
    def mac(self) -> int:
        return self.content.mac_field.mac54


@dataclass(frozen=True)
class CacheLayout:
    """Set mapping for the two partitions; counter-block sets come first."""

    geometry: Geometry
    counter_sets: int
    sit_sets: int
    ways: int

    @classmethod
    def from_sizes(
        cls, geometry: Geometry, counter_cache_bytes: int, sit_cache_bytes: int, ways: int
    ) -> CacheLayout:
        set_bytes = ways * LINE_BYTES
        return cls(geometry, counter_cache_bytes // set_bytes, sit_cache_bytes // set_bytes, ways)

    @property
    def n_sets(self) -> int:
        return self.counter_sets + self.sit_sets

    @property
    def capacity_lines(self) -> int:
        return self.n_sets * self.ways

    def set_index(self, line: LineId) -> int:
        if line.kind == LineKind.COUNTER_BLOCK:
            return line.index % self.counter_sets
        if line.kind == LineKind.SIT_NODE:
            sit_ordinal = self.geometry.ordinal(line) - self.geometry.level_sizes[0]
            return self.counter_sets + sit_ordinal % self.sit_sets
        raise ValueError(f"{line} is not a metadata line")


class CacheTree:
    """8-ary merkle tree over per-set digests of dirty-line MACs."""

    def __init__(self, prf: Prf, n_sets: int):
        self.prf = prf
        self.levels = _build_levels(prf, [0] * n_sets)

    @property
    def set_macs(self) -> list[int]:
        return self.levels[0]

    @property
    def root(self) -> int:
        return self.levels[-1][0]

    def update_set(self, set_no: int, macs_descending: list[int]) -> None:
        self.levels[0][set_no] = set_mac(self.prf, macs_descending)
        index = set_no
        for depth in range(1, len(self.levels)):
            index //= TREE_ARITY
            below = self.levels[depth - 1]
            start = index * TREE_ARITY
            self.levels[depth][index] = self.prf.digest(below[start : start + TREE_ARITY])


def set_mac(prf: Prf, macs_descending: list[int]) -> int:
    return prf.digest(macs_descending) if macs_descending else 0


def _build_levels(prf: Prf, set_macs: list[int]) -> list[list[int]]:
    levels = [list(set_macs)]
    while True:
        below = levels[-1]
        levels.append(
            [prf.digest(below[i : i + TREE_ARITY]) for i in range(0, len(below), TREE_ARITY)]
        )
        if len(levels[-1]) == 1:
            return levels


def rebuild_cache_tree(
    prf: Prf, layout: CacheLayout, dirty_lines: Iterable[tuple[LineId, int]]
) -> int:
    """Root over the given dirty (line, MAC) pairs; input order is irrelevant."""
    per_set: dict[int, list[tuple[int, int]]] = {}
    for line, mac in dirty_lines:
        per_set.setdefault(layout.set_index(line), []).append(
            (layout.geometry.ordinal(line), mac)
        )
    set_macs = [0] * layout.n_sets
    for set_no, entries in per_set.items():
        entries.sort(reverse=True)
        set_macs[set_no] = set_mac(prf, [mac for _, mac in entries])
    return _build_levels(prf, set_macs)[-1][0]


class CacheBackend(Protocol):
    def fetch_verified(self, line: LineId) -> tuple[NodeContent, int]:
        """Read a line from NVM, verify it, return (content, parent counter)."""
        ...

    def write_back(self, victim: CacheLine) -> None:
        """Handle a line leaving the cache."""
        ...


class MetadataCache:
    """
    Set-associative LRU cache for counter blocks and SIT nodes.

    Each set is an OrderedDict in LRU order (oldest first). Dirty-bit
    transitions are reported to the registered listeners.
    """

    def __init__(self, layout: CacheLayout, prf: Prf, backend: CacheBackend):
        self.layout = layout
        self.backend = backend
        self.tree = CacheTree(prf, layout.n_sets)
        self._sets: list[OrderedDict[LineId, CacheLine]] = [
            OrderedDict() for _ in range(layout.n_sets)
        ]
        self.dirty_ordinals: set[int] = set()
        # victims whose write-back is still running; they stay the live copy
        self.write_buffer: dict[LineId, CacheLine] = {}
        self.listeners: list[Callable[[LineId, bool], None]] = []
        self.hits = 0
        self.misses = 0
        self.insertions = [0] * layout.n_sets
        self.evictions = [0] * layout.n_sets

    @property
    def ways(self) -> int:
        return self.layout.ways

    def set_index(self, line: LineId) -> int:
        return self.layout.set_index(line)

    def lookup(self, line: LineId) -> CacheLine | None:
        """Resident line without touching LRU order."""
        return self._sets[self.set_index(line)].get(line)

    def access(self, line: LineId, intent: Intent = Intent.READ) -> tuple[CacheLine, bool]:
        """
        Return the resident line, filling it from NVM on a miss.

        Returns (line, hit). Filling may recurse into the parent and evict
        lines from any set, so the target set is re-checked after the fetch.
        A victim still being written back is served from the write buffer;
        its NVM copy is older than the buffered one.
        """
        set_no = self.set_index(line)
        ways = self._sets[set_no]
        hit = True
        while True:
            resident = ways.get(line)
            if resident is not None:
                ways.move_to_end(line)
                break
            resident = self.write_buffer.get(line)
            if resident is not None:
                break
            hit = False
            if len(ways) >= self.ways:
                self._evict_lru(set_no)
                continue
            content, parent_counter = self.backend.fetch_verified(line)
            if line in ways or len(ways) >= self.ways:
                continue
            resident = CacheLine(line, content, parent_counter)
            ways[line] = resident
            self.insertions[set_no] += 1
            break
        if hit:
            self.hits += 1
        else:
            self.misses += 1
        if intent == Intent.MODIFY:
            self.mark_dirty(resident)
        return resident, hit

    def mark_dirty(self, line: CacheLine) -> None:
        if line.dirty:
            return
        line.dirty = True
        self.dirty_ordinals.add(self.layout.geometry.ordinal(line.id))
        self._refresh_set(self.set_index(line.id))
        self._notify(line.id, True)

    def mark_clean(self, line: CacheLine) -> None:
        if not line.dirty:
            return
        line.dirty = False
        self.dirty_ordinals.discard(self.layout.geometry.ordinal(line.id))
        self._refresh_set(self.set_index(line.id))
        self._notify(line.id, False)

    def replace(
        self,
        line: CacheLine,
        content: NodeContent,
        parent_counter: int | None = None,
    ) -> None:
        """Install new content for a resident line; the MAC inside content must be current."""
        line.content = content
        line.stale = True
        if parent_counter is not None:
            line.parent_counter = parent_counter
        if line.dirty:
            self._refresh_set(self.set_index(line.id))

    def _evict_lru(self, set_no: int) -> None:
        _, victim = self._sets[set_no].popitem(last=False)
        self.evictions[set_no] += 1
        if victim.dirty:
            self.dirty_ordinals.discard(self.layout.geometry.ordinal(victim.id))
            self._refresh_set(set_no)
        self.write_buffer[victim.id] = victim
        try:
            self.backend.write_back(victim)
        finally:
            del self.write_buffer[victim.id]
        if victim.dirty:
            self._notify(victim.id, False)

    def _refresh_set(self, set_no: int) -> None:
        dirty = [line for line in self._sets[set_no].values() if line.dirty]
        dirty.sort(key=lambda line: self.layout.geometry.ordinal(line.id), reverse=True)
        self.tree.update_set(set_no, [line.mac for line in dirty])

    def _notify(self, line: LineId, dirty: bool) -> None:
        for listener in self.listeners:
            listener(line, dirty)

    # -- views --------------------------------------------------------------

    def lines(self) -> Iterator[CacheLine]:
        for ways in self._sets:
            yield from ways.values()

    def dirty_lines(self) -> list[tuple[LineId, int]]:
        return [(line.id, line.mac) for line in self.lines() if line.dirty]

    def dirty_ordinals_in(self, lo: int, hi: int) -> list[int]:
        return [o for o in self.dirty_ordinals if lo <= o < hi]

    def slot_of(self, line: LineId) -> int | None:
        """Way-slot number (set × ways + position) of a resident line."""
        set_no = self.set_index(line)
        for position, resident in enumerate(self._sets[set_no]):
            if resident == line:
                return set_no * self.ways + position
        return None

    def __len__(self) -> int:
        return sum(len(ways) for ways in self._sets)

    def check_tree(self) -> None:
        expected = rebuild_cache_tree(self.tree.prf, self.layout, self.dirty_lines())
        if expected != self.tree.root:
            logger.error("cache-tree root drifted from rebuild")
            raise InvariantViolation("incremental cache-tree root differs from rebuild")
