from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache, partial
from typing import Literal

from starsim.errors import ConfigError, IntegrityViolation, InvariantViolation
from starsim.models.geometry import LINE_BYTES, Geometry, LineId, LineKind
from starsim.models.lines import (
    LSB_MASK,
    MINOR_LIMIT,
    CounterBlockContent,
    DataLineContent,
    LineContent,
    MacField,
    NodeContent,
    SitNodeContent,
    data_sidecar,
)
from starsim.models.nvm import NvmImage
from starsim.models.snapshot import ChipState, CrashSnapshot
from starsim.services.cache import CacheLayout, CacheLine, Intent, MetadataCache
from starsim.services.crypto import Prf, genesis_content, seal_node
from starsim.services.tracker import BitmapTracker

logger = logging.getLogger(__name__)

# A node is force-flushed before any counter can move a full sidecar period.
LSB_WINDOW = LSB_MASK


class WriteCategory(str, Enum):
    DATA = "data"
    METADATA_EVICT = "metadata_evict"
    AHEAD_WRITE = "ahead_write"
    BITMAP_SPILL = "bitmap_spill"
    ST_BLOCK = "st_block"
    STRICT_BRANCH = "strict_branch"
    REENCRYPT = "reencrypt"
    LSB_FLUSH = "lsb_flush"


AwMode = Literal["aw-l", "aw-m", "aw-h"]
FreshVictimPolicy = Literal["writeback", "discard"]


@dataclass(frozen=True)
class AwConfig:
    """Ahead Write start level: -1 user data, 0 counter blocks, levels-2 top SIT level."""

    mode: AwMode
    start_level: int

    @classmethod
    def for_mode(cls, mode: AwMode, geometry: Geometry) -> AwConfig:
        starts = {"aw-l": -1, "aw-m": 0, "aw-h": geometry.levels - 2}
        if mode not in starts:
            raise ConfigError(f"unknown aw_mode: {mode}")
        return cls(mode, starts[mode])


@dataclass(frozen=True, slots=True)
class FlushEvent:
    victim: LineId
    wrote_victim: bool
    ahead_wrote_parent: bool
    nvm_writes: int


class SitEngine:
    """
    Secure memory with a write-back metadata cache and lazy SIT updates.

    This base class is the WB scheme: evictions write dirty victims and bump
    the parent counter, nothing else is persisted early. Subclasses hook
    `_after_data_write` and `_ahead_write_parent`.
    """

    label = "wb"
    lsb_window = False

    def __init__(
        self,
        geometry: Geometry,
        prf: Prf,
        layout: CacheLayout,
        fresh_victim_policy: FreshVictimPolicy = "writeback",
        record_history: bool = False,
    ):
        if geometry.levels < 2:
            raise ConfigError("the simulated memory needs at least two pages")
        self.geometry = geometry
        self.prf = prf
        self.layout = layout
        self.fresh_victim_policy = fresh_victim_policy
        genesis = lru_cache(maxsize=1 << 16)(partial(genesis_content, prf))
        self.nvm = NvmImage(geometry, genesis, record_history=record_history)
        self.root_counters = [0] * geometry.level_sizes[-2]
        self.cache = MetadataCache(layout, prf, backend=self)
        self.writes: Counter[str] = Counter()
        self.lsb_forced_flushes = 0
        self.events: list[FlushEvent] = []

    @property
    def reads(self) -> int:
        return self.nvm.reads

    def _persist(self, line: LineId, content: LineContent, category: WriteCategory) -> None:
        self.nvm.write(line, content)
        self.writes[category.value] += 1

    # -- cache backend ------------------------------------------------------

    def fetch_verified(self, line: LineId) -> tuple[NodeContent, int]:
        parent_counter = self._parent_counter(line)
        content = self.nvm.read(line)
        ok, detail = self.verify_fill(line, content, parent_counter)
        if not ok:
            logger.error("integrity violation on fill: %s", detail)
            raise IntegrityViolation(detail or "verification failed", line)
        return content, parent_counter

    def write_back(self, victim: CacheLine) -> None:
        self.evict_metadata(victim)

    def _parent_counter(self, line: LineId) -> int:
        parent = self.geometry.parent_of(line)
        slot = self.geometry.counter_slot(line)
        if self.geometry.is_root(parent):
            return self.root_counters[slot]
        resident, _ = self.cache.access(parent)
        return resident.content.counters[slot]

    def verify_fill(
        self, line: LineId, content: LineContent, parent_counter: int
    ) -> tuple[bool, str | None]:
        """
        Check a node read from NVM against its parent's counter.

        Returns (is_valid, error).
        """
        if not isinstance(content, (CounterBlockContent, SitNodeContent)):
            return False, f"{line} does not hold a metadata node"
        mac_field = content.mac_field
        expected = self.prf.mac_node(line, content, parent_counter, mac_field.lsb10)
        if expected != mac_field.mac54:
            return False, f"MAC mismatch on {line}"
        if mac_field.lsb10 != parent_counter & LSB_MASK:
            return False, f"LSB sidecar of {line} does not match its parent counter"
        return True, None

    # -- user data ----------------------------------------------------------

    def write_data(self, addr: LineId, plaintext: bytes) -> list[FlushEvent]:
        """Encrypt and persist one user line; returns the flushes it caused."""
        if len(plaintext) != LINE_BYTES:
            raise ValueError("plaintext must be one line")
        self.events = []
        cb_id = self.geometry.parent_of(addr)
        slot = self.geometry.counter_slot(addr)
        cb, _ = self.cache.access(cb_id, Intent.MODIFY)
        minor = cb.content.minors[slot] + 1
        if minor >= MINOR_LIMIT:
            self.re_encrypt_page(cb_id, {slot: plaintext})
        else:
            minors = list(cb.content.minors)
            minors[slot] = minor
            bumped = CounterBlockContent(cb.content.major, tuple(minors), cb.content.mac_field)
            self.cache.replace(cb, seal_node(self.prf, cb_id, bumped, cb.parent_counter))
            self._write_data_line(addr, plaintext, cb.content.major, minor, WriteCategory.DATA)
        self._after_data_write(addr, cb)
        events, self.events = self.events, []
        return events

    def read_data(self, addr: LineId) -> bytes:
        cb, _ = self.cache.access(self.geometry.parent_of(addr))
        slot = self.geometry.counter_slot(addr)
        return self._read_verified(addr, cb.content.major, cb.content.minors[slot])

    def _write_data_line(
        self, addr: LineId, plaintext: bytes, major: int, minor: int, category: WriteCategory
    ) -> None:
        ciphertext = self.prf.encrypt(plaintext, addr, major, minor)
        lsb10 = data_sidecar(major, minor)
        mac = self.prf.mac_data(ciphertext, addr, major, minor, lsb10)
        self._persist(addr, DataLineContent(ciphertext, MacField(mac, lsb10)), category)

    def _read_verified(self, addr: LineId, major: int, minor: int) -> bytes:
        content = self.nvm.read(addr)
        lsb10 = data_sidecar(major, minor)
        valid = (
            isinstance(content, DataLineContent)
            and content.mac_field.lsb10 == lsb10
            and self.prf.mac_data(content.ciphertext, addr, major, minor, lsb10)
            == content.mac_field.mac54
        )
        if not valid:
            logger.error("integrity violation on data read: %s", addr)
            raise IntegrityViolation(f"MAC mismatch on {addr}", addr)
        return self.prf.decrypt(content.ciphertext, addr, major, minor)

    def re_encrypt_page(self, cb_id: LineId, overwrite: dict[int, bytes] | None = None) -> int:
        """
        Bump the major counter, reset the minors and rewrite the whole page.

        `overwrite` maps slots to new plaintexts (the write that overflowed).
        Returns the number of NVM writes (64 data lines plus the counter block).
        """
        overwrite = overwrite or {}
        cb, _ = self.cache.access(cb_id, Intent.MODIFY)
        old = cb.content
        base = cb_id.index * self.geometry.counters_per_block
        plaintexts = [
            overwrite[j]
            if j in overwrite
            else self._read_verified(LineId.data(base + j), old.major, old.minors[j])
            for j in range(self.geometry.counters_per_block)
        ]
        major = old.major + 1
        fresh = CounterBlockContent(major, (0,) * len(old.minors), old.mac_field)
        self.cache.replace(cb, seal_node(self.prf, cb_id, fresh, cb.parent_counter))
        for j, plaintext in enumerate(plaintexts):
            category = WriteCategory.DATA if j in overwrite else WriteCategory.REENCRYPT
            self._write_data_line(LineId.data(base + j), plaintext, major, 0, category)
        self._refresh(cb, WriteCategory.REENCRYPT)
        logger.debug("re-encrypted page %d at major %d", cb_id.index, major)
        return len(plaintexts) + 1

    # -- metadata eviction --------------------------------------------------

    def evict_metadata(self, victim: CacheLine) -> FlushEvent:
        if not victim.dirty:
            event = FlushEvent(victim.id, False, False, 0)
        elif not victim.stale and self.fresh_victim_policy == "discard":
            event = FlushEvent(victim.id, False, False, 0)
        else:
            event = self._write_victim(victim)
        self.events.append(event)
        return event

    def _write_victim(self, victim: CacheLine) -> FlushEvent:
        parent_id = self.geometry.parent_of(victim.id)
        slot = self.geometry.counter_slot(victim.id)
        if self.geometry.is_root(parent_id):
            self.root_counters[slot] += 1
            sealed = seal_node(self.prf, victim.id, victim.content, self.root_counters[slot])
            self._persist(victim.id, sealed, WriteCategory.METADATA_EVICT)
            return FlushEvent(victim.id, True, False, 1)

        parent, _ = self.cache.access(parent_id, Intent.MODIFY)
        counters = list(parent.content.counters)
        counters[slot] += 1
        bumped = SitNodeContent(tuple(counters), parent.content.mac_field)
        self.cache.replace(parent, seal_node(self.prf, parent_id, bumped, parent.parent_counter))
        parent.increments += 1
        sealed = seal_node(self.prf, victim.id, victim.content, counters[slot])
        self._persist(victim.id, sealed, WriteCategory.METADATA_EVICT)

        if self._ahead_write_parent(victim.id):
            self._refresh(parent, WriteCategory.AHEAD_WRITE)
            return FlushEvent(victim.id, True, True, 2)
        self.lsb_window_flush(parent)
        return FlushEvent(victim.id, True, False, 1)

    def _refresh(self, line: CacheLine, category: WriteCategory) -> None:
        """Write a resident line as is; it stays cached and keeps its dirty flag."""
        self._persist(line.id, line.content, category)
        line.stale = False
        line.increments = 0

    def lsb_window_flush(self, line: CacheLine) -> FlushEvent | None:
        if (
            not self.lsb_window
            or line.id.kind != LineKind.SIT_NODE
            or line.increments < LSB_WINDOW
        ):
            return None
        self._refresh(line, WriteCategory.LSB_FLUSH)
        self.lsb_forced_flushes += 1
        logger.debug("forced LSB-window flush of %s", line.id)
        event = FlushEvent(line.id, True, False, 1)
        self.events.append(event)
        return event

    # -- hooks --------------------------------------------------------------

    def _after_data_write(self, addr: LineId, cb: CacheLine) -> None:
        pass

    def _ahead_write_parent(self, victim: LineId) -> bool:
        return False

    # -- crash -------------------------------------------------------------

    def crash(self, event_index: int) -> CrashSnapshot:
        """Snapshot of what survives power loss at this point; the run may continue."""
        image = self.nvm.clone()
        top = self._battery_flush(image)
        chip = ChipState(tuple(self.root_counters), self.cache.tree.root, top)
        return CrashSnapshot(
            geometry=self.geometry,
            nvm=image,
            chip=chip,
            scheme=self.label,
            event_index=event_index,
            dirty_lines=len(self.cache.dirty_ordinals),
            cached_lines=len(self.cache),
            cache_capacity_lines=self.layout.capacity_lines,
        )

    def _battery_flush(self, image: NvmImage) -> int:
        return 0

    def adopt(self, image: NvmImage, root_counters: tuple[int, ...]) -> None:
        """Continue from a recovered image with a cold cache."""
        image.record_history = self.nvm.record_history
        self.nvm = image
        self.root_counters = list(root_counters)

    # -- validation ---------------------------------------------------------

    def check_invariants(self) -> None:
        self.cache.check_tree()


class StarEngine(SitEngine):
    """
    SIT engine with Ahead Write and bitmap tracking of dirty metadata.

    Nodes above the start level are written whenever they change, so only
    nodes at or below it can be stale in NVM after a crash.
    """

    lsb_window = True

    def __init__(
        self,
        geometry: Geometry,
        prf: Prf,
        layout: CacheLayout,
        aw: AwConfig,
        adr_l1_lines: int,
        adr_l2_lines: int,
        fresh_victim_policy: FreshVictimPolicy = "writeback",
        record_history: bool = False,
    ):
        super().__init__(geometry, prf, layout, fresh_victim_policy, record_history)
        self.aw = aw
        self.tracker = BitmapTracker(
            geometry,
            adr_l1_lines,
            adr_l2_lines,
            dirty_source=self.cache.dirty_ordinals_in,
            spill=self._spill_bitmap,
        )
        self.cache.listeners.append(self.tracker.record_state_change)

    @property
    def label(self) -> str:
        return self.aw.mode

    def _battery_flush(self, image: NvmImage) -> int:
        self.tracker.battery_flush(image)
        return self.tracker.top

    def _spill_bitmap(self, line: LineId, content: LineContent) -> None:
        self._persist(line, content, WriteCategory.BITMAP_SPILL)

    def _after_data_write(self, addr: LineId, cb: CacheLine) -> None:
        if self.aw.start_level < 0 and cb.stale:
            self._refresh(cb, WriteCategory.AHEAD_WRITE)
            self.events.append(FlushEvent(addr, True, True, 2))

    def _ahead_write_parent(self, victim: LineId) -> bool:
        return victim.level >= self.aw.start_level

    def check_invariants(self) -> None:
        super().check_invariants()
        for line in self.cache.lines():
            if line.id.level > self.aw.start_level and self.nvm.peek(line.id) != line.content:
                raise InvariantViolation(f"{line.id} above the start level is stale in NVM", line.id)
        self.tracker.check(self.cache.dirty_ordinals)
