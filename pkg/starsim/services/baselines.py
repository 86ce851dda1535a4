from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

from starsim.config import Settings
from starsim.models.geometry import Geometry, LineId
from starsim.models.lines import LSB_MASK, LineContent, SitNodeContent
from starsim.models.snapshot import CrashSnapshot
from starsim.schemas.recovery import RecoveryReport
from starsim.services.cache import CacheLayout, CacheLine
from starsim.services.crypto import Prf, seal_node
from starsim.services.sit import AwConfig, SitEngine, StarEngine, WriteCategory
from starsim.services.recovery import anubis_reads

logger = logging.getLogger(__name__)


class SchemeId(str, Enum):
    WB = "wb"
    STRICT = "strict"
    ANUBIS = "anubis"
    STAR = "star"


class StrictEngine(SitEngine):
    """Persists the whole branch below the root on every data write."""

    label = "strict"

    def _after_data_write(self, addr: LineId, cb: CacheLine) -> None:
        line = cb
        while True:
            parent_id = self.geometry.parent_of(line.id)
            slot = self.geometry.counter_slot(line.id)
            parent = None
            if self.geometry.is_root(parent_id):
                self.root_counters[slot] += 1
                parent_counter = self.root_counters[slot]
            else:
                parent, _ = self.cache.access(parent_id)
                counters = list(parent.content.counters)
                counters[slot] += 1
                bumped = SitNodeContent(tuple(counters), parent.content.mac_field)
                self.cache.replace(
                    parent, seal_node(self.prf, parent_id, bumped, parent.parent_counter)
                )
                parent_counter = counters[slot]
            sealed = seal_node(self.prf, line.id, line.content, parent_counter)
            self.cache.replace(line, sealed, parent_counter=parent_counter)
            self._persist(line.id, sealed, WriteCategory.STRICT_BRANCH)
            line.stale = False
            self.cache.mark_clean(line)
            if parent is None:
                return
            line = parent


@dataclass
class ShadowTable:
    """One entry per metadata-cache way: changed node, counter LSBs, MAC."""

    capacity: int
    entries: dict[int, tuple[LineId, tuple[int, ...], int]] = field(default_factory=dict)

    def record(self, slot: int, line: LineId, counters: tuple[int, ...], mac: int) -> None:
        self.entries[slot % self.capacity] = (line, tuple(c & LSB_MASK for c in counters), mac)


class AnubisEngine(SitEngine):
    """WB engine that also writes a shadow-table block for every NVM write."""

    label = "anubis"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.shadow_table = ShadowTable(self.layout.capacity_lines)

    def _persist(self, line: LineId, content: LineContent, category: WriteCategory) -> None:
        super()._persist(line, content, category)
        changed = self.geometry.parent_of(line)
        if not self.geometry.is_root(changed):
            resident = self.cache.lookup(changed)
            if resident is not None:
                slot = self.cache.slot_of(changed) or 0
                self.shadow_table.record(slot, changed, resident.content.counters, resident.mac)
        self.writes[WriteCategory.ST_BLOCK.value] += 1


def build_engine(
    settings: Settings, geometry: Geometry, prf: Prf, record_history: bool = False
) -> SitEngine:
    """Engine for the configured scheme."""
    layout = CacheLayout.from_sizes(
        geometry, settings.counter_cache_bytes, settings.sit_cache_bytes, settings.ways
    )
    common = dict(fresh_victim_policy=settings.fresh_victim_policy, record_history=record_history)
    scheme = SchemeId(settings.scheme)
    if scheme == SchemeId.STAR:
        return StarEngine(
            geometry,
            prf,
            layout,
            AwConfig.for_mode(settings.aw_mode, geometry),
            settings.l1_lines,
            settings.l2_lines,
            **common,
        )
    engine_cls = {
        SchemeId.WB: SitEngine,
        SchemeId.STRICT: StrictEngine,
        SchemeId.ANUBIS: AnubisEngine,
    }[scheme]
    return engine_cls(geometry, prf, layout, **common)


def recover_anubis(snapshot: CrashSnapshot, read_ns: int = 100) -> RecoveryReport:
    """Accounting-level Anubis recovery: three reads per cache line, always."""
    reads = anubis_reads(snapshot.cache_capacity_lines)
    return RecoveryReport(
        scheme=SchemeId.ANUBIS.value,
        crash_event=snapshot.event_index,
        dirty_lines=snapshot.dirty_lines,
        reads=reads,
        functional_reads=reads,
        read_ns=read_ns,
    )


def recover_strict(snapshot: CrashSnapshot, read_ns: int = 100) -> RecoveryReport:
    """Strict persistence leaves nothing stale; there is nothing to read."""
    return RecoveryReport(
        scheme=SchemeId.STRICT.value,
        crash_event=snapshot.event_index,
        dirty_lines=snapshot.dirty_lines,
        read_ns=read_ns,
    )
