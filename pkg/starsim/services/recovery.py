from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass, replace

from starsim.models.geometry import BITMAP_BITS, Geometry, LineId, LineKind
from starsim.models.lines import (
    LSB_BITS,
    MAJOR_SIDECAR_BITS,
    MINOR_BITS,
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
from starsim.models.snapshot import CrashSnapshot
from starsim.schemas.recovery import RecoveryReport
from starsim.services.cache import CacheLayout, rebuild_cache_tree
from starsim.services.crypto import Prf, seal_node
from starsim.services.sit import AwConfig
from starsim.services.tracker import enumerate_dirty

logger = logging.getLogger(__name__)

# Modeled cost of restoring one node: 8 child sidecars, the stale copy, the parent counter.
RESTORE_READS = 10
ANUBIS_READS_PER_LINE = 3


def restore_counter(stale: int, lsb: int, bits: int) -> int:
    """
    Splice a child's sidecar into the stale counter's high bits.

    A sidecar below the stale low bits means the counter wrapped once.
    """
    mask = (1 << bits) - 1
    value = (stale & ~mask) | lsb
    if lsb < stale & mask:
        value += 1 << bits
    return value


class RecoveryEngine:
    """
    Post-crash restoration for STAR.

    Holds the run's key and cache layout, which are configuration rather
    than lost state.
    """

    def __init__(self, prf: Prf, layout: CacheLayout, read_ns: int = 100):
        self.prf = prf
        self.layout = layout
        self.read_ns = read_ns

    def recover(
        self, snapshot: CrashSnapshot, cfg: AwConfig
    ) -> tuple[RecoveryReport, NvmImage | None]:
        """
        Restore stale nodes and check them against the cache-tree root.

        Returns (report, recovered image). The image is None when the
        rebuilt root does not match the on-chip register.
        """
        geometry = snapshot.geometry
        # 1. Find the lines that were dirty at the crash
        dirty, index_reads = enumerate_dirty(geometry, snapshot.nvm, snapshot.chip.top_index_line)
        to_restore = sorted(
            (line for line in dirty if line.level <= cfg.start_level),
            key=lambda line: (-line.level, line.index),
        )
        folded = [line for line in dirty if line.level > cfg.start_level]

        # 2. Restore stale nodes top-down, parents before children
        restored: dict[LineId, NodeContent] = {}
        functional_reads = index_reads
        for line in to_restore:
            content, used = self.restore_node(line, snapshot, restored)
            restored[line] = content
            functional_reads += used

        # 3. Rebuild the cache-tree root over every dirty line's MAC
        macs = [(line, content.mac_field.mac54) for line, content in restored.items()]
        for line in folded:
            macs.append((line, snapshot.nvm.peek(line).mac_field.mac54))
            functional_reads += 1
        reads = index_reads + len(folded) + RESTORE_READS * len(to_restore)
        root = rebuild_cache_tree(self.prf, self.layout, macs)

        report = RecoveryReport(
            scheme=snapshot.scheme,
            crash_event=snapshot.event_index,
            restored=[(int(line.kind), line.level, line.index) for line in to_restore],
            dirty_lines=len(dirty),
            index_reads=index_reads,
            reads=reads,
            functional_reads=functional_reads,
            read_ns=self.read_ns,
        )
        if root != snapshot.chip.cache_tree_root:
            logger.warning(
                "recovery of crash at event %s failed: cache-tree root mismatch",
                snapshot.event_index,
            )
            report.verdict = "root_mismatch"
            report.detail = "rebuilt cache-tree root differs from the on-chip register"
            return report, None

        # 4. Persist the restored nodes and clear the recovery area
        image = snapshot.nvm.clone()
        for line, content in restored.items():
            image.write(line, content)
        for line in [line for line in image.lines if line.kind in (LineKind.BITMAP_L1, LineKind.BITMAP_L2)]:
            image.discard(line)
        report.writes = image.writes
        logger.info(
            "recovered crash at event %s: %d dirty, %d restored, %d reads",
            snapshot.event_index,
            len(dirty),
            len(to_restore),
            reads,
        )
        return report, image

    def restore_node(
        self,
        line: LineId,
        snapshot: CrashSnapshot,
        restored: dict[LineId, NodeContent],
    ) -> tuple[NodeContent, int]:
        """
        Rebuild a stale node from its NVM copy and its children's sidecars.

        Returns (content, lines actually read). The MAC is computed with the
        node's stored sidecar, so a replayed stale copy yields a wrong MAC.
        """
        geometry = snapshot.geometry
        nvm = snapshot.nvm
        stale = nvm.peek(line)
        parent_counter = self._parent_counter(line, snapshot, restored)
        children = geometry.children_of(line)
        lsbs = [nvm.peek(child).mac_field.lsb10 for child in children]
        if isinstance(stale, CounterBlockContent):
            minors = tuple(lsb & (MINOR_LIMIT - 1) for lsb in lsbs)
            major = restore_counter(stale.major, lsbs[0] >> MINOR_BITS, MAJOR_SIDECAR_BITS)
            body: NodeContent = CounterBlockContent(major, minors, stale.mac_field)
        else:
            counters = list(stale.counters)
            for child, lsb in zip(children, lsbs):
                slot = geometry.counter_slot(child)
                counters[slot] = restore_counter(counters[slot], lsb, LSB_BITS)
            body = SitNodeContent(tuple(counters), stale.mac_field)
        content = seal_node(self.prf, line, body, parent_counter, stale.mac_field.lsb10)
        return content, 2 + len(children)

    @staticmethod
    def _parent_counter(
        line: LineId, snapshot: CrashSnapshot, restored: dict[LineId, NodeContent]
    ) -> int:
        geometry = snapshot.geometry
        parent = geometry.parent_of(line)
        slot = geometry.counter_slot(line)
        if geometry.is_root(parent):
            return snapshot.chip.sit_root_counters[slot]
        content = restored.get(parent) or snapshot.nvm.peek(parent)
        return content.counters[slot]

    # -- post-recovery checks -----------------------------------------------

    def audit(self, image: NvmImage, root_counters: Iterable[int]) -> list[LineId]:
        """Every written line that fails verification against its parent in `image`."""
        geometry = image.geometry
        roots = tuple(root_counters)
        failures = []
        for line, content in image.lines.items():
            if line.is_metadata:
                parent = geometry.parent_of(line)
                slot = geometry.counter_slot(line)
                if geometry.is_root(parent):
                    parent_counter = roots[slot]
                else:
                    parent_counter = image.peek(parent).counters[slot]
                if not self._node_valid(line, content, parent_counter):
                    failures.append(line)
            elif line.kind == LineKind.USER_DATA:
                try:
                    self.plaintext(image, line)
                except ValueError:
                    failures.append(line)
        return failures

    def _node_valid(self, line: LineId, content: LineContent, parent_counter: int) -> bool:
        if not isinstance(content, (CounterBlockContent, SitNodeContent)):
            return False
        expected = seal_node(self.prf, line, content, parent_counter)
        return expected.mac_field == content.mac_field

    def plaintext(self, image: NvmImage, addr: LineId) -> bytes:
        """Decrypt a user line from `image`, raising ValueError if it does not verify."""
        geometry = image.geometry
        cb = image.peek(geometry.parent_of(addr))
        major = cb.major
        minor = cb.minors[geometry.counter_slot(addr)]
        content = image.peek(addr)
        lsb10 = data_sidecar(major, minor)
        if not isinstance(content, DataLineContent) or content.mac_field != MacField(
            self.prf.mac_data(content.ciphertext, addr, major, minor, lsb10), lsb10
        ):
            raise ValueError(f"{addr} does not verify")
        return self.prf.decrypt(content.ciphertext, addr, major, minor)


def inject_replay(snapshot: CrashSnapshot, target: LineId, old_version: LineContent) -> CrashSnapshot:
    """Copy of `snapshot` with `target` rolled back to `old_version`."""
    image = snapshot.nvm.clone()
    image.replace(target, old_version)
    return replace(snapshot, nvm=image)


# -- recovery-time model --------------------------------------------------------


@dataclass(frozen=True)
class RecoveryCostModel:
    """Modeled STAR recovery reads for a dirty set, without running a trace."""

    geometry: Geometry
    read_ns: int = 100

    def index_reads(self, dirty: Iterable[LineId]) -> int:
        l1 = {self.geometry.ordinal(line) // BITMAP_BITS for line in dirty}
        l2 = {number // BITMAP_BITS for number in l1}
        return 1 + len(l1) + len(l2)

    def reads(self, dirty: list[LineId], cfg: AwConfig) -> int:
        restore = sum(1 for line in dirty if line.level <= cfg.start_level)
        return self.index_reads(dirty) + RESTORE_READS * restore + (len(dirty) - restore)

    def time_s(self, dirty: list[LineId], cfg: AwConfig) -> float:
        return self.reads(dirty, cfg) * self.read_ns / 1e9


def forced_dirty_set(cache_bytes: int, dirty_ratio: float, geometry: Geometry) -> list[LineId]:
    """
    Dirty lines of a full metadata cache: half counter blocks, half SIT nodes.

    Both halves are contiguous runs from the start of their region.
    """
    lines = cache_bytes // geometry.line_bytes
    dirty = round(lines * dirty_ratio)
    counter_blocks = min(dirty // 2, geometry.level_sizes[0])
    first_sit = geometry.level_sizes[0]
    sit_nodes = min(dirty - counter_blocks, geometry.metadata_lines - first_sit - 1)
    return [LineId.node(0, i) for i in range(counter_blocks)] + [
        geometry.node_at(first_sit + i) for i in range(sit_nodes)
    ]


def anubis_reads(cache_lines: int) -> int:
    return ANUBIS_READS_PER_LINE * cache_lines


def recovery_time_table(
    geometry: Geometry, cache_bytes: int, dirty_ratio: float, read_ns: int = 100
) -> dict[str, float]:
    """Modeled recovery seconds for each AW mode and for Anubis at one dirty ratio."""
    model = RecoveryCostModel(geometry, read_ns)
    dirty = forced_dirty_set(cache_bytes, dirty_ratio, geometry)
    table = {
        mode: model.time_s(dirty, AwConfig.for_mode(mode, geometry))
        for mode in ("aw-l", "aw-m", "aw-h")
    }
    table["anubis"] = anubis_reads(cache_bytes // geometry.line_bytes) * read_ns / 1e9
    return table
