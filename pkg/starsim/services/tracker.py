from __future__ import annotations

import logging
from collections import OrderedDict
from collections.abc import Callable, Iterator
from dataclasses import dataclass

from starsim.errors import InvariantViolation
from starsim.models.geometry import BITMAP_BITS, Geometry, LineId
from starsim.models.lines import BitmapLineContent
from starsim.models.nvm import NvmImage

logger = logging.getLogger(__name__)

DirtySource = Callable[[int, int], list[int]]
SpillSink = Callable[[LineId, BitmapLineContent], None]


@dataclass(frozen=True, slots=True)
class TrackerOutcome:
    adr_hit: bool
    spilled: LineId | None = None


def iter_bits(bits: int) -> Iterator[int]:
    while bits:
        low = bits & -bits
        yield low.bit_length() - 1
        bits ^= low


class AdrRegion:
    """LRU pool of resident bitmap lines for one index layer."""

    def __init__(self, layer: int, capacity: int):
        self.layer = layer
        self.capacity = capacity
        self.lines: OrderedDict[int, int] = OrderedDict()

    def __contains__(self, number: int) -> bool:
        return number in self.lines

    def __len__(self) -> int:
        return len(self.lines)


class BitmapTracker:
    """
    Dirty map of metadata lines kept in ADR bitmap lines.

    L1 bit o is metadata ordinal o. L2 bit j marks L1 line j as possibly
    non-zero and is cleared lazily. The top line is an on-chip register with
    one bit per L2 line. RA is never read while running: a missing line is
    rebuilt from the cache's dirty set.
    """

    def __init__(
        self,
        geometry: Geometry,
        l1_capacity: int,
        l2_capacity: int,
        dirty_source: DirtySource,
        spill: SpillSink,
    ):
        self.geometry = geometry
        self.l1 = AdrRegion(1, l1_capacity)
        self.l2 = AdrRegion(2, l2_capacity)
        self.top = 0
        self.dirty_source = dirty_source
        self.spill = spill
        self.accesses = 0
        self.hits = 0
        self.spills = 0
        self.spilled_l1: dict[int, int] = {}

    @property
    def hit_ratio(self) -> float | None:
        return self.hits / self.accesses if self.accesses else None

    def record_state_change(self, line: LineId, new_dirty: bool) -> TrackerOutcome:
        l1_no, bit = divmod(self.geometry.ordinal(line), BITMAP_BITS)
        self.accesses += 1
        if l1_no in self.l1:
            self.l1.lines.move_to_end(l1_no)
            self.hits += 1
            outcome = TrackerOutcome(adr_hit=True)
            materialized = False
        else:
            outcome = TrackerOutcome(adr_hit=False, spilled=self._load(self.l1, l1_no))
            materialized = True

        before = self.l1.lines[l1_no]
        if new_dirty:
            self.l1.lines[l1_no] = before | (1 << bit)
            if materialized or before == 0:
                self._mark_l2(l1_no)
        else:
            self.l1.lines[l1_no] = before & ~(1 << bit)
        return outcome

    def _mark_l2(self, l1_no: int) -> None:
        l2_no, bit = divmod(l1_no, BITMAP_BITS)
        if l2_no in self.l2:
            self.l2.lines.move_to_end(l2_no)
        else:
            self._load(self.l2, l2_no)
        self.l2.lines[l2_no] |= 1 << bit
        self.top |= 1 << l2_no

    def _load(self, region: AdrRegion, number: int) -> LineId | None:
        """Make a line resident, spilling the LRU line to RA when full."""
        spilled = None
        if len(region) >= region.capacity:
            victim_no, victim_bits = region.lines.popitem(last=False)
            spilled = LineId.bitmap(region.layer, victim_no)
            self.spill(spilled, BitmapLineContent(victim_bits))
            if region.layer == 1:
                self.spilled_l1[victim_no] = victim_bits
            self.spills += 1
        region.lines[number] = self._materialize(region.layer, number)
        if region.layer == 2 and region.lines[number]:
            self.top |= 1 << number
        return spilled

    def _materialize(self, layer: int, number: int) -> int:
        span = BITMAP_BITS if layer == 1 else BITMAP_BITS * BITMAP_BITS
        lo = number * span
        bits = 0
        for ordinal in self.dirty_source(lo, lo + span):
            offset = ordinal - lo
            bits |= 1 << (offset if layer == 1 else offset // BITMAP_BITS)
        return bits

    # -- crash and oracle ---------------------------------------------------

    def battery_flush(self, image: NvmImage) -> int:
        """Write every resident line into the recovery area of `image`."""
        for region in (self.l1, self.l2):
            for number, bits in region.lines.items():
                image.replace(LineId.bitmap(region.layer, number), BitmapLineContent(bits))
        return len(self.l1) + len(self.l2)

    def view(self) -> set[int]:
        """Dirty ordinals as recorded across ADR and RA."""
        lines = dict(self.spilled_l1)
        lines.update(self.l1.lines)
        return {
            number * BITMAP_BITS + bit for number, bits in lines.items() for bit in iter_bits(bits)
        }

    def check(self, truth: set[int]) -> None:
        if self.view() != truth:
            logger.error("bitmap view disagrees with the dirty set")
            raise InvariantViolation("tracker view differs from cache dirty set")


def enumerate_dirty(geometry: Geometry, image: NvmImage, top: int) -> tuple[list[LineId], int]:
    """
    Walk the index from the top line down to the L1 bits.

    Returns (dirty lines, bitmap lines read); the on-chip top line counts
    as one read.
    """
    reads = 1
    dirty: list[LineId] = []
    for l2_no in iter_bits(top):
        reads += 1
        l2_bits = image.peek(LineId.bitmap(2, l2_no)).bits
        for bit in iter_bits(l2_bits):
            l1_no = l2_no * BITMAP_BITS + bit
            reads += 1
            l1_bits = image.peek(LineId.bitmap(1, l1_no)).bits
            dirty.extend(
                geometry.node_at(l1_no * BITMAP_BITS + offset) for offset in iter_bits(l1_bits)
            )
    return dirty, reads
