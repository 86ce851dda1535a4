from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from starsim.errors import ConfigError, TraceParseError
from starsim.models.geometry import LINE_BYTES
from starsim.schemas.trace import TRACE_MAGIC, Trace, TraceEvent

logger = logging.getLogger(__name__)


class WorkloadGenerator:
    """
    Address-level emulation of the benchmark data structures.

    Every generator works on line numbers inside a region of `region_bytes`
    and is a pure function of the seed.
    """

    WORKLOADS = ("array", "btree", "hash", "queue", "rbtree", "uniform", "zipf")

    # Share of W events in the synthetic locality controls
    WRITE_FRACTION = 0.75
    ZIPF_S = 1.2

    # B-tree shape: 4-line nodes, 16-way internal fanout, 32 keys per leaf
    BTREE_NODE_LINES = 4
    BTREE_FANOUT = 16
    BTREE_LEAF_KEYS = 32

    def __init__(self, region_bytes: int, seed: int, zipf_s: float = ZIPF_S):
        if region_bytes < 2 * LINE_BYTES or region_bytes % LINE_BYTES:
            raise ConfigError("region must be a multiple of 64 bytes holding at least two lines")
        self.lines = region_bytes // LINE_BYTES
        self.rng = np.random.default_rng(seed)
        self.zipf_s = zipf_s
        self.ops: list[tuple[str, int]] = []

    def generate(self, name: str, n_ops: int) -> list[TraceEvent]:
        if name not in self.WORKLOADS:
            raise ConfigError(f"unknown workload: {name}")
        self.ops = []
        getattr(self, f"_{name}")(n_ops)
        return [TraceEvent.model_construct(op=op, addr=line * LINE_BYTES) for op, line in self.ops]

    def _r(self, line: int) -> None:
        self.ops.append(("R", int(line) % self.lines))

    def _w(self, line: int) -> None:
        self.ops.append(("W", int(line) % self.lines))

    def _array(self, n_ops: int) -> None:
        for line in range(self.lines):
            self._w(line)
        for i, j in self.rng.integers(0, self.lines, size=(n_ops, 2)):
            self._r(i)
            self._r(j)
            self._w(i)
            self._w(j)

    def _queue(self, n_ops: int) -> None:
        # line 0 holds head/tail; the ring occupies the rest
        capacity = self.lines - 1
        head = tail = count = 0
        for draw in self.rng.random(n_ops):
            if count == 0 or (count < capacity and draw < 0.5):
                self._w(1 + tail)
                tail = (tail + 1) % capacity
                count += 1
            else:
                self._r(1 + head)
                head = (head + 1) % capacity
                count -= 1
            self._w(0)

    def _hash(self, n_ops: int) -> None:
        buckets = self.lines // 2
        heap = self.lines - buckets
        cursor = 0
        for bucket in self.rng.integers(0, buckets, n_ops):
            self._r(bucket)
            self._w(buckets + cursor)
            self._w(bucket)
            cursor = (cursor + 1) % heap

    def _btree(self, n_ops: int) -> None:
        node_lines = self.BTREE_NODE_LINES
        inner_lines = max(node_lines, self.lines // 4)
        leaf_slots = max(1, (self.lines - inner_lines) // node_lines)
        counts = [0]
        for key in self.rng.integers(0, 1 << 32, n_ops):
            leaves = len(counts)
            leaf = int(key) % leaves
            depth = math.ceil(math.log(leaves, self.BTREE_FANOUT)) if leaves > 1 else 0
            inner_id = 0
            for level in range(depth):
                width = self.BTREE_FANOUT ** (depth - level)
                self._r((inner_id + leaf // width) * node_lines % inner_lines)
                inner_id += -(-leaves // width)
            leaf_base = inner_lines + (leaf % leaf_slots) * node_lines
            self._w(leaf_base + (counts[leaf] * node_lines // self.BTREE_LEAF_KEYS))
            counts[leaf] += 1
            if counts[leaf] >= self.BTREE_LEAF_KEYS:
                counts[leaf] = self.BTREE_LEAF_KEYS // 2
                counts.append(self.BTREE_LEAF_KEYS // 2)
                new_base = inner_lines + ((len(counts) - 1) % leaf_slots) * node_lines
                for offset in range(node_lines):
                    self._w(new_base + offset)
                self._w((inner_id + leaf // self.BTREE_FANOUT) * node_lines % inner_lines)

    def _rbtree(self, n_ops: int) -> None:
        draws = self.rng.random((n_ops, 3))
        for count, (fix, rotate, path_seed) in enumerate(draws, start=1):
            depth = int(math.log2(count))
            bits = int(path_seed * (1 << 30))
            position = parent = grandparent = 0
            for level in range(depth):
                self._r(position)
                grandparent, parent = parent, position
                child = 2 * position + 1 + ((bits >> level) & 1)
                if child >= count:
                    break
                position = child
            self._w(count)
            if fix < 0.5:
                self._w(parent)
                self._w(grandparent)
            if rotate < 0.25:
                self._w(position)
                self._w(parent)
                self._w(grandparent)

    def _uniform(self, n_ops: int) -> None:
        self._mixed(self.rng.integers(0, self.lines, n_ops))

    def _zipf(self, n_ops: int) -> None:
        self._mixed(self.rng.zipf(self.zipf_s, n_ops) - 1)

    def _mixed(self, lines: np.ndarray) -> None:
        writes = self.rng.random(len(lines)) < self.WRITE_FRACTION
        for line, is_write in zip(lines, writes):
            if is_write:
                self._w(line)
            else:
                self._r(line)


def gen_workload(
    name: str,
    region_bytes: int,
    n_ops: int,
    seed: int,
    mem_bytes: int | None = None,
    zipf_s: float = WorkloadGenerator.ZIPF_S,
) -> Trace:
    """Generate a named workload as a trace over `mem_bytes` (default: the region)."""
    mem_bytes = mem_bytes or region_bytes
    if region_bytes > mem_bytes:
        raise ConfigError("region_bytes exceeds mem_bytes")
    if zipf_s <= 1.0:
        raise ConfigError("zipf_s must be greater than 1")
    events = WorkloadGenerator(region_bytes, seed, zipf_s).generate(name, n_ops)
    logger.info("generated %s: %d events over %d bytes", name, len(events), region_bytes)
    return Trace(mem_bytes=mem_bytes, events=events, name=name)


def write_trace(path: str | Path, trace: Trace) -> None:
    lines = [trace.header(), *(event.render() for event in trace.events)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path: str | Path) -> Trace:
    """Parse a trace file; any malformed line raises TraceParseError with its number."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TraceParseError(f"cannot read {path}: {exc}", 0) from exc
    rows = text.splitlines()
    if not rows or not rows[0].startswith(TRACE_MAGIC):
        raise TraceParseError(f"missing '{TRACE_MAGIC}' header", 1)
    try:
        mem_bytes = int(rows[0].split("mem=", 1)[1])
    except (IndexError, ValueError) as exc:
        raise TraceParseError("header lacks mem=<bytes>", 1) from exc

    events = []
    for line_no, row in enumerate(rows[1:], start=2):
        row = row.strip()
        if not row or row.startswith("#"):
            continue
        parts = row.split()
        if len(parts) != 2 or not parts[1].startswith("0x"):
            raise TraceParseError(f"expected '<R|W> 0x<hex>', got {row!r}", line_no)
        try:
            event = TraceEvent(op=parts[0], addr=int(parts[1], 16))
        except (ValueError, ValidationError) as exc:
            raise TraceParseError(f"bad event {row!r}", line_no) from exc
        if event.addr >= mem_bytes:
            raise TraceParseError(f"address {event.addr:#x} beyond mem={mem_bytes}", line_no)
        events.append(event)
    return Trace(mem_bytes=mem_bytes, events=events, name=path.stem)
