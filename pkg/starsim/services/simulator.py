from __future__ import annotations

import logging
import struct
from collections.abc import Iterable

import numpy as np

from starsim.config import Settings, get_settings
from starsim.errors import ConfigError
from starsim.models.geometry import LineId, build_geometry
from starsim.models.nvm import NvmImage
from starsim.models.snapshot import CrashSnapshot
from starsim.schemas.recovery import RecoveryReport
from starsim.schemas.stats import Stats, WriteCounts
from starsim.schemas.trace import Trace, TraceEvent
from starsim.services.baselines import SchemeId, build_engine, recover_anubis, recover_strict
from starsim.services.crypto import Prf
from starsim.services.recovery import RecoveryEngine
from starsim.services.sit import StarEngine

logger = logging.getLogger(__name__)

SCHEME_LABELS = ("wb", "strict", "anubis", "aw-l", "aw-m", "aw-h")
ADR_CAPACITIES = (2, 4, 8, 16, 32)


def settings_for(settings: Settings, label: str) -> Settings:
    """Copy of `settings` running the scheme named by a report label."""
    if label not in SCHEME_LABELS:
        raise ConfigError(f"unknown scheme label: {label}")
    if label.startswith("aw-"):
        return settings.model_copy(update={"scheme": "star", "aw_mode": label})
    return settings.model_copy(update={"scheme": label})


class Simulator:
    """
    Replays a trace through one engine.

    Keeps the last plaintext written to every line so recovered images can
    be checked against an uncrashed run.
    """

    def __init__(
        self,
        settings: Settings | None = None,
        trace_name: str = "trace",
        record_history: bool = False,
    ):
        if settings is None:
            settings = get_settings()
        self.settings = settings
        self.trace_name = trace_name
        self.geometry = build_geometry(settings.mem_bytes)
        self.prf = Prf.from_seed(settings.seed)
        self.engine = build_engine(settings, self.geometry, self.prf, record_history)
        self.recovery = RecoveryEngine(self.prf, self.engine.layout, settings.read_ns)
        self.expected: dict[LineId, bytes] = {}
        self.events_done = 0
        self.recoveries: list[RecoveryReport] = []
        self.failures: list[str] = []
        self.recovered: NvmImage | None = None

    @classmethod
    def resume(
        cls,
        settings: Settings,
        image: NvmImage,
        root_counters: tuple[int, ...],
        expected: dict[LineId, bytes],
        events_done: int,
        trace_name: str = "trace",
    ) -> Simulator:
        """Continue from a recovered image with a cold cache."""
        simulator = cls(settings, trace_name)
        simulator.engine.adopt(image, root_counters)
        simulator.expected = dict(expected)
        simulator.events_done = events_done
        return simulator

    @staticmethod
    def payload(index: int, addr: int) -> bytes:
        """Deterministic plaintext for the W event at `index`."""
        return struct.pack("<QQ", index, addr) * 4

    def step(self, index: int, event: TraceEvent) -> None:
        line = self.geometry.data_line(event.addr)
        if event.op == "W":
            plaintext = self.payload(index, event.addr)
            self.engine.write_data(line, plaintext)
            self.expected[line] = plaintext
        else:
            self.engine.read_data(line)
        self.events_done = index
        if self.settings.shadow_checks:
            self.engine.check_invariants()

    def run(
        self,
        trace: Trace,
        crash_at: int | None = None,
        crash_random: int = 0,
        start: int = 1,
    ) -> tuple[Stats, CrashSnapshot | None]:
        """
        Replay `trace` from event number `start` (1-based).

        Random crash points snapshot, recover and check, then the run goes on.
        A crash at `crash_at` stops the run and its recovery is reported.
        """
        if trace.mem_bytes > self.settings.mem_bytes:
            raise ConfigError(
                f"trace needs mem={trace.mem_bytes}, configured mem_bytes={self.settings.mem_bytes}"
            )
        if (crash_at or crash_random) and self.settings.scheme == SchemeId.WB.value:
            raise ConfigError("the write-back baseline cannot recover from a crash")
        crash_points = self._crash_points(len(trace.events), crash_random)

        snapshot = None
        recovery = None
        for index in range(start, len(trace.events) + 1):
            self.step(index, trace.events[index - 1])
            if index in crash_points:
                self.crash_test(index)
            if crash_at == index:
                snapshot = self.engine.crash(index)
                recovery, self.recovered = self.recover(snapshot)
                break
        stats = self.stats(snapshot, recovery)
        logger.info(
            "%s on %s: %d events, %d writes",
            stats.label,
            self.trace_name,
            stats.events,
            stats.total_writes,
        )
        return stats, snapshot

    def _crash_points(self, n_events: int, count: int) -> set[int]:
        if count <= 0 or n_events == 0:
            return set()
        rng = np.random.default_rng(self.settings.seed)
        points = rng.choice(np.arange(1, n_events + 1), size=min(count, n_events), replace=False)
        return {int(point) for point in points}

    def recover(self, snapshot: CrashSnapshot) -> tuple[RecoveryReport, NvmImage | None]:
        engine = self.engine
        if isinstance(engine, StarEngine):
            return self.recovery.recover(snapshot, engine.aw)
        if self.settings.scheme == SchemeId.ANUBIS.value:
            return recover_anubis(snapshot, self.settings.read_ns), None
        if self.settings.scheme == SchemeId.STRICT.value:
            return recover_strict(snapshot, self.settings.read_ns), snapshot.nvm
        raise ConfigError("the write-back baseline cannot recover from a crash")

    def crash_test(self, index: int) -> RecoveryReport:
        """Crash here, recover a copy, check it; the live run is untouched."""
        snapshot = self.engine.crash(index)
        report, image = self.recover(snapshot)
        self.recoveries.append(report)
        if not report.verified:
            self.failures.append(f"event {index}: {report.detail}")
        elif image is not None:
            self.failures.extend(
                f"event {index}: {problem}"
                for problem in self.check_image(image, snapshot.chip.sit_root_counters)
            )
        return report

    def check_image(self, image: NvmImage, root_counters: Iterable[int]) -> list[str]:
        """Lines that fail verification or hold a plaintext other than the last written one."""
        problems = [f"{line} fails verification" for line in self.recovery.audit(image, root_counters)]
        for line, plaintext in self.expected.items():
            try:
                if self.recovery.plaintext(image, line) != plaintext:
                    problems.append(f"{line} holds a stale plaintext")
            except ValueError:
                problems.append(f"{line} does not decrypt")
        return problems

    def stats(
        self, snapshot: CrashSnapshot | None = None, recovery: RecoveryReport | None = None
    ) -> Stats:
        engine = self.engine
        cache = engine.cache
        tracker = engine.tracker if isinstance(engine, StarEngine) else None
        return Stats(
            trace_name=self.trace_name,
            scheme=self.settings.scheme,
            aw_mode=self.settings.aw_mode if tracker is not None else None,
            mem_bytes=self.settings.mem_bytes,
            seed=self.settings.seed,
            events=self.events_done,
            writes=WriteCounts(**engine.writes),
            reads=engine.reads,
            cache_hits=cache.hits,
            cache_misses=cache.misses,
            evictions=sum(cache.evictions),
            cached_lines=len(cache),
            dirty_lines=len(cache.dirty_ordinals),
            dirty_ratio_at_crash=snapshot.dirty_ratio if snapshot is not None else None,
            bitmap_accesses=tracker.accesses if tracker else 0,
            bitmap_hit_ratio=tracker.hit_ratio if tracker else None,
            lsb_forced_flushes=engine.lsb_forced_flushes,
            recovery=recovery,
            recoveries=list(self.recoveries),
        )


def run_scheme(trace: Trace, label: str, settings: Settings) -> Stats:
    """Run one scheme over a trace and return its stats."""
    stats, _ = Simulator(settings_for(settings, label), trace.name).run(trace)
    return stats


def adr_sweep(
    trace: Trace, settings: Settings, capacities: Iterable[int] = ADR_CAPACITIES
) -> dict[int, float | None]:
    """Bitmap hit ratio of a STAR run for each ADR capacity."""
    ratios = {}
    for capacity in capacities:
        swept = settings.model_copy(
            update={"scheme": "star", "adr_lines": capacity, "adr_l2_lines": max(1, capacity // 8)}
        )
        ratios[capacity] = run_scheme(trace, swept.aw_mode, swept).bitmap_hit_ratio
    return ratios


def differential_check(settings: Settings, trace: Trace, crash_at: int) -> list[str]:
    """
    Crash at `crash_at`, recover, replay the rest, and compare with an uncrashed run.

    Returns a description of every mismatch; empty means the runs agree.
    """
    crashed = Simulator(settings, trace.name)
    stats, snapshot = crashed.run(trace, crash_at=crash_at)
    if snapshot is None:
        return [f"trace ended before event {crash_at}"]
    image = crashed.recovered
    if image is None:
        verdict = stats.recovery.verdict if stats.recovery else "none"
        return [f"recovery at event {crash_at} produced no image (verdict {verdict})"]
    problems = crashed.check_image(image, snapshot.chip.sit_root_counters)

    resumed = Simulator.resume(
        settings,
        image,
        snapshot.chip.sit_root_counters,
        crashed.expected,
        crash_at,
        trace.name,
    )
    resumed.run(trace, start=crash_at + 1)
    reference = Simulator(settings, trace.name)
    reference.run(trace)
    if resumed.expected != reference.expected:
        problems.append("resumed run wrote different lines than the reference run")
    for line, plaintext in reference.expected.items():
        if resumed.engine.read_data(line) != plaintext:
            problems.append(f"{line} differs from the reference run")
    return problems
