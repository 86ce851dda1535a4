import pytest
from conftest import last_write_before

from starsim.config import MIB, Settings
from starsim.errors import ConfigError
from starsim.models.geometry import LineId, build_geometry
from starsim.models.lines import MINOR_LIMIT
from starsim.schemas.trace import Trace, TraceEvent
from starsim.services.cache import CacheLine
from starsim.services.recovery import (
    RecoveryCostModel,
    RecoveryEngine,
    anubis_reads,
    forced_dirty_set,
    inject_replay,
    recovery_time_table,
)
from starsim.services.simulator import Simulator, differential_check, settings_for
from starsim.services.sit import AwConfig
from starsim.services.tracker import enumerate_dirty
from starsim.services.workloads import WorkloadGenerator, gen_workload

GIB = 1024 * MIB
CACHE_BYTES = 4 * MIB


def recover(engine):
    snapshot = engine.crash(1)
    return RecoveryEngine(engine.prf, engine.layout).recover(snapshot, engine.aw), snapshot


def test_clean_crash_reads_only_the_top_line(make_engine):
    engine = make_engine("aw-h")
    (report, image), _ = recover(engine)
    assert report.verified
    assert (report.dirty_lines, report.index_reads, report.reads) == (0, 1, 1)
    assert report.time_ns == 100
    assert image is not None


def test_restore_carries_across_a_wrapped_sidecar(make_engine):
    engine = make_engine("aw-h")
    cb = LineId.node(0, 0)
    for _ in range(1500):
        engine.evict_metadata(CacheLine(cb, engine.nvm.peek(cb), 0, dirty=True, stale=True))
    assert engine.nvm.peek(LineId.node(1, 0)).counters[0] == 1023

    (report, image), snapshot = recover(engine)
    assert report.verified
    assert report.restored_ids() == [LineId.node(1, 0)]
    assert (report.index_reads, report.reads) == (3, 13)
    assert image.peek(LineId.node(1, 0)).counters[0] == 1500
    recovery = RecoveryEngine(engine.prf, engine.layout)
    assert recovery.audit(image, snapshot.chip.sit_root_counters) == []


@pytest.mark.parametrize("label", ["aw-l", "aw-m", "aw-h", "strict", "anubis"])
def test_random_crashes_recover(small_settings, uniform_trace, label):
    simulator = Simulator(settings_for(small_settings, label), uniform_trace.name)
    stats, _ = simulator.run(uniform_trace, crash_random=4)
    assert simulator.failures == []
    assert len(stats.recoveries) == 4
    assert all(report.verified for report in stats.recoveries)


@pytest.mark.parametrize("label", ["aw-l", "aw-m", "aw-h", "strict"])
def test_resumed_run_matches_uncrashed_run(small_settings, uniform_trace, label):
    crash_at = last_write_before(uniform_trace, 250)
    assert differential_check(settings_for(small_settings, label), uniform_trace, crash_at) == []


def test_aw_l_restores_nothing(small_settings, uniform_trace):
    simulator = Simulator(settings_for(small_settings, "aw-l"), uniform_trace.name)
    stats, snapshot = simulator.run(uniform_trace, crash_at=last_write_before(uniform_trace, 300))
    assert stats.recovery.verified
    assert stats.recovery.restored == []
    assert stats.recovery.dirty_lines > 0
    assert stats.dirty_ratio_at_crash == snapshot.dirty_ratio


def test_restores_run_top_down(small_settings, uniform_trace):
    simulator = Simulator(settings_for(small_settings, "aw-h"), uniform_trace.name)
    stats, _ = simulator.run(uniform_trace, crash_at=last_write_before(uniform_trace, 300))
    levels = [line.level for line in stats.recovery.restored_ids()]
    assert levels
    assert levels == sorted(levels, reverse=True)


def test_overflowed_page_restores_its_major(small_settings):
    events = [TraceEvent(op="W", addr=64 * (i % 2)) for i in range(400)]
    trace = Trace(mem_bytes=MIB, events=events, name="hot")
    settings = settings_for(small_settings, "aw-m")
    simulator = Simulator(settings, trace.name)
    stats, _ = simulator.run(trace, crash_at=301)
    assert stats.writes.reencrypt > 0
    assert stats.recovery.verified
    assert simulator.recovery.plaintext(simulator.recovered, LineId.data(0)) == Simulator.payload(301, 0)
    assert differential_check(settings, trace, 301) == []


@pytest.mark.parametrize("label", ["aw-m", "aw-h"])
def test_rolled_back_child_is_detected(small_settings, uniform_trace, label):
    simulator = Simulator(settings_for(small_settings, label), uniform_trace.name, record_history=True)
    stats, snapshot = simulator.run(uniform_trace, crash_at=last_write_before(uniform_trace, 300))
    assert stats.recovery.verified

    candidates = []
    for line in stats.recovery.restored_ids():
        for child in snapshot.geometry.children_of(line):
            current = snapshot.nvm.peek(child)
            older = [
                version
                for version in simulator.engine.nvm.versions(child)
                if version.mac_field.lsb10 != current.mac_field.lsb10
            ]
            if older:
                candidates.append((child, older[-1], current))
    assert candidates

    child, old, current = candidates[0]
    report, image = simulator.recovery.recover(inject_replay(snapshot, child, old), simulator.engine.aw)
    assert report.verdict == "root_mismatch"
    assert image is None

    report, image = simulator.recovery.recover(inject_replay(snapshot, child, current), simulator.engine.aw)
    assert report.verified


def test_rolled_back_restored_node_is_detected(small_settings, uniform_trace):
    simulator = Simulator(settings_for(small_settings, "aw-h"), uniform_trace.name, record_history=True)
    stats, snapshot = simulator.run(uniform_trace, crash_at=last_write_before(uniform_trace, 300))
    for line in stats.recovery.restored_ids():
        current = snapshot.nvm.peek(line)
        older = [
            version
            for version in simulator.engine.nvm.versions(line)
            if version.mac_field.lsb10 != current.mac_field.lsb10
        ]
        if older:
            break
    else:
        pytest.skip("no restored node has an older epoch in this trace")
    report, _ = simulator.recovery.recover(inject_replay(snapshot, line, older[0]), simulator.engine.aw)
    assert report.verdict == "root_mismatch"


def test_wb_cannot_crash(small_settings, uniform_trace):
    with pytest.raises(ConfigError):
        Simulator(settings_for(small_settings, "wb")).run(uniform_trace, crash_at=10)


# -- recovery-time model ----------------------------------------------------------


def test_time_table_at_16_gib():
    table = recovery_time_table(build_geometry(16 * GIB), CACHE_BYTES, 0.62)
    assert table["aw-h"] == pytest.approx(0.0406403)
    assert table["aw-m"] == pytest.approx(0.0223559)
    assert table["aw-l"] == pytest.approx(0.0040715)
    assert table["anubis"] == pytest.approx(0.0196608)
    assert table["aw-l"] < table["anubis"] < table["aw-m"] < table["aw-h"]


def test_forced_dirty_set_splits_evenly():
    geometry = build_geometry(16 * GIB)
    dirty = forced_dirty_set(CACHE_BYTES, 0.62, geometry)
    assert len(dirty) == 40632
    assert sum(1 for line in dirty if line.level == 0) == 20316
    model = RecoveryCostModel(geometry)
    assert model.index_reads(dirty) == 83


def test_modeled_reads_scale_with_the_dirty_ratio():
    geometry = build_geometry(16 * GIB)
    model = RecoveryCostModel(geometry)
    cfg = AwConfig.for_mode("aw-h", geometry)
    reads = [model.reads(forced_dirty_set(CACHE_BYTES, ratio, geometry), cfg) for ratio in (0.2, 0.4, 0.8)]
    assert reads == sorted(reads)
    assert reads[2] == pytest.approx(4 * reads[0], rel=0.05)


def test_modeled_time_ignores_memory_size():
    small = recovery_time_table(build_geometry(16 * GIB), CACHE_BYTES, 0.62)
    large = recovery_time_table(build_geometry(64 * GIB), CACHE_BYTES, 0.62)
    assert small == large


def test_anubis_reads_every_cache_line_three_times():
    assert anubis_reads(65536) == 196608


@pytest.mark.slow
@pytest.mark.parametrize("workload", ["array", "btree", "hash", "queue", "rbtree", "zipf"])
@pytest.mark.parametrize("label", ["aw-m", "aw-h"])
def test_every_workload_survives_random_crashes(small_settings, workload, label):
    trace = gen_workload(workload, 128 * 1024, 300, seed=9, mem_bytes=MIB)
    simulator = Simulator(settings_for(small_settings, label).model_copy(update={"shadow_checks": True}), workload)
    simulator.run(trace, crash_random=5)
    assert simulator.failures == []


# -- full-scale suites ------------------------------------------------------------

SWEEP_REGION = 16 * MIB
SWEEP_OPS = {
    "array": 1_000,
    "btree": 60_000,
    "hash": 40_000,
    "queue": 60_000,
    "rbtree": 10_000,
    "uniform": 100_000,
    "zipf": 100_000,
}


@pytest.mark.acceptance
@pytest.mark.parametrize("workload", WorkloadGenerator.WORKLOADS)
@pytest.mark.parametrize("label", ["aw-l", "aw-m", "aw-h"])
def test_long_traces_survive_fifty_crashes(workload, label):
    trace = gen_workload(workload, SWEEP_REGION, SWEEP_OPS[workload], seed=9)
    assert len(trace.events) >= 100_000
    simulator = Simulator(settings_for(Settings(mem_bytes=SWEEP_REGION), label), workload)
    stats, _ = simulator.run(trace, crash_random=50)
    assert len(stats.recoveries) == 50
    assert simulator.failures == []


@pytest.mark.parametrize("label", ["aw-l", "aw-m", "aw-h"])
def test_uniform_eviction_storm_recovers(label):
    # a 16-line SIT cache over 8 MiB: write-backs nest through every SIT level
    trace = gen_workload("uniform", 8 * MIB, 3_000, seed=21)
    settings = settings_for(Settings(mem_bytes=8 * MIB, sit_cache_bytes=1024, shadow_checks=True), label)
    simulator = Simulator(settings, trace.name)
    simulator.run(trace, crash_random=10)
    assert simulator.failures == []


@pytest.mark.slow
@pytest.mark.parametrize("label", ["aw-l", "aw-m", "aw-h"])
def test_long_uniform_trace_keeps_nvm_consistent(label):
    trace = gen_workload("uniform", SWEEP_REGION, 30_000, seed=13)
    simulator = Simulator(settings_for(Settings(mem_bytes=SWEEP_REGION), label), trace.name)
    stats, _ = simulator.run(trace, crash_random=15)
    assert stats.events == len(trace.events)
    assert simulator.failures == []


def replay_targets(simulator, snapshot):
    """
    (line, older content) pairs whose replay recovery must notice.

    Folded nodes are checked through their MAC, restored nodes and their
    children through the sidecar bits the restore splices in.
    """
    engine = simulator.engine
    start = engine.aw.start_level
    dirty, _ = enumerate_dirty(snapshot.geometry, snapshot.nvm, snapshot.chip.top_index_line)
    targets = []

    def older(line, key):
        current = key(snapshot.nvm.peek(line))
        return [version for version in engine.nvm.versions(line) if key(version) != current]

    for line in dirty:
        if line.level > start:
            targets.extend((line, version) for version in older(line, lambda c: c.mac_field.mac54))
            continue
        targets.extend((line, version) for version in older(line, lambda c: c.mac_field.lsb10))
        children = snapshot.geometry.children_of(line)
        for child in children:
            # minor bits per data child, major bits through the first one only
            mask = MINOR_LIMIT - 1 if line.level == 0 and child != children[0] else -1
            key = lambda c, mask=mask: c.mac_field.lsb10 & mask
            targets.extend((child, version) for version in older(child, key)[-2:])
    return targets


@pytest.mark.acceptance
def test_five_hundred_replays_are_all_detected(small_settings):
    trace = gen_workload("uniform", 256 * 1024, 3_000, seed=17, mem_bytes=MIB)
    crash_points = set(range(200, len(trace.events) + 1, 250))
    replays = folded = 0
    for label in ("aw-l", "aw-m", "aw-h"):
        simulator = Simulator(settings_for(small_settings, label), trace.name, record_history=True)
        start = simulator.engine.aw.start_level
        for index, event in enumerate(trace.events, start=1):
            simulator.step(index, event)
            if index not in crash_points:
                continue
            snapshot = simulator.engine.crash(index)
            report, _ = simulator.recovery.recover(snapshot, simulator.engine.aw)
            assert report.verified
            for line, version in replay_targets(simulator, snapshot):
                report, image = simulator.recovery.recover(
                    inject_replay(snapshot, line, version), simulator.engine.aw
                )
                assert report.verdict == "root_mismatch", f"{label} event {index}: {line} replay missed"
                assert image is None
                replays += 1
                folded += line.is_metadata and line.level > start
    assert folded > 0
    assert replays >= 500
