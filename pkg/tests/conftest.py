import pytest

from starsim.config import MIB, Settings
from starsim.models.geometry import build_geometry
from starsim.schemas.trace import Trace
from starsim.services.baselines import build_engine
from starsim.services.crypto import Prf
from starsim.services.simulator import settings_for
from starsim.services.workloads import gen_workload

# 1 MiB of user memory: levels 256/32/4/1. The caches hold 8 counter blocks
# and 4 SIT nodes, so short traces already evict at every level.
SMALL = dict(
    mem_bytes=MIB,
    counter_cache_bytes=512,
    sit_cache_bytes=256,
    ways=2,
    adr_lines=4,
)


@pytest.fixture
def small_settings() -> Settings:
    return Settings(**SMALL)


@pytest.fixture
def geometry():
    return build_geometry(MIB)


@pytest.fixture
def prf() -> Prf:
    return Prf.from_seed(7)


@pytest.fixture
def make_engine(small_settings, geometry, prf):
    """Engine factory keyed by report label (wb, strict, anubis, aw-l, aw-m, aw-h)."""

    def _make(label: str, record_history: bool = False):
        return build_engine(settings_for(small_settings, label), geometry, prf, record_history)

    return _make


@pytest.fixture(scope="session")
def uniform_trace() -> Trace:
    return gen_workload("uniform", 256 * 1024, 400, seed=5, mem_bytes=MIB)


@pytest.fixture(scope="session")
def local_trace() -> Trace:
    # 4 pages: every metadata line it needs stays resident
    return gen_workload("array", 16 * 1024, 100, seed=2, mem_bytes=MIB)


def last_write_before(trace: Trace, limit: int) -> int:
    """1-based index of the last W event at or before `limit`."""
    return max(i for i, event in enumerate(trace.events[:limit], start=1) if event.op == "W")
