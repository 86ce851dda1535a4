from starsim.services.crypto import Prf
from starsim.services.cache import MetadataCache, rebuild_cache_tree
from starsim.services.sit import AwConfig, SitEngine, StarEngine
from starsim.services.tracker import BitmapTracker, enumerate_dirty
from starsim.services.recovery import RecoveryEngine, inject_replay
from starsim.services.baselines import AnubisEngine, StrictEngine, build_engine
from starsim.services.simulator import Simulator, adr_sweep, run_scheme
from starsim.services.workloads import gen_workload, read_trace, write_trace

__all__ = [
    "Prf",
    "MetadataCache",
    "rebuild_cache_tree",
    "AwConfig",
    "SitEngine",
    "StarEngine",
    "BitmapTracker",
    "enumerate_dirty",
    "RecoveryEngine",
    "inject_replay",
    "AnubisEngine",
    "StrictEngine",
    "build_engine",
    "Simulator",
    "adr_sweep",
    "run_scheme",
    "gen_workload",
    "read_trace",
    "write_trace",
]
