import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starsim.config import MIB
from starsim.errors import InvariantViolation
from starsim.models.geometry import LineId, build_geometry
from starsim.models.lines import MAC_MASK, SitNodeContent
from starsim.services.cache import CacheLayout, Intent, MetadataCache, rebuild_cache_tree
from starsim.services.crypto import Prf, genesis_content, seal_node

GEOMETRY = build_geometry(MIB)
PRF = Prf.from_seed(7)
# ordinals of every cacheable node (the root is on chip)
NODE_ORDINALS = st.integers(0, GEOMETRY.metadata_lines - 2)


class GenesisBackend:
    """Serves never-written lines and records what leaves the cache."""

    def __init__(self):
        self.victims = []

    def fetch_verified(self, line):
        return genesis_content(PRF, line), 0

    def write_back(self, victim):
        self.victims.append(victim.id)


def make_cache(counter_sets=4, sit_sets=4, ways=2):
    backend = GenesisBackend()
    layout = CacheLayout(GEOMETRY, counter_sets, sit_sets, ways)
    return MetadataCache(layout, PRF, backend), backend


def bump(cache, line_id):
    line, _ = cache.access(line_id, Intent.MODIFY)
    counters = (line.content.counters[0] + 1,) + line.content.counters[1:]
    cache.replace(line, seal_node(PRF, line_id, SitNodeContent(counters, line.content.mac_field), 0))
    return line


def test_set_index_partitions():
    layout = CacheLayout.from_sizes(GEOMETRY, 4096, 4096, 4)
    assert (layout.counter_sets, layout.sit_sets, layout.capacity_lines) == (16, 16, 128)
    assert layout.set_index(LineId.node(0, 17)) == 1
    assert layout.set_index(LineId.node(1, 0)) == 16
    assert layout.set_index(LineId.node(1, 5)) == 21
    assert layout.set_index(LineId.node(2, 0)) == 16
    with pytest.raises(ValueError):
        layout.set_index(LineId.data(0))


def test_hits_and_misses():
    cache, _ = make_cache()
    _, hit = cache.access(LineId.node(0, 0))
    assert not hit
    _, hit = cache.access(LineId.node(0, 0))
    assert hit
    assert (cache.hits, cache.misses, len(cache)) == (1, 1, 1)


def test_lru_victim_leaves_through_the_backend():
    cache, backend = make_cache(counter_sets=1)
    for index in (0, 1, 0, 2):
        cache.access(LineId.node(0, index))
    assert backend.victims == [LineId.node(0, 1)]
    assert cache.lookup(LineId.node(0, 1)) is None
    assert sum(cache.evictions) == 1
    assert len(cache) == 2


class ReentrantBackend(GenesisBackend):
    """Touches every dirty victim again while writing it back, as a child eviction does."""

    def __init__(self):
        super().__init__()
        self.cache = None
        self.fetched = []
        self.reaccessed = []

    def fetch_verified(self, line):
        self.fetched.append(line)
        return super().fetch_verified(line)

    def write_back(self, victim):
        super().write_back(victim)
        if victim.dirty:
            line, hit = self.cache.access(victim.id, Intent.MODIFY)
            self.reaccessed.append((line is victim, hit))


def test_victim_in_write_back_is_not_refetched():
    backend = ReentrantBackend()
    cache = MetadataCache(CacheLayout(GEOMETRY, 1, 1, 2), PRF, backend)
    backend.cache = cache
    first = LineId.node(0, 0)
    cache.access(first, Intent.MODIFY)
    cache.access(LineId.node(0, 1))
    cache.access(LineId.node(0, 2))

    assert backend.victims == [first]
    assert backend.reaccessed == [(True, True)]
    assert backend.fetched == [first, LineId.node(0, 1), LineId.node(0, 2)]
    assert cache.lookup(first) is None
    assert cache.write_buffer == {}
    assert cache.dirty_ordinals == set()
    assert len(cache) == 2


def test_dirty_transitions_are_reported_once():
    cache, _ = make_cache(counter_sets=1)
    seen = []
    cache.listeners.append(lambda line, dirty: seen.append((line, dirty)))
    first = LineId.node(0, 0)
    cache.access(first, Intent.MODIFY)
    cache.access(first, Intent.MODIFY)
    assert seen == [(first, True)]
    cache.access(LineId.node(0, 1))
    cache.access(LineId.node(0, 2))
    assert seen == [(first, True), (first, False)]
    assert cache.dirty_ordinals == set()


def test_mark_clean_reports_the_transition():
    cache, _ = make_cache()
    seen = []
    cache.listeners.append(lambda line, dirty: seen.append(dirty))
    line, _ = cache.access(LineId.node(1, 2), Intent.MODIFY)
    cache.mark_clean(line)
    cache.mark_clean(line)
    assert seen == [True, False]


def test_empty_cache_root_matches_rebuild():
    cache, _ = make_cache()
    assert cache.tree.root == rebuild_cache_tree(PRF, cache.layout, [])


def test_root_tracks_dirty_content():
    cache, _ = make_cache()
    before = cache.tree.root
    cache.access(LineId.node(1, 0), Intent.MODIFY)
    dirtied = cache.tree.root
    assert dirtied != before
    bump(cache, LineId.node(1, 0))
    assert cache.tree.root != dirtied
    assert cache.tree.root == rebuild_cache_tree(PRF, cache.layout, cache.dirty_lines())
    cache.check_tree()


def test_clean_lines_do_not_enter_the_root():
    cache, _ = make_cache()
    before = cache.tree.root
    cache.access(LineId.node(1, 0))
    assert cache.tree.root == before


def test_check_tree_catches_drift():
    cache, _ = make_cache()
    line = bump(cache, LineId.node(1, 0))
    line.content = genesis_content(PRF, LineId.node(1, 0))
    with pytest.raises(InvariantViolation):
        cache.check_tree()


@settings(max_examples=50)
@given(st.lists(NODE_ORDINALS, max_size=40))
def test_incremental_root_equals_rebuild(ordinals):
    cache, _ = make_cache(counter_sets=2, sit_sets=2)
    for ordinal in ordinals:
        line = GEOMETRY.node_at(ordinal)
        if line.level == 0:
            cache.access(line, Intent.MODIFY)
        else:
            bump(cache, line)
    assert cache.tree.root == rebuild_cache_tree(PRF, cache.layout, cache.dirty_lines())


@given(
    st.lists(st.tuples(NODE_ORDINALS, st.integers(0, MAC_MASK)), unique_by=lambda e: e[0], max_size=30),
    st.randoms(),
)
def test_rebuild_ignores_input_order(entries, rnd):
    layout = CacheLayout(GEOMETRY, 4, 4, 2)
    pairs = [(GEOMETRY.node_at(ordinal), mac) for ordinal, mac in entries]
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    assert rebuild_cache_tree(PRF, layout, pairs) == rebuild_cache_tree(PRF, layout, shuffled)


def test_slot_of_resident_line():
    cache, _ = make_cache(counter_sets=2)
    cache.access(LineId.node(0, 1))
    cache.access(LineId.node(0, 3))
    assert cache.slot_of(LineId.node(0, 1)) == 2
    assert cache.slot_of(LineId.node(0, 3)) == 3
    assert cache.slot_of(LineId.node(0, 5)) is None



@pytest.mark.acceptance
def test_root_matches_rebuild_over_a_long_random_run():
    cache, _ = make_cache(counter_sets=4, sit_sets=4, ways=2)
    rng = np.random.default_rng(3)
    ordinals = rng.integers(0, GEOMETRY.metadata_lines - 1, 100_000)
    actions = rng.integers(0, 3, 100_000)
    for ordinal, action in zip(ordinals, actions):
        line_id = GEOMETRY.node_at(int(ordinal))
        if action == 0:
            cache.access(line_id)
        elif action == 1 and line_id.level > 0:
            bump(cache, line_id)
        elif action == 1:
            cache.access(line_id, Intent.MODIFY)
        else:
            resident = cache.lookup(line_id)
            if resident is not None:
                cache.mark_clean(resident)
        cache.check_tree()
    assert cache.dirty_lines()
    assert cache.tree.root == rebuild_cache_tree(PRF, cache.layout, cache.dirty_lines())
