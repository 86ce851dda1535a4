import pytest

from starsim.config import KIB, MIB, Settings, get_settings, load_settings
from starsim.errors import ConfigError
from starsim.services.simulator import Simulator


def test_defaults():
    settings = Settings()
    assert settings.scheme == "star"
    assert settings.aw_mode == "aw-h"
    assert settings.fresh_victim_policy == "writeback"
    assert (settings.l1_lines, settings.l2_lines) == (14, 2)
    assert settings.scheme_label == "aw-h"


def test_cached_defaults_drive_a_bare_simulator():
    assert get_settings() is get_settings()
    simulator = Simulator()
    assert simulator.settings is get_settings()
    assert simulator.geometry.mem_bytes == 16 * MIB
    assert simulator.engine.label == "aw-h"


def test_file_values_and_overrides(tmp_path):
    path = tmp_path / "star.conf"
    path.write_text("scheme=WB\nmem_bytes=1048576\nways=4\nadr_lines=8\n")
    settings = load_settings(path)
    assert (settings.scheme, settings.mem_bytes, settings.ways) == ("wb", MIB, 4)
    assert settings.scheme_label == "wb"
    assert (settings.l1_lines, settings.l2_lines) == (7, 1)

    overridden = load_settings(path, scheme="strict", ways=None)
    assert overridden.scheme == "strict"
    assert overridden.ways == 4


def test_environment_is_ignored(monkeypatch):
    monkeypatch.setenv("SCHEME", "wb")
    assert load_settings().scheme == "star"


def test_explicit_l2_split():
    settings = load_settings(adr_lines=32, adr_l2_lines=4)
    assert (settings.l1_lines, settings.l2_lines) == (28, 4)


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_settings("/nonexistent/star.conf")


@pytest.mark.parametrize(
    "overrides",
    [
        {"mem_bytes": 1000},
        {"ways": 1, "counter_cache_bytes": 64 * KIB, "sit_cache_bytes": 64 * KIB},
        {"ways": 0},
        {"counter_cache_bytes": 1000},
        {"adr_lines": 1},
        {"adr_lines": 4, "adr_l2_lines": 4},
        {"scheme": "bonsai"},
        {"read_ns": 0},
        {"cache_bytes": 4096},
    ],
)
def test_invalid_values(overrides):
    with pytest.raises(ConfigError) as info:
        load_settings(**overrides)
    assert info.value.exit_code == 2
