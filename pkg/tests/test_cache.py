from __future__ import annotations

import numpy as np
import pytest

from floquet_lattice.cache import PropagatorCache, read_generator
from floquet_lattice.errors import CacheCorruption
from floquet_lattice.propagator import base_blocks

from conftest import small_config


def test_round_trip_is_bit_identical(uniform, cache):
    cold = base_blocks(0.05, uniform, cache=cache)
    assert (cache.hits, cache.misses) == (0, 1)
    warm = base_blocks(0.05, uniform, cache=cache)
    assert cache.hits == 1
    np.testing.assert_array_equal(cold.generator, warm.generator)
    np.testing.assert_array_equal(cold.period(0.0, uniform), warm.period(0.0, uniform))


def test_key_separates_configurations(uniform, cache):
    other = uniform.replace(drive_amplitude=1.25)
    assert cache.path_for(uniform, 0.0) != cache.path_for(other, 0.0)
    assert cache.path_for(uniform, 0.0) != cache.path_for(uniform, -0.0 + 1e-17)
    base_blocks(0.0, uniform, cache=cache)
    assert cache.load(other, 0.0) is None


@pytest.mark.parametrize("damage", ["flip", "truncate", "magic"])
def test_corruption_is_detected_and_rebuilt(uniform, cache, damage):
    good = base_blocks(0.01, uniform, cache=cache).generator
    path = cache.path_for(uniform, 0.01)
    raw = bytearray(path.read_bytes())
    if damage == "flip":
        raw[-5] ^= 0xFF
    elif damage == "truncate":
        raw = raw[: len(raw) // 2]
    else:
        raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(CacheCorruption):
        read_generator(path, uniform, 0.01)
    rebuilt = base_blocks(0.01, uniform, cache=cache)
    assert cache.rebuilds == 1
    np.testing.assert_array_equal(rebuilt.generator, good)
    assert path.exists()


def test_header_mismatch_is_corruption(uniform, cache):
    base_blocks(0.02, uniform, cache=cache)
    path = cache.path_for(uniform, 0.02)
    with pytest.raises(CacheCorruption):
        read_generator(path, uniform, 0.03)


def test_entries_and_clear(tmp_path):
    cache = PropagatorCache(tmp_path / "c")
    assert cache.entries() == [] and cache.clear() == 0
    cfg = small_config()
    for k in (0.0, 0.01):
        base_blocks(k, cfg, cache=cache)
    entries = cache.entries()
    assert len(entries) == 2
    assert {e["mu_max"] for e in entries} == {cfg.truncation.mu_max}
    assert cache.clear() == 2
    assert cache.entries() == []


def test_first_writer_wins(uniform, cache):
    g = base_blocks(0.0, uniform, cache=cache).generator
    path = cache.path_for(uniform, 0.0)
    before = path.read_bytes()
    cache.store(uniform, 0.0, g * 2)
    assert path.read_bytes() == before
