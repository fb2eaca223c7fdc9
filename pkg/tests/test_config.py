from __future__ import annotations

import math

import numpy as np
import pytest

from floquet_lattice.config import (
    BasisIndex,
    LatticeConfig,
    TruncationConfig,
    config_from_mapping,
    fig2_lattice,
    load_config,
    parse_angle,
    validate,
)
from floquet_lattice.errors import (
    BarrierOverlap,
    ConfigError,
    IndexOutOfRange,
    NonPositiveParameter,
    PhaseCountMismatch,
)

from conftest import SMALL, small_config

PI = math.pi


@pytest.mark.parametrize(
    "text, value",
    [("0", 0.0), ("pi", PI), ("2pi/3", 2 * PI / 3), ("0.1*pi", 0.1 * PI), ("-pi/2", -PI / 2), (1.5, 1.5), ("0.25", 0.25)],
)
def test_parse_angle(text, value):
    assert parse_angle(text) == pytest.approx(value, rel=1e-15, abs=0)


def test_parse_angle_rejects_garbage():
    with pytest.raises(ConfigError):
        parse_angle("tau/2")


@pytest.mark.parametrize(
    "field, value, err",
    [
        ("barrier_height", 0.0, NonPositiveParameter),
        ("barrier_width", -1.0, NonPositiveParameter),
        ("drive_frequency", math.nan, NonPositiveParameter),
        ("drive_amplitude", -0.1, NonPositiveParameter),
        ("drive_amplitude", 4.5, BarrierOverlap),
        ("phases", (), PhaseCountMismatch),
        ("phases", (0.0, math.inf), ConfigError),
    ],
)
def test_validation_errors(field, value, err):
    lat = fig2_lattice()
    bad = LatticeConfig(**{**lat.__dict__, field: value})
    with pytest.raises(err):
        validate(bad, SMALL)


@pytest.mark.parametrize(
    "trunc",
    [
        TruncationConfig(0, 4, 16),
        TruncationConfig(4, 4, 0),
        TruncationConfig(4, 4, 16, p_max=-1),
        TruncationConfig(4, 4, 16, interior_window=4),
    ],
)
def test_truncation_errors(trunc):
    with pytest.raises(ConfigError):
        validate(fig2_lattice(), trunc)


def test_phases_are_canonicalised_and_hash_is_stable():
    a = small_config((0.0, 2 * PI, -PI))
    b = small_config((0.0, 0.0, PI))
    assert a.lattice.phases == (0.0, 0.0, PI)
    assert a.hash == b.hash
    assert small_config((0.0, 0.1, 0.0)).hash != a.hash


def test_derived_quantities(spatiotemporal):
    cfg = spatiotemporal
    assert cfg.n_p == 3
    assert cfg.cell_length == 30.0
    assert cfg.period == pytest.approx(2 * PI)
    assert cfg.dim == 2 * SMALL.mu_max + 1
    # central barrier at the origin, neighbours at +-L
    np.testing.assert_array_equal(cfg.barrier_positions, [-10.0, 0.0, 10.0])
    k = cfg.wavenumbers(0.01)
    assert k[cfg.basis.row_of(0)] == pytest.approx(0.01)
    assert cfg.snap_time(cfg.period + 3.2 * cfg.dt) == 3


def test_basis_index_bounds():
    b = BasisIndex(3)
    assert b.row_of(-3) == 0 and b.mu_of(6) == 3
    with pytest.raises(IndexOutOfRange):
        b.row_of(4)
    with pytest.raises(IndexOutOfRange):
        b.mu_of(7)


def test_replace_revalidates(uniform):
    changed = uniform.replace(drive_amplitude=1.25, n_steps=32)
    assert changed.lattice.drive_amplitude == 1.25 and changed.truncation.n_steps == 32
    with pytest.raises(ConfigError):
        uniform.replace(colour="blue")
    with pytest.raises(BarrierOverlap):
        uniform.replace(drive_amplitude=4.9)


def test_toml_loading(tmp_path):
    path = tmp_path / "lat.toml"
    path.write_text(
        """
[lattice]
barrier_height = 1.0
barrier_width = 0.5
barrier_spacing = 10.0
drive_amplitude = 1.0
drive_frequency = 1.0
phases = ["0", "pi", "pi/4"]

[truncation]
mu_max = 8
"""
    )
    cfg = load_config(path, "fast")
    assert cfg.lattice.phases == pytest.approx((0.0, PI, PI / 4))
    assert cfg.truncation.mu_max == 8 and cfg.truncation.n_max == 16
    with pytest.raises(ConfigError):
        config_from_mapping({"lattice": {"phases": [0]}, "truncation": {"bogus": 1}})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
