from __future__ import annotations

import math

import pytest

from floquet_lattice.cache import PropagatorCache
from floquet_lattice.config import Tolerances, TruncationConfig, fig2_lattice, validate

PI = math.pi

# small enough for unit tests, large enough that the symmetric truncation is
# converged well below the unit-test tolerances
SMALL = TruncationConfig(mu_max=10, n_max=14, n_steps=64, interior_window=2)


def small_config(phases=(0.0, 0.0, 0.0), truncation: TruncationConfig = SMALL, **lattice):
    return validate(fig2_lattice(tuple(phases), **lattice), truncation, Tolerances(series=1e-12))


@pytest.fixture
def uniform():
    return small_config((0.0, 0.0, 0.0))


@pytest.fixture
def spatiotemporal():
    return small_config((0.0, 2 * PI / 3, 0.0))


@pytest.fixture
def cache(tmp_path):
    return PropagatorCache(tmp_path / "cache")


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts, one line per criterion, at the end of the run."""
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    missing = sorted(set(range(1, 13)) - set(results))
    if missing:
        terminalreporter.write_line(f"criteria not reached (error before verdict): {missing}")
