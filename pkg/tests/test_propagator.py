from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.linalg import expm

from floquet_lattice.config import TruncationConfig
from floquet_lattice.errors import ConvergenceError, IndexOutOfRange
from floquet_lattice.potential import unit_cell_matrix
from floquet_lattice.propagator import (
    FloquetOperator,
    base_blocks,
    floquet_matrix,
    kinetic_diagonal,
    oracle_propagator,
    period_propagator,
    rebuilt_period_propagator,
    short_time_block,
    short_time_generator,
)

from conftest import small_config

PI = math.pi
TINY = TruncationConfig(mu_max=4, n_max=4, n_steps=16)


def test_fft_and_dense_operator_agree():
    cfg = small_config((0.0, PI / 3, 1.0), TINY)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(cfg.n_orders, cfg.dim, 3)) + 1j * rng.normal(size=(cfg.n_orders, cfg.dim, 3))
    fast = FloquetOperator(0.07, 0.4, cfg, "fft").apply(x)
    dense = FloquetOperator(0.07, 0.4, cfg, "dense").apply(x)
    np.testing.assert_allclose(fast, dense, atol=1e-12)


def test_floquet_matrix_is_hermitian():
    cfg = small_config((0.0, PI / 3, 1.0), TINY)
    hf = floquet_matrix(0.05, 0.2, cfg)
    np.testing.assert_allclose(hf, hf.conj().T, atol=1e-15)


def test_generator_matches_brute_force_contraction():
    cfg = small_config((0.0, PI / 2, 0.0), TINY)
    kappa, order = -0.04, 3
    hf = floquet_matrix(kappa, 0.0, cfg)
    nn, m = cfg.n_orders, cfg.dim
    total = np.zeros_like(hf)
    power = np.eye(nn * m, dtype=complex)
    for p in range(order + 1):
        total += (-1j * cfg.dt) ** p / math.factorial(p) * power
        power = hf @ power
    n0 = cfg.truncation.n_max
    brute = total.reshape(nn, m, nn, m)[:, :, n0, :]
    for method in ("fft", "dense"):
        gen = short_time_generator(kappa, cfg, method=method, p_max=order, check=False)
        np.testing.assert_allclose(gen, brute, atol=1e-14)


def test_free_particle_limit():
    # a vanishing barrier leaves plane waves with phase exp(-i k^2 T / 2)
    cfg = small_config(truncation=TINY, barrier_height=1e-30)
    kappa = 0.06
    U = base_blocks(kappa, cfg).period(0.0, cfg)
    expected = np.diag(np.exp(-1j * kinetic_diagonal(kappa, cfg) * cfg.period))
    np.testing.assert_allclose(U, expected, atol=1e-12)


def test_static_limit_is_matrix_exponential():
    cfg = small_config(drive_amplitude=0.0)
    kappa = 0.03
    h = unit_cell_matrix(0, 0.0, cfg) + np.diag(kinetic_diagonal(kappa, cfg))
    U = base_blocks(kappa, cfg).period(0.0, cfg)
    np.testing.assert_allclose(U, expm(-1j * h * cfg.period), atol=1e-11)


def test_agrees_with_ode_oracle(spatiotemporal):
    cfg = spatiotemporal
    kappa = 0.05
    U = base_blocks(kappa, cfg).period(0.0, cfg)
    ref = oracle_propagator(0.0, cfg.period, kappa, cfg)
    assert np.linalg.norm(U - ref) / np.linalg.norm(ref) < 1e-9


def test_unitarity(spatiotemporal):
    U = base_blocks(0.02, spatiotemporal).period(0.0, spatiotemporal)
    # the Fourier-band cutoff is the only non-unitary ingredient; it shrinks with n_max
    np.testing.assert_allclose(U.conj().T @ U, np.eye(U.shape[0]), atol=1e-9)


@pytest.mark.parametrize("s", [0, 1, 17, 40, 63])
def test_reordered_blocks_match_rebuilt_propagator(spatiotemporal, s):
    cfg = spatiotemporal
    bb = base_blocks(-0.03, cfg)
    t0 = s * cfg.dt
    fast = period_propagator(t0, -0.03, bb.blocks, cfg)
    slow = rebuilt_period_propagator(t0, -0.03, cfg)
    assert np.abs(fast - slow).max() < 1e-11


def test_interval_composition(spatiotemporal):
    bb = base_blocks(0.01, spatiotemporal)
    n = spatiotemporal.truncation.n_steps
    np.testing.assert_allclose(bb.interval(20, n + 20), bb.interval(n, n + 20) @ bb.interval(20, n), atol=1e-12)
    np.testing.assert_allclose(bb.interval(0, n), bb.period(0.0, spatiotemporal), atol=0)
    with pytest.raises(ValueError):
        bb.interval(5, 3)


def test_block_index_and_convergence_guards(uniform):
    with pytest.raises(IndexOutOfRange):
        short_time_block(0, 0.0, uniform)
    with pytest.raises(ConvergenceError):
        short_time_generator(0.0, uniform, p_max=1)
    # an explicit unchecked order is honoured
    g = short_time_generator(0.0, uniform, p_max=1, check=False)
    assert g.shape == (uniform.n_orders, uniform.dim, uniform.dim)
