"""Temporal Fourier components of the oscillating Gaussian barrier potential.

Basis functions are orthonormal plane waves on one unit cell of length
``a = n_p L``: ``<x|mu_kappa> = exp(i k_mu x) / sqrt(a)``.  Every potential
matrix element then depends on ``nu - mu`` only, so matrices are assembled
from a coefficient row indexed by that difference (Toeplitz structure).

Fourier convention: ``V(x, t) = sum_n V^(n)(x) exp(i n omega t)`` with
``V^(n) = (1/T) int_0^T V exp(-i n omega t) dt``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import jv

from .config import ValidatedConfig
from .errors import IndexOutOfRange


def _differences(cfg: ValidatedConfig) -> np.ndarray:
    mu_max = cfg.truncation.mu_max
    return np.arange(-2 * mu_max, 2 * mu_max + 1)


def _momentum_transfer(d: np.ndarray | int, cfg: ValidatedConfig) -> np.ndarray:
    return 2.0 * math.pi * np.asarray(d, dtype=float) / cfg.cell_length


def _prefactor(cfg: ValidatedConfig) -> float:
    lat = cfg.lattice
    return lat.barrier_height * lat.barrier_width * math.sqrt(math.pi) / cfg.cell_length


def toeplitz_gather(coeffs: np.ndarray, cfg: ValidatedConfig) -> np.ndarray:
    """Turn coefficients over ``d = nu - mu`` (last axis) into ``(..., M, M)`` matrices."""
    mus = cfg.basis.mus
    idx = mus[None, :] - mus[:, None] + 2 * cfg.truncation.mu_max
    return coeffs[..., idx]


def single_barrier_coefficients(orders: np.ndarray, cfg: ValidatedConfig) -> np.ndarray:
    """Single-barrier elements for every order in ``orders`` and every ``nu - mu``.

    Returns an array of shape ``(len(orders), 4 mu_max + 1)``.
    """
    orders = np.atleast_1d(np.asarray(orders, dtype=int))
    q = _momentum_transfer(_differences(cfg), cfg)
    lat = cfg.lattice
    envelope = _prefactor(cfg) * np.exp(-0.25 * (q * lat.barrier_width) ** 2)
    bessel = jv(orders[:, None], q[None, :] * lat.drive_amplitude)
    return (1j ** (orders % 4))[:, None] * envelope[None, :] * bessel


def single_barrier_element(n: int, mu: int, nu: int, cfg: ValidatedConfig) -> complex:
    """Matrix element ``<mu| V_SB^(n) |nu>`` of one barrier centred at the origin.

    Closed form: ``V0 width sqrt(pi)/a * exp(-q^2 width^2/4) * i^n J_n(q A)`` with
    ``q = 2 pi (nu - mu)/a``.
    """
    mu_max, n_max = cfg.truncation.mu_max, cfg.truncation.n_max
    if abs(mu) > mu_max or abs(nu) > mu_max:
        raise IndexOutOfRange(f"basis labels ({mu}, {nu}) exceed mu_max={mu_max}")
    if abs(n) > 2 * n_max:
        raise IndexOutOfRange(f"Fourier order {n} exceeds the Floquet band 2*n_max={2 * n_max}")
    q = _momentum_transfer(nu - mu, cfg)
    lat = cfg.lattice
    value = (
        _prefactor(cfg)
        * math.exp(-0.25 * (q * lat.barrier_width) ** 2)
        * jv(n, q * lat.drive_amplitude)
    )
    return complex(1j ** (n % 4) * value)


def unit_cell_coefficients(orders: np.ndarray, t0: float, cfg: ValidatedConfig) -> np.ndarray:
    """Unit-cell Fourier coefficients over ``d = nu - mu``, shape ``(len(orders), 4 mu_max + 1)``."""
    orders = np.atleast_1d(np.asarray(orders, dtype=int))
    sb = single_barrier_coefficients(orders, cfg)
    q = _momentum_transfer(_differences(cfg), cfg)
    phases = np.asarray(cfg.lattice.phases)
    x0 = cfg.barrier_positions
    # sum_i exp(i (n (omega t0 + delta_i) + q x_i))
    drive = np.exp(1j * orders[:, None] * (cfg.omega * t0 + phases[None, :]))  # (K, n_p)
    geometric = np.exp(1j * q[None, :] * x0[:, None])  # (n_p, D)
    return sb * (drive @ geometric)


def unit_cell_matrix(n: int, t0: float, cfg: ValidatedConfig) -> np.ndarray:
    """``V^(n)_{mu nu}`` for the whole unit cell at initial time ``t0``."""
    if abs(n) > 2 * cfg.truncation.n_max:
        raise IndexOutOfRange(f"Fourier order {n} exceeds 2*n_max={2 * cfg.truncation.n_max}")
    return toeplitz_gather(unit_cell_coefficients(np.array([n]), t0, cfg)[0], cfg)


def unit_cell_stack(orders: np.ndarray, t0: float, cfg: ValidatedConfig) -> np.ndarray:
    """Stack of unit-cell matrices, shape ``(len(orders), M, M)``."""
    return toeplitz_gather(unit_cell_coefficients(orders, t0, cfg), cfg)


def instantaneous_coefficients(t: float, cfg: ValidatedConfig) -> np.ndarray:
    """Coefficients over ``nu - mu`` of the potential frozen at time ``t`` (no Fourier cutoff)."""
    lat = cfg.lattice
    q = _momentum_transfer(_differences(cfg), cfg)
    envelope = _prefactor(cfg) * np.exp(-0.25 * (q * lat.barrier_width) ** 2)
    centres = cfg.barrier_positions + lat.drive_amplitude * np.cos(
        cfg.omega * t + np.asarray(lat.phases)
    )
    return envelope * np.exp(1j * np.outer(centres, q)).sum(axis=0)


def instantaneous_matrix(t: float, cfg: ValidatedConfig) -> np.ndarray:
    return toeplitz_gather(instantaneous_coefficients(t, cfg), cfg)


def lattice_potential(x: np.ndarray, t: np.ndarray | float, cfg: ValidatedConfig) -> np.ndarray:
    """Real-space potential of the infinite lattice, summed over nearby cell images."""
    lat = cfg.lattice
    a = cfg.cell_length
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    xb, tb = np.broadcast_arrays(x, t)
    # Gaussian tails beyond 12 widths are below 1e-62
    reach = 12.0 * lat.barrier_width + lat.drive_amplitude
    out = np.zeros(xb.shape)
    for x_i, delta in zip(cfg.barrier_positions, lat.phases):
        centre = x_i + lat.drive_amplitude * np.cos(cfg.omega * tb + delta)
        rel = xb - centre
        m_lo = int(math.floor((rel.min() - reach) / a))
        m_hi = int(math.ceil((rel.max() + reach) / a))
        for m in range(m_lo, m_hi + 1):
            out += np.exp(-(((rel - m * a) / lat.barrier_width) ** 2))
    return lat.barrier_height * out
