"""Phase-space densities, mode velocities, wave-packet overlaps and currents.

The Gaussian packet is centred at ``x = 0`` with momentum amplitude
``psi(k) = (sigma^2/pi)^(1/4) exp(-sigma^2 k^2 / 2)``.  Overlaps are
``C = sum_mu conj(Phi^mu) psi(k_mu)``, normalised so that
``sum_alpha int dkappa |C|^2 = 1`` for a state inside the truncated basis.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ValidatedConfig
from .errors import MissingTrajectory
from .modes import FloquetMode, attach_trajectories, diagonalize, kappa_grid
from .propagator import base_blocks


@dataclass
class HusimiGrid:
    x: np.ndarray
    p: np.ndarray
    values: np.ndarray  # shape (len(x), len(p))
    sigma_h: float
    t: float = 0.0


def husimi(
    components: FloquetMode | np.ndarray,
    x: np.ndarray,
    p: np.ndarray,
    sigma_h: float,
    cfg: ValidatedConfig,
    *,
    kappa: float | None = None,
    t: float = 0.0,
) -> HusimiGrid:
    """Coherent-state density of a Bloch state given by its plane-wave components.

    ``Q(x, p) = (2 sqrt(pi) sigma_h / a) |sum_mu c_mu exp(-sigma_h^2 (k_mu - p)^2 / 2 + i k_mu x)|^2``,
    normalised so that ``int_cell dx int dp Q / (2 pi) = 1`` for unit ``c``.
    A ``FloquetMode`` uses its trajectory row at ``t`` (snapped to the grid)
    when available, otherwise its stored vector.
    """
    if isinstance(components, FloquetMode):
        kappa = components.kappa
        if components.trajectory is not None:
            s = int(round((t - components.t0) / cfg.dt)) % cfg.truncation.n_steps
            c = components.trajectory[s]
        else:
            c = components.vector
    else:
        if kappa is None:
            raise ValueError("kappa is required for a bare component vector")
        c = np.asarray(components)
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    k = cfg.wavenumbers(kappa)
    gauss = np.exp(-0.5 * sigma_h**2 * (k[None, :] - p[:, None]) ** 2) * c[None, :]  # (P, M)
    waves = np.exp(1j * np.outer(x, k))  # (X, M)
    amp = waves @ gauss.T
    q = (2.0 * math.sqrt(math.pi) * sigma_h / cfg.cell_length) * np.abs(amp) ** 2
    return HusimiGrid(x, p, q, sigma_h, t)


def grid_residual(a: np.ndarray, b: np.ndarray) -> float:
    """Max difference of two grids relative to the larger peak."""
    scale = max(np.abs(a).max(), np.abs(b).max())
    return float(np.abs(a - b).max() / scale) if scale > 0 else 0.0


def mode_velocity(mode: FloquetMode, cfg: ValidatedConfig) -> float:
    """Period-averaged momentum ``sum_mu k_mu |Phi^mu(t_j)|^2``, left Riemann sum over the step grid."""
    if mode.trajectory is None:
        raise MissingTrajectory("mode velocity needs the trajectory over one period")
    k = cfg.wavenumbers(mode.kappa)
    rows = mode.trajectory[: cfg.truncation.n_steps]
    return float(np.mean(np.abs(rows) ** 2 @ k))


def packet_amplitude(k: np.ndarray, sigma_w: float) -> np.ndarray:
    return (sigma_w**2 / math.pi) ** 0.25 * np.exp(-0.5 * (sigma_w * k) ** 2)


def trapezoid_weights(kappas: np.ndarray) -> np.ndarray:
    if len(kappas) < 2:
        return np.ones(len(kappas))
    d = np.diff(kappas)
    w = np.zeros(len(kappas))
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


@dataclass
class KappaSlice:
    """Everything the transport observables need from one quasi-momentum.

    ``overlaps[i, alpha]`` belongs to launch step ``steps[i]``; ``vectors``
    (if kept) holds ``Phi_alpha(steps[i] dt)`` as columns.
    """

    kappa: float
    quasienergies: np.ndarray
    velocities: np.ndarray
    steps: np.ndarray
    overlaps: np.ndarray
    vectors: np.ndarray | None = None


def kappa_slice(
    kappa: float,
    cfg: ValidatedConfig,
    steps,
    sigma_w: float,
    *,
    cache=None,
    keep_vectors: bool = False,
) -> KappaSlice:
    """Modes of ``U(T, 0)``, their velocities and packet overlaps at each launch step.

    Launch times come from the period-0 trajectory: ``Phi(t_s)`` is a Floquet
    mode of ``U(t_s + T, t_s)`` with the same quasi-energy.
    """
    bb = base_blocks(kappa, cfg, cache=cache)
    modes = diagonalize(bb.period(0.0, cfg), kappa, cfg, 0.0)
    attach_trajectories(modes, bb.blocks, cfg)
    steps = np.asarray(steps, dtype=int) % cfg.truncation.n_steps
    psi = packet_amplitude(cfg.wavenumbers(kappa), sigma_w)
    traj = np.stack([m.trajectory for m in modes], axis=2)  # (N + 1, M, modes)
    sel = traj[steps]  # (S, M, modes)
    overlaps = np.einsum("sma,m->sa", sel.conj(), psi)
    vel = np.array([mode_velocity(m, cfg) for m in modes])
    eps = np.array([m.quasienergy for m in modes])
    return KappaSlice(kappa, eps, vel, steps, overlaps, sel if keep_vectors else None)


def _slice_job(args):
    kappa, cfg, steps, sigma_w, cache, keep = args
    return kappa_slice(kappa, cfg, steps, sigma_w, cache=cache, keep_vectors=keep)


def compute_slices(
    kappas: np.ndarray,
    cfg: ValidatedConfig,
    steps,
    sigma_w: float,
    *,
    cache=None,
    workers: int = 1,
    keep_vectors: bool = False,
) -> list[KappaSlice]:
    jobs = [(float(k), cfg, steps, sigma_w, cache, keep_vectors) for k in kappas]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_slice_job, jobs))
    return [_slice_job(j) for j in jobs]


@dataclass
class InitialState:
    kind: str
    sigma_w: float | None
    t0: float
    kappas: np.ndarray
    weights: np.ndarray
    overlaps: np.ndarray  # (n_kappa, modes)

    @property
    def norm(self) -> float:
        return float(np.sum(self.weights[:, None] * np.abs(self.overlaps) ** 2))


def gaussian_overlaps(sigma_w: float, t0: float, slices: list[KappaSlice], cfg: ValidatedConfig) -> InitialState:
    """Packet overlaps at launch time ``t0`` (snapped) from precomputed slices."""
    if not sigma_w > 0:
        raise ValueError("sigma_w must be positive")
    s = cfg.snap_time(t0)
    rows = []
    for sl in slices:
        hit = np.flatnonzero(sl.steps == s)
        if not len(hit):
            raise ValueError(f"launch step {s} was not computed")
        rows.append(sl.overlaps[hit[0]])
    kappas = np.array([sl.kappa for sl in slices])
    return InitialState("gaussian-packet", sigma_w, s * cfg.dt, kappas, trapezoid_weights(kappas), np.array(rows))


@dataclass
class CurrentResult:
    t0: np.ndarray
    current: np.ndarray
    norm: np.ndarray

    @property
    def mean(self) -> float:
        """Time-averaged current over the launch grid."""
        return float(np.mean(self.current))


def currents_from_slices(slices: list[KappaSlice], cfg: ValidatedConfig) -> CurrentResult:
    """``J(t0) = int dkappa sum_alpha v |C(t0)|^2`` with trapezoidal weights."""
    kappas = np.array([sl.kappa for sl in slices])
    w = trapezoid_weights(kappas)
    weight = np.array([np.abs(sl.overlaps) ** 2 for sl in slices])  # (K, S, modes)
    vel = np.array([sl.velocities for sl in slices])  # (K, modes)
    current = np.einsum("k,ksa,ka->s", w, weight, vel)
    norm = np.einsum("k,ksa->s", w, weight)
    return CurrentResult(slices[0].steps * cfg.dt, current, norm)


def launch_steps(n_points: int, cfg: ValidatedConfig) -> np.ndarray:
    """``n_points`` launch times spread evenly over one period, on the step grid."""
    n_steps = cfg.truncation.n_steps
    if n_steps % n_points:
        raise ValueError(f"{n_points} launch times do not divide N = {n_steps}")
    return np.arange(n_points) * (n_steps // n_points)


def asymptotic_current(
    t0,
    sigma_w: float,
    cfg: ValidatedConfig,
    *,
    kappas: np.ndarray | None = None,
    n_kappa: int = 64,
    cache=None,
    workers: int = 1,
) -> CurrentResult:
    """Asymptotic current for one or more launch times (snapped to the step grid)."""
    steps = np.atleast_1d([cfg.snap_time(t) for t in np.atleast_1d(t0)])
    kap = kappa_grid(n_kappa, cfg) if kappas is None else np.asarray(kappas)
    return currents_from_slices(compute_slices(kap, cfg, steps, sigma_w, cache=cache, workers=workers), cfg)


@dataclass
class StroboscopicState:
    m: int
    x: np.ndarray
    density: np.ndarray
    norm: float
    mean_x: float
    mean_p: float


def momentum_amplitudes(slices: list[KappaSlice], t0: float, m: int, cfg: ValidatedConfig) -> np.ndarray:
    """``a_mu(kappa) = sum_alpha C e^{-i eps m T} Phi^mu(t0)``, the packet's momentum amplitude at ``k_mu``."""
    s = cfg.snap_time(t0)
    out = []
    for sl in slices:
        if sl.vectors is None:
            raise ValueError("slices were computed without vectors")
        i = int(np.flatnonzero(sl.steps == s)[0])
        coef = sl.overlaps[i] * np.exp(-1j * sl.quasienergies * m * cfg.period)
        out.append(sl.vectors[i] @ coef)
    return np.array(out)  # (K, M)


def stroboscopic_propagate(
    slices: list[KappaSlice], t0: float, m: int, cfg: ValidatedConfig, *, with_density: bool = True
) -> StroboscopicState:
    """Packet at ``t0 + m T`` from quasi-energy phases, reconstructed on a periodic x grid.

    The quasi-momentum grid must be uniform and include both zone edges; the
    samples then form a uniform momentum grid with spacing ``dkappa`` and the
    position grid is a ring of length ``2 pi / dkappa``.
    """
    kappas = np.array([sl.kappa for sl in slices])
    dk = np.diff(kappas)
    if len(kappas) < 3 or not np.allclose(dk, dk[0], rtol=1e-9, atol=0):
        raise ValueError("stroboscopic reconstruction needs a uniform quasi-momentum grid")
    if not math.isclose(kappas[-1] - kappas[0], 2 * cfg.brillouin_edge, rel_tol=1e-12):
        raise ValueError("the quasi-momentum grid must span the whole zone")
    amps = momentum_amplitudes(slices, t0, m, cfg)[:-1]  # last row repeats the first, one label up
    n_k, n_mu = amps.shape
    dkap = float(dk[0])
    flat = amps.T.reshape(-1)  # label-major: k ascends through kappa within each label
    k = np.concatenate([cfg.wavenumbers(kp) for kp in kappas[:-1]]).reshape(n_k, n_mu).T.reshape(-1)
    norm = float(np.sum(np.abs(flat) ** 2) * dkap)
    mean_p = float(np.sum(k * np.abs(flat) ** 2) * dkap / norm)
    n = len(flat)
    ring = 2 * math.pi / dkap
    dx = ring / n
    j = np.arange(n) - n // 2
    x = j * dx
    # psi(x_j) = dk / sqrt(2 pi) sum_n a_n exp(i k_n x_j)
    psi = np.fft.ifft(flat) * n  # sum_n a_n exp(2 pi i n j / n)
    psi = np.roll(psi, n // 2)  # reorder to j = -n/2 .. n/2 - 1
    psi = psi * np.exp(1j * k[0] * x) * dkap / math.sqrt(2 * math.pi)
    dens = np.abs(psi) ** 2
    mean_x = float(np.sum(x * dens) / np.sum(dens))
    return StroboscopicState(m, x, dens if with_density else np.zeros(0), norm, mean_x, mean_p)
