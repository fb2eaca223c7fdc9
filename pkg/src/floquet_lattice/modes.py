"""Floquet-Bloch modes: diagonalisation, quasi-energy folding, band tracking."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment, minimize_scalar

from .config import ValidatedConfig
from .errors import ContinuationAmbiguity, EigenFailure, NoApproach, NonUnitaryWarning
from .propagator import BaseBlocks, base_blocks, ordered_product


@dataclass
class FloquetMode:
    """Eigenvector of ``U(t0 + T, t0)`` at one quasi-momentum."""

    kappa: float
    quasienergy: float
    vector: np.ndarray
    eigenvalue: complex
    residual: float
    t0: float = 0.0
    trajectory: np.ndarray | None = None
    band: int | None = None


@dataclass(frozen=True)
class ShiftClass:
    q: int | None
    residual: float
    eigenvalue: complex


def fold_quasienergy(eps_raw, omega: float):
    """Map quasi-energies into ``[-omega/2, omega/2)``."""
    out = np.mod(np.asarray(eps_raw, dtype=float) + 0.5 * omega, omega) - 0.5 * omega
    return float(out) if np.ndim(out) == 0 else out


def quasienergy_distance(e1, e2, omega: float):
    """Distance between quasi-energies on the circle of circumference ``omega``."""
    return np.abs(fold_quasienergy(np.asarray(e1) - np.asarray(e2), omega))


def shift_diagonal(kappa: float, cfg: ValidatedConfig) -> np.ndarray:
    """Diagonal of the translation by one barrier spacing: ``exp(-i(2 pi mu/n_p + kappa L))``."""
    mus = cfg.basis.mus
    return np.exp(-1j * (2.0 * math.pi * mus / cfg.n_p + kappa * cfg.lattice.barrier_spacing))


def _clusters(eigvals: np.ndarray, tol: float) -> list[list[int]]:
    """Group indices of eigenvalues closer than ``tol`` (single linkage on the unit circle)."""
    n = len(eigvals)
    order = np.argsort(np.angle(eigvals))
    groups: list[list[int]] = []
    for idx in order:
        if groups and abs(eigvals[idx] - eigvals[groups[-1][-1]]) < tol:
            groups[-1].append(int(idx))
        else:
            groups.append([int(idx)])
    # the circle wraps at angle +-pi
    if len(groups) > 1 and abs(eigvals[groups[0][0]] - eigvals[groups[-1][-1]]) < tol:
        groups[0] = groups.pop() + groups[0]
    assert sum(len(g) for g in groups) == n
    return groups


def diagonalize(U: np.ndarray, kappa: float, cfg: ValidatedConfig, t0: float = 0.0) -> list[FloquetMode]:
    """Full eigendecomposition of a one-period propagator, sorted by quasi-energy.

    Eigenvectors inside a (near-)degenerate cluster are rotated to
    eigenvectors of the shift operator where possible and orthonormalised;
    any such rotation stays inside the eigenspace.
    """
    try:
        eigvals, vecs = linalg.eig(U)
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigenFailure(str(exc)) from exc
    if not np.all(np.isfinite(eigvals)):
        raise EigenFailure("non-finite eigenvalues")
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    shift = shift_diagonal(kappa, cfg)
    for group in _clusters(eigvals, cfg.tolerances.degenerate):
        if len(group) < 2:
            continue
        q, _ = np.linalg.qr(vecs[:, group])
        reduced = q.conj().T @ (shift[:, None] * q)
        _, z = linalg.schur(reduced, output="complex")
        vecs[:, group] = q @ z
        lam = np.mean(eigvals[group])
        eigvals[group] = lam

    interior = cfg.interior_mask()
    period = cfg.period
    modes = []
    for k in range(len(eigvals)):
        v = vecs[:, k]
        lam = eigvals[k]
        eps = fold_quasienergy(-np.angle(lam) / period, cfg.omega)
        res = float(np.linalg.norm(U @ v - lam * v))
        modes.append(FloquetMode(kappa, eps, v, complex(lam), res, t0))
        if np.sum(np.abs(v[interior]) ** 2) > 0.5 and abs(abs(lam) - 1.0) > 1e-6:
            warnings.warn(
                f"|lambda| = {abs(lam):.8f} for an interior mode at kappa={kappa:g}",
                NonUnitaryWarning,
                stacklevel=2,
            )
    modes.sort(key=lambda m: m.quasienergy)
    return modes


def shift_class(mode: FloquetMode, cfg: ValidatedConfig) -> ShiftClass:
    """Eigenvalue label ``q`` of the translation by ``L``, or ``None`` if not an eigenvector."""
    s = shift_diagonal(mode.kappa, cfg)
    v = mode.vector / np.linalg.norm(mode.vector)
    lam = complex(np.vdot(v, s * v))
    residual = float(np.linalg.norm(s * v - lam * v))
    if residual >= cfg.tolerances.shift:
        return ShiftClass(None, residual, lam)
    phase = -np.angle(lam * np.exp(1j * mode.kappa * cfg.lattice.barrier_spacing))
    q = int(round(phase * cfg.n_p / (2.0 * math.pi))) % cfg.n_p
    return ShiftClass(q, residual, lam)


def attach_trajectories(modes: list[FloquetMode], blocks: np.ndarray, cfg: ValidatedConfig) -> None:
    """Fill ``mode.trajectory[j] = Phi(t0 + j dt)`` for ``j = 0..N`` using cached blocks.

    ``Phi(t) = exp(i eps (t - t0)) U(t, t0) Phi(t0)``; the last row equals the
    first up to the eigen-residual.
    """
    if not modes:
        return
    n_steps = cfg.truncation.n_steps
    s = cfg.snap_time(modes[0].t0)
    phi = np.stack([m.vector for m in modes], axis=1)
    eps = np.array([m.quasienergy for m in modes])
    traj = np.empty((n_steps + 1,) + phi.shape, dtype=complex)
    traj[0] = phi
    for j in range(1, n_steps + 1):
        phi = blocks[(s + j - 1) % n_steps] @ phi
        traj[j] = phi * np.exp(1j * eps * j * cfg.dt)
    for k, m in enumerate(modes):
        m.trajectory = traj[:, :, k]


@dataclass
class Spectrum:
    """Quasi-energies over a quasi-momentum grid with band continuation.

    ``continuation[i, a]`` is the mode index at ``kappas[i + 1]`` continuing
    mode ``a`` at ``kappas[i]``; ``band_indices()`` chains these.
    """

    kappas: np.ndarray
    quasienergies: np.ndarray
    shift_classes: np.ndarray
    residuals: np.ndarray
    continuation: np.ndarray
    t0: float = 0.0
    vectors: np.ndarray | None = None
    min_overlap: np.ndarray = field(default_factory=lambda: np.zeros(0))
    omega: float = 1.0

    def band_indices(self) -> np.ndarray:
        """``idx[b, i]``: mode index of band ``b`` at ``kappas[i]`` (band b starts at mode b)."""
        nk, m = self.quasienergies.shape
        idx = np.empty((m, nk), dtype=int)
        idx[:, 0] = np.arange(m)
        for i in range(nk - 1):
            idx[:, i + 1] = self.continuation[i][idx[:, i]]
        return idx

    def band_energies(self) -> np.ndarray:
        idx = self.band_indices()
        return np.array([self.quasienergies[np.arange(len(self.kappas)), row] for row in idx])

    def band_classes(self) -> np.ndarray:
        idx = self.band_indices()
        return np.array([self.shift_classes[np.arange(len(self.kappas)), row] for row in idx])


def kappa_grid(n_points: int, cfg: ValidatedConfig) -> np.ndarray:
    """Uniform grid over the first Brillouin zone including both edges."""
    edge = cfg.brillouin_edge
    return np.linspace(-edge, edge, n_points)


def modes_at(
    kappa: float, cfg: ValidatedConfig, t0: float = 0.0, *, cache=None, blocks: BaseBlocks | None = None
) -> list[FloquetMode]:
    bb = blocks if blocks is not None else base_blocks(kappa, cfg, cache=cache)
    return diagonalize(bb.period(t0, cfg), kappa, cfg, t0)


def _scan_one(args):
    kappa, cfg, t0, cache = args
    modes = modes_at(kappa, cfg, t0, cache=cache)
    eps = np.array([m.quasienergy for m in modes])
    classes = np.array([(-1 if (q := shift_class(m, cfg).q) is None else q) for m in modes])
    res = np.array([m.residual for m in modes])
    vecs = np.stack([m.vector for m in modes], axis=1)
    return eps, classes, res, vecs


def continuation_map(
    vec_a: np.ndarray, vec_b: np.ndarray, eps_a: np.ndarray, eps_b: np.ndarray, omega: float
) -> tuple[np.ndarray, np.ndarray]:
    """Match modes between neighbouring quasi-momenta by maximal overlap.

    Returns the assignment and the overlap achieved for each matched pair.
    Quasi-energy proximity breaks ties.
    """
    overlap = np.abs(vec_a.conj().T @ vec_b) ** 2
    closeness = quasienergy_distance(eps_a[:, None], eps_b[None, :], omega)
    score = overlap - 1e-6 * closeness
    rows, cols = linear_sum_assignment(-score)
    perm = np.empty(len(eps_a), dtype=int)
    perm[rows] = cols
    return perm, overlap[rows, cols][np.argsort(rows)]


def band_scan(
    kappas: np.ndarray,
    t0: float,
    cfg: ValidatedConfig,
    *,
    cache=None,
    workers: int = 1,
    keep_vectors: bool = True,
) -> Spectrum:
    """Diagonalise ``U(t0 + T, t0)`` on every grid point and continue bands by overlap."""
    kappas = np.asarray(kappas, dtype=float)
    edge = cfg.brillouin_edge * (1 + 1e-12)
    if np.any(np.abs(kappas) > edge):
        raise ValueError("quasi-momenta must lie in the first Brillouin zone")
    jobs = [(float(k), cfg, t0, cache) for k in kappas]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scan_one, jobs))
    else:
        results = [_scan_one(j) for j in jobs]
    eps = np.array([r[0] for r in results])
    classes = np.array([r[1] for r in results])
    res = np.array([r[2] for r in results])
    vecs = np.array([r[3] for r in results])
    perms, worst = [], []
    for i in range(len(kappas) - 1):
        perm, ov = continuation_map(vecs[i], vecs[i + 1], eps[i], eps[i + 1], cfg.omega)
        perms.append(perm)
        worst.append(ov.min())
    worst_arr = np.array(worst)
    if len(worst_arr) and worst_arr.min() < 0.5:
        warnings.warn(
            f"band continuation overlap drops to {worst_arr.min():.3f}; refine the kappa grid",
            ContinuationAmbiguity,
            stacklevel=2,
        )
    cont = np.array(perms, dtype=int).reshape(len(kappas) - 1, cfg.dim)
    return Spectrum(kappas, eps, classes, res, cont, t0, vecs if keep_vectors else None, worst_arr, cfg.omega)


@dataclass(frozen=True)
class GapResult:
    gap: float
    kappa: float
    quasienergy: float
    refined: bool


def _pair_gap_at(kappa: float, ref: np.ndarray, cfg: ValidatedConfig, t0: float, cache) -> tuple[float, float]:
    """Gap between the two modes at ``kappa`` best contained in the span of ``ref``."""
    modes = modes_at(kappa, cfg, t0, cache=cache)
    vecs = np.stack([m.vector for m in modes], axis=1)
    q, _ = np.linalg.qr(ref)
    weight = np.sum(np.abs(q.conj().T @ vecs) ** 2, axis=0)
    a, b = np.argsort(weight)[-2:]
    ea, eb = modes[a].quasienergy, modes[b].quasienergy
    mid = fold_quasienergy(eb + 0.5 * fold_quasienergy(ea - eb, cfg.omega), cfg.omega)
    return float(quasienergy_distance(ea, eb, cfg.omega)), float(mid)


def _refine(ref, lo, hi, start, cfg, t0, cache, xatol) -> GapResult:
    """Bounded Brent minimisation of the pair gap on ``[lo, hi]``; keeps ``start`` if better."""
    res = minimize_scalar(
        lambda x: _pair_gap_at(x, ref, cfg, t0, cache)[0],
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": xatol},
    )
    best_k, best = (float(res.x), float(res.fun)) if res.fun < start[1] else start
    _, eps = _pair_gap_at(best_k, ref, cfg, t0, cache)
    return GapResult(float(best), float(best_k), eps, True)


def tracked_gap(
    ref: np.ndarray,
    window: tuple[float, float],
    cfg: ValidatedConfig,
    *,
    n_grid: int = 9,
    xatol: float = 1e-10,
    t0: float = 0.0,
    cache=None,
) -> GapResult:
    """Minimal gap of the mode pair spanning ``ref`` (columns) inside a quasi-momentum window.

    At every trial quasi-momentum the pair is the two modes with the largest
    weight in ``span(ref)``, so a reference taken from a nearby parameter
    set follows the same crossing as the drive is deformed.
    """
    ks = np.linspace(window[0], window[1], n_grid)
    gaps = np.array([_pair_gap_at(k, ref, cfg, t0, cache)[0] for k in ks])
    i = int(np.argmin(gaps))
    if i == 0 or i == n_grid - 1:
        raise NoApproach("minimum sits on the window boundary")
    return _refine(ref, ks[i - 1], ks[i + 1], (float(ks[i]), float(gaps[i])), cfg, t0, cache, xatol)


def crossing_gap(
    spectrum: Spectrum,
    bands: tuple[int, int],
    window: tuple[float, float],
    cfg: ValidatedConfig | None = None,
    *,
    xatol: float = 1e-10,
    cache=None,
) -> GapResult:
    """Minimal quasi-energy distance of two bands inside a quasi-momentum window.

    Without ``cfg`` the grid minimum is returned.  With ``cfg`` the minimum
    is refined by bounded Brent iterations between the neighbouring grid
    points, recomputing modes at each trial quasi-momentum.
    """
    a, b = bands
    energies = spectrum.band_energies()
    kap = spectrum.kappas
    inside = np.flatnonzero((kap >= window[0]) & (kap <= window[1]))
    if len(inside) < 3:
        raise NoApproach("window holds fewer than three grid points")
    dist = quasienergy_distance(energies[a, inside], energies[b, inside], spectrum.omega)
    k = int(np.argmin(dist))
    if k == 0 or k == len(inside) - 1:
        raise NoApproach("minimum sits on the window boundary")
    i = inside[k]
    ea, eb = energies[a, i], energies[b, i]
    eps_mid = float(fold_quasienergy(eb + 0.5 * fold_quasienergy(ea - eb, spectrum.omega), spectrum.omega))
    if cfg is None or spectrum.vectors is None:
        return GapResult(float(dist[k]), float(kap[i]), eps_mid, False)
    ref = pair_vectors(spectrum, bands, i)
    return _refine(ref, kap[i - 1], kap[i + 1], (float(kap[i]), float(dist[k])), cfg, spectrum.t0, cache, xatol)


def pair_vectors(spectrum: Spectrum, bands: tuple[int, int], i: int) -> np.ndarray:
    """Eigenvectors of two bands at grid point ``i`` as columns."""
    if spectrum.vectors is None:
        raise ValueError("spectrum was computed without eigenvectors")
    idx = spectrum.band_indices()
    return spectrum.vectors[i][:, [idx[bands[0], i], idx[bands[1], i]]]


@dataclass(frozen=True)
class Crossing:
    bands: tuple[int, int]
    classes: tuple[int, int]
    index: int  # grid interval [index, index + 1] holds the sign change
    kappa: float
    quasienergy: float


def class_crossings(
    spectrum: Spectrum,
    eps_window: tuple[float, float] = (-np.inf, np.inf),
    kappa_window: tuple[float, float] = (-np.inf, np.inf),
    max_jump: float = 0.05,
) -> list[Crossing]:
    """Sign changes of ``eps_a - eps_b`` between grid neighbours for bands in distinct shift classes.

    Differences larger than ``max_jump`` are wrap-arounds of the folded
    quasi-energy, not crossings.
    """
    energies = spectrum.band_energies()
    classes = spectrum.band_classes()
    kap = spectrum.kappas
    out = []
    nb = energies.shape[0]
    for a in range(nb):
        for b in range(a + 1, nb):
            d = fold_quasienergy(energies[a] - energies[b], spectrum.omega)
            flips = np.flatnonzero((d[:-1] * d[1:] < 0) & (np.abs(d[:-1]) < max_jump) & (np.abs(d[1:]) < max_jump))
            for i in flips:
                qa, qb = int(classes[a, i]), int(classes[b, i])
                if qa < 0 or qb < 0 or qa == qb or qa != classes[a, i + 1] or qb != classes[b, i + 1]:
                    continue
                kc = 0.5 * (kap[i] + kap[i + 1])
                ec = float(energies[a, i])
                if eps_window[0] <= ec <= eps_window[1] and kappa_window[0] <= kc <= kappa_window[1]:
                    out.append(Crossing((a, b), (qa, qb), int(i), float(kc), ec))
    return out
