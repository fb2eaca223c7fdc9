"""One-period evolution operators from powers of the Floquet operator.

The Floquet operator ``H_f = H - i d/dt`` acts on the product basis
``|mu_kappa, n>>``.  For a fixed quasi-momentum its matrix is block-Toeplitz
in the Fourier index: ``<<mu n|H_f|nu m>> = H^(n-m)_{mu nu} + n omega
delta_{nm} delta_{mu nu}``.  The short-time propagator over step ``j`` is

    U^j = sum_n exp(i n omega j dt) [exp(-i H_f dt)]_{n0},

where the bracket is evaluated as a truncated Taylor series.  The bracket does
not depend on ``j``, so it is computed once per quasi-momentum (the
"generator" below) and each block is a phase-weighted sum over ``n``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy.integrate import solve_ivp

from .config import ValidatedConfig
from .errors import ConvergenceError, IndexOutOfRange, StepperFailure, TruncationWarning
from .potential import instantaneous_matrix, toeplitz_gather, unit_cell_coefficients

MAX_AUTO_ORDER = 400


def kinetic_diagonal(kappa: float, cfg: ValidatedConfig) -> np.ndarray:
    return 0.5 * cfg.wavenumbers(kappa) ** 2


def hamiltonian_block(n: int, kappa: float, t0: float, cfg: ValidatedConfig) -> np.ndarray:
    """Fourier component ``H^{kappa,(n)}``: kinetic diagonal for ``n = 0`` plus the potential."""
    if abs(n) > 2 * cfg.truncation.n_max:
        raise IndexOutOfRange(f"order {n} exceeds 2*n_max")
    block = toeplitz_gather(unit_cell_coefficients(np.array([n]), t0, cfg)[0], cfg)
    if n == 0:
        block[np.diag_indices_from(block)] += kinetic_diagonal(kappa, cfg)
    return block


def fourier_stack(kappa: float, t0: float, cfg: ValidatedConfig) -> np.ndarray:
    """All components ``H^(k)`` with ``|k| <= 2 n_max``, shape ``(4 n_max + 1, M, M)``.

    Index ``k + 2 n_max`` holds order ``k``.
    """
    n2 = 2 * cfg.truncation.n_max
    orders = np.arange(-n2, n2 + 1)
    stack = toeplitz_gather(unit_cell_coefficients(orders, t0, cfg), cfg)
    diag = np.arange(cfg.dim)
    stack[n2, diag, diag] += kinetic_diagonal(kappa, cfg)
    return stack


def floquet_matrix(kappa: float, t0: float, cfg: ValidatedConfig) -> np.ndarray:
    """Dense Floquet matrix on the truncated product basis (rows ordered ``(n, mu)``).

    Only practical for small truncations; used as a reference for the
    convolution path.
    """
    n_max = cfg.truncation.n_max
    stack = fourier_stack(kappa, t0, cfg)
    nn, m = cfg.n_orders, cfg.dim
    hf = np.zeros((nn, m, nn, m), dtype=complex)
    for a, n in enumerate(range(-n_max, n_max + 1)):
        for b, mm in enumerate(range(-n_max, n_max + 1)):
            hf[a, :, b, :] = stack[n - mm + 2 * n_max]
        hf[a, np.arange(m), a, np.arange(m)] += n * cfg.omega
    return hf.reshape(nn * m, nn * m)


class FloquetOperator:
    """Applies ``H_f`` to tensors ``X[n + n_max, mu, nu]``.

    ``method="fft"`` evaluates the sum over ``n'`` of ``H^(n-n') X_{n'}`` as a
    convolution along the Fourier axis; ``method="dense"`` multiplies by the
    explicit Floquet matrix.
    """

    def __init__(self, kappa: float, t0: float, cfg: ValidatedConfig, method: str = "fft"):
        self.kappa = kappa
        self.t0 = t0
        self.cfg = cfg
        self.method = method
        n_max = cfg.truncation.n_max
        self._nvals = np.arange(-n_max, n_max + 1)
        self._diag = (self._nvals * cfg.omega)[:, None, None]
        if method == "fft":
            stack = fourier_stack(kappa, t0, cfg)
            # outputs |n| <= n_max are alias-free for any length > 4 n_max
            self._F = sfft.next_fast_len(4 * n_max + 1)
            padded = np.zeros((self._F,) + stack.shape[1:], dtype=complex)
            ks = np.arange(-2 * n_max, 2 * n_max + 1)
            padded[ks % self._F] = stack
            self._h_hat = sfft.fft(padded, axis=0)
            self._slots = self._nvals % self._F
        elif method == "dense":
            self._hf = floquet_matrix(kappa, t0, cfg)
        else:
            raise ValueError(f"unknown method {method!r}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.method == "dense":
            nn, m, k = x.shape
            return (self._hf @ x.reshape(nn * m, k)).reshape(nn, m, k)
        padded = np.zeros((self._F,) + x.shape[1:], dtype=complex)
        padded[self._slots] = x
        y = sfft.ifft(self._h_hat @ sfft.fft(padded, axis=0), axis=0)[self._slots]
        return y + self._diag * x

    def norm_bound(self) -> float:
        """Upper bound on the operator norm of the truncated Floquet matrix."""
        cfg = self.cfg
        n_max = cfg.truncation.n_max
        orders = np.arange(-2 * n_max, 2 * n_max + 1)
        coeffs = unit_cell_coefficients(orders, self.t0, cfg)
        potential = np.abs(coeffs).sum()
        kinetic = kinetic_diagonal(self.kappa, cfg).max()
        return float(kinetic + n_max * cfg.omega + potential)


@dataclass(frozen=True)
class FloquetPowerState:
    """Matrix elements ``<<mu n| H_f^p |nu 0>>`` stored as ``tensor[n + n_max, mu, nu]``."""

    order: int
    tensor: np.ndarray


def initial_power_state(cfg: ValidatedConfig) -> FloquetPowerState:
    tensor = np.zeros((cfg.n_orders, cfg.dim, cfg.dim), dtype=complex)
    tensor[cfg.truncation.n_max] = np.eye(cfg.dim)
    return FloquetPowerState(0, tensor)


def boundary_fraction(tensor: np.ndarray) -> float:
    """Share of the squared norm carried by the outermost Fourier orders."""
    total = np.vdot(tensor, tensor).real
    if total == 0.0:
        return 0.0
    edge = np.vdot(tensor[0], tensor[0]).real + np.vdot(tensor[-1], tensor[-1]).real
    return float(edge / total)


def floquet_power_step(
    prev: FloquetPowerState,
    kappa: float,
    t0: float,
    cfg: ValidatedConfig,
    *,
    operator: FloquetOperator | None = None,
    boundary_tol: float | None = None,
) -> FloquetPowerState:
    """Raise the power by one: contract ``H_f`` with the previous state over ``(mu', n')``."""
    op = operator or FloquetOperator(kappa, t0, cfg)
    tensor = op.apply(prev.tensor)
    if boundary_tol is not None and boundary_fraction(tensor) > boundary_tol:
        warnings.warn(
            f"power {prev.order + 1}: {boundary_fraction(tensor):.2e} of the weight sits at |n| = n_max",
            TruncationWarning,
            stacklevel=2,
        )
    return FloquetPowerState(prev.order + 1, tensor)


def auto_order(operator: FloquetOperator, dt: float, tol: float) -> int:
    """Smallest order ``p`` with ``(r^p / p!) < tol`` for ``r = dt * ||H_f||``."""
    r = dt * operator.norm_bound()
    log_term, p = 0.0, 0
    while True:
        p += 1
        log_term += math.log(r) - math.log(p)
        if p > r and log_term < math.log(tol):
            return p
        if p >= MAX_AUTO_ORDER:
            raise ConvergenceError(f"series needs more than {MAX_AUTO_ORDER} orders (dt*|H_f| = {r:.3g})")


def short_time_generator(
    kappa: float,
    cfg: ValidatedConfig,
    t0: float = 0.0,
    *,
    method: str = "fft",
    p_max: int | None = None,
    check: bool = True,
) -> np.ndarray:
    """``G[n + n_max] = sum_p (-i dt)^p / p! <<. n| H_f^p |. 0>>``, shape ``(2 n_max + 1, M, M)``.

    Terms are generated by the power recursion with the Taylor weight folded
    in, which keeps intermediate numbers bounded.  With ``check`` the last
    retained term must be below ``tolerances.series``.
    """
    op = FloquetOperator(kappa, t0, cfg, method=method)
    dt = cfg.dt
    tol = cfg.tolerances.series
    order = cfg.truncation.p_max if p_max is None else p_max
    if order is None:
        order = auto_order(op, dt, tol)
    state = initial_power_state(cfg)
    term = state.tensor
    total = term.copy()
    last = float(np.abs(term).max())
    for p in range(1, order + 1):
        term = op.apply(term) * (-1j * dt / p)
        total += term
        last = float(np.abs(term).max())
    if check and order > 0 and last > tol:
        raise ConvergenceError(f"order {order} term is {last:.2e} > {tol:.1e}; raise p_max")
    frac = boundary_fraction(total - state.tensor)
    if frac > cfg.tolerances.boundary:
        warnings.warn(
            f"{frac:.2e} of the short-time propagator weight sits at |n| = n_max; raise n_max",
            TruncationWarning,
            stacklevel=2,
        )
    return total


def step_phases(cfg: ValidatedConfig, steps: np.ndarray) -> np.ndarray:
    """``exp(i n omega t_j)`` for grid times ``t_j = j dt``, shape ``(len(steps), 2 n_max + 1)``."""
    n_max = cfg.truncation.n_max
    n = np.arange(-n_max, n_max + 1)
    jn = np.outer(np.asarray(steps), n) % cfg.truncation.n_steps
    return np.exp(2j * np.pi * jn / cfg.truncation.n_steps)


def blocks_from_generator(generator: np.ndarray, cfg: ValidatedConfig) -> np.ndarray:
    """All short-time blocks ``U^j`` (``j = 1..N`` stored at ``j - 1``) for a generator."""
    n_steps = cfg.truncation.n_steps
    nn, m, _ = generator.shape
    phases = step_phases(cfg, np.arange(1, n_steps + 1))
    return (phases @ generator.reshape(nn, m * m)).reshape(n_steps, m, m)


def short_time_block(
    j: int,
    kappa: float,
    cfg: ValidatedConfig,
    t0_base: float = 0.0,
    *,
    generator: np.ndarray | None = None,
    p_max: int | None = None,
    check: bool = True,
) -> np.ndarray:
    """``U^{kappa,j} = U(t0_base + j dt, t0_base + (j-1) dt)`` for ``1 <= j <= N``."""
    if not 1 <= j <= cfg.truncation.n_steps:
        raise IndexOutOfRange(f"step index {j} outside 1..{cfg.truncation.n_steps}")
    if generator is None:
        generator = short_time_generator(kappa, cfg, t0_base, p_max=p_max, check=check)
    phases = step_phases(cfg, np.array([j]))[0]
    return np.tensordot(phases, generator, axes=(0, 0))


def ordered_product(blocks: np.ndarray, chronological: list[int] | np.ndarray) -> np.ndarray:
    """Product ``U^{j_last} ... U^{j_first}`` of 1-based block indices given in time order."""
    m = blocks.shape[1]
    out = np.eye(m, dtype=complex)
    for j in chronological:
        out = blocks[j - 1] @ out
    return out


def interval_steps(s1: int, s2: int, n_steps: int) -> list[int]:
    """1-based block indices covering grid times ``s1 dt -> s2 dt`` (cyclic, ``s2 >= s1``)."""
    if s2 < s1:
        raise ValueError("interval must run forward in time")
    return [((s - 1) % n_steps) + 1 for s in range(s1 + 1, s2 + 1)]


def interval_propagator(blocks: np.ndarray, s1: int, s2: int) -> np.ndarray:
    """``U(s2 dt, s1 dt)`` from base blocks; ``s2 - s1`` may exceed one period."""
    return ordered_product(blocks, interval_steps(s1, s2, blocks.shape[0]))


def start_step(t0: float, cfg: ValidatedConfig) -> int:
    """``j0``: the first block applied when starting at (grid-snapped) ``t0``."""
    return cfg.snap_time(t0) + 1


def period_propagator(t0: float, kappa: float, blocks: np.ndarray, cfg: ValidatedConfig) -> np.ndarray:
    """``U(t0 + T, t0)`` by cyclic reordering of base blocks built at initial time 0.

    ``t0`` is snapped to the nearest grid point ``s dt``; the product is
    ``(U^{j0-1} ... U^1)(U^N ... U^{j0})`` with ``j0 = s + 1``.
    """
    del kappa  # blocks already belong to one quasi-momentum
    n_steps = cfg.truncation.n_steps
    j0 = start_step(t0, cfg)
    order = list(range(j0, n_steps + 1)) + list(range(1, j0))
    return ordered_product(blocks, order)


def rebuilt_period_propagator(t0: float, kappa: float, cfg: ValidatedConfig, **kwargs) -> np.ndarray:
    """Slow path: rebuild every block with the potential shifted to initial time ``t0``."""
    generator = short_time_generator(kappa, cfg, t0, **kwargs)
    blocks = blocks_from_generator(generator, cfg)
    return ordered_product(blocks, range(1, cfg.truncation.n_steps + 1))


@dataclass
class BaseBlocks:
    """Short-time blocks of one quasi-momentum, built at initial time 0."""

    kappa: float
    generator: np.ndarray
    blocks: np.ndarray

    def period(self, t0: float, cfg: ValidatedConfig) -> np.ndarray:
        return period_propagator(t0, self.kappa, self.blocks, cfg)

    def interval(self, s1: int, s2: int) -> np.ndarray:
        return interval_propagator(self.blocks, s1, s2)


def base_blocks(kappa: float, cfg: ValidatedConfig, *, cache=None, **kwargs) -> BaseBlocks:
    """Generator and blocks for ``kappa``; reads/writes the propagator cache when given."""
    generator = None
    if cache is not None:
        generator = cache.load(cfg, kappa)
    if generator is None:
        generator = short_time_generator(kappa, cfg, 0.0, **kwargs)
        if cache is not None:
            cache.store(cfg, kappa, generator)
    return BaseBlocks(kappa, generator, blocks_from_generator(generator, cfg))


def oracle_propagator(
    t1: float,
    t2: float,
    kappa: float,
    cfg: ValidatedConfig,
    *,
    rtol: float = 1e-12,
    atol: float = 1e-13,
    method: str = "DOP853",
) -> np.ndarray:
    """Independent check: integrate the Schroedinger equation in the truncated basis.

    Uses the instantaneous potential matrix (no Fourier cutoff in time) and an
    adaptive Runge-Kutta stepper in the interaction picture of the kinetic
    term.
    """
    if not t2 > t1:
        raise ValueError("oracle_propagator needs t2 > t1")
    m = cfg.dim
    kin = kinetic_diagonal(kappa, cfg)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        w = y.reshape(m, m)
        ph = np.exp(1j * kin * (t - t1))
        v = instantaneous_matrix(t, cfg)
        return (-1j * ((ph[:, None] * v * ph.conj()[None, :]) @ w)).ravel()

    sol = solve_ivp(
        rhs, (t1, t2), np.eye(m, dtype=complex).ravel(), method=method, rtol=rtol, atol=atol
    )
    if not sol.success:
        raise StepperFailure(sol.message)
    w = sol.y[:, -1].reshape(m, m)
    return np.exp(-1j * kin * (t2 - t1))[:, None] * w
