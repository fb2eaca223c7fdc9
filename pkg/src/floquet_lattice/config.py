"""Lattice parameters, numerical truncations and basis indexing.

Units are fixed to hbar = m = 1.  A validated configuration is immutable and
carries a content hash that keys the propagator cache.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import BarrierOverlap, ConfigError, IndexOutOfRange, NonPositiveParameter, PhaseCountMismatch

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

CONFIG_FORMAT_VERSION = 1
CACHE_ENV_VAR = "FLOQUET_LATTICE_CACHE"
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class LatticeConfig:
    """Physical parameters of the driven barrier lattice.

    Barrier ``i`` (1-based, ``i = 1..n_p``) sits at ``(i - origin_barrier) * L``
    and is displaced by ``A cos(omega t + delta_i)``.  ``origin_barrier``
    defaults to the central barrier of the unit cell; ``origin_barrier = n_p``
    is the same lattice as equilibrium positions ``i * L``.
    """

    barrier_height: float
    barrier_width: float
    barrier_spacing: float
    drive_amplitude: float
    drive_frequency: float
    phases: tuple[float, ...]
    overlap_factor: float = 4.0
    origin_barrier: int | None = None
    packet_width: float | None = None

    @property
    def n_p(self) -> int:
        return len(self.phases)


@dataclass(frozen=True)
class TruncationConfig:
    """Basis and time-discretisation cutoffs.

    ``p_max=None`` picks the series order from a norm bound so that the last
    retained term is below ``Tolerances.series``.
    """

    mu_max: int
    n_max: int
    n_steps: int
    p_max: int | None = None
    interior_window: int = 0


@dataclass(frozen=True)
class Tolerances:
    series: float = 1e-12
    unitarity: float = 1e-8
    eigen: float = 1e-8
    shift: float = 1e-6
    degenerate: float = 1e-9
    boundary: float = 1e-8


PROFILES: dict[str, dict[str, Any]] = {
    "fast": {
        "truncation": TruncationConfig(mu_max=24, n_max=16, n_steps=128, interior_window=4),
        "tolerances": Tolerances(series=1e-10, unitarity=1e-6, eigen=1e-6),
    },
    "accurate": {
        "truncation": TruncationConfig(mu_max=48, n_max=24, n_steps=256, interior_window=8),
        "tolerances": Tolerances(),
    },
}


@dataclass(frozen=True)
class BasisIndex:
    """Bijection between matrix rows and plane-wave labels ``mu``."""

    mu_max: int

    @property
    def size(self) -> int:
        return 2 * self.mu_max + 1

    @property
    def mus(self) -> np.ndarray:
        return np.arange(-self.mu_max, self.mu_max + 1)

    def row_of(self, mu: int) -> int:
        if abs(mu) > self.mu_max:
            raise IndexOutOfRange(f"mu={mu} outside [-{self.mu_max}, {self.mu_max}]")
        return int(mu) + self.mu_max

    def mu_of(self, row: int) -> int:
        if not 0 <= row < self.size:
            raise IndexOutOfRange(f"row={row} outside [0, {self.size})")
        return int(row) - self.mu_max


@dataclass(frozen=True)
class ValidatedConfig:
    lattice: LatticeConfig
    truncation: TruncationConfig
    tolerances: Tolerances = field(default_factory=Tolerances)

    # derived quantities -------------------------------------------------
    @property
    def n_p(self) -> int:
        return self.lattice.n_p

    @property
    def omega(self) -> float:
        return self.lattice.drive_frequency

    @property
    def period(self) -> float:
        return TWO_PI / self.lattice.drive_frequency

    @property
    def dt(self) -> float:
        return self.period / self.truncation.n_steps

    @property
    def cell_length(self) -> float:
        return self.n_p * self.lattice.barrier_spacing

    @property
    def basis(self) -> BasisIndex:
        return BasisIndex(self.truncation.mu_max)

    @property
    def dim(self) -> int:
        return 2 * self.truncation.mu_max + 1

    @property
    def n_orders(self) -> int:
        return 2 * self.truncation.n_max + 1

    @property
    def origin_barrier(self) -> int:
        ob = self.lattice.origin_barrier
        return (self.n_p + 1) // 2 if ob is None else ob

    @property
    def barrier_positions(self) -> np.ndarray:
        i = np.arange(1, self.n_p + 1)
        return (i - self.origin_barrier) * self.lattice.barrier_spacing

    @property
    def brillouin_edge(self) -> float:
        return math.pi / self.cell_length

    def wavenumbers(self, kappa: float) -> np.ndarray:
        """k_mu(kappa) = 2 pi mu / (n_p L) + kappa for every basis row."""
        return TWO_PI * self.basis.mus / self.cell_length + kappa

    def interior_mask(self) -> np.ndarray:
        w = self.truncation.interior_window
        return np.abs(self.basis.mus) <= self.truncation.mu_max - w

    def snap_time(self, t0: float) -> int:
        """Index ``s`` of the grid point ``s * dt`` closest to ``t0`` (mod T)."""
        n = self.truncation.n_steps
        return int(round(t0 / self.dt)) % n

    def replace(self, **changes: Any) -> ValidatedConfig:
        """Copy with lattice or truncation fields changed, re-validated."""
        lat = {f.name: getattr(self.lattice, f.name) for f in dataclasses.fields(LatticeConfig)}
        tr = {f.name: getattr(self.truncation, f.name) for f in dataclasses.fields(TruncationConfig)}
        tol = self.tolerances
        for key, value in changes.items():
            if key in lat:
                lat[key] = value
            elif key in tr:
                tr[key] = value
            elif key == "tolerances":
                tol = value
            else:
                raise ConfigError(f"unknown field {key!r}")
        return validate(LatticeConfig(**lat), TruncationConfig(**tr), tol)

    @property
    def hash(self) -> str:
        return config_hash(self)

    def as_dict(self) -> dict[str, Any]:
        return {
            "lattice": dataclasses.asdict(self.lattice),
            "truncation": dataclasses.asdict(self.truncation),
        }


def _positive(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise NonPositiveParameter(f"{name} must be a positive finite number, got {value!r}")


def validate(
    cfg: LatticeConfig, trunc: TruncationConfig, tolerances: Tolerances | None = None
) -> ValidatedConfig:
    """Check invariants and return the canonical, hashable configuration."""
    _positive("barrier_height", cfg.barrier_height)
    _positive("barrier_width", cfg.barrier_width)
    _positive("barrier_spacing", cfg.barrier_spacing)
    _positive("drive_frequency", cfg.drive_frequency)
    _positive("overlap_factor", cfg.overlap_factor)
    if not (math.isfinite(cfg.drive_amplitude) and cfg.drive_amplitude >= 0):
        raise NonPositiveParameter(f"drive_amplitude must be >= 0, got {cfg.drive_amplitude!r}")
    if cfg.packet_width is not None:
        _positive("packet_width", cfg.packet_width)
    phases = tuple(float(p) for p in cfg.phases)
    if not phases:
        raise PhaseCountMismatch("phases must contain at least one entry (n_p >= 1)")
    if not all(math.isfinite(p) for p in phases):
        raise ConfigError("phases must be finite")
    # canonical representative in [0, 2 pi); values within 1e-12 of 2 pi map to 0
    canon = []
    for p in phases:
        r = math.fmod(p, TWO_PI)
        if r < 0:
            r += TWO_PI
        if TWO_PI - r < 1e-12:
            r = 0.0
        canon.append(r)
    n_p = len(canon)
    if cfg.origin_barrier is not None and not 1 <= cfg.origin_barrier <= n_p:
        raise ConfigError(f"origin_barrier must be in 1..{n_p}")
    gap = cfg.barrier_spacing - 2.0 * cfg.drive_amplitude
    if gap < cfg.overlap_factor * cfg.barrier_width:
        raise BarrierOverlap(
            f"L - 2A = {gap:g} < c * width = {cfg.overlap_factor * cfg.barrier_width:g}"
        )

    for name in ("mu_max", "n_max", "n_steps"):
        value = getattr(trunc, name)
        if not isinstance(value, (int, np.integer)) or value < 1:
            raise NonPositiveParameter(f"{name} must be a positive integer, got {value!r}")
    if trunc.p_max is not None and (not isinstance(trunc.p_max, (int, np.integer)) or trunc.p_max < 0):
        raise NonPositiveParameter(f"p_max must be a non-negative integer or None, got {trunc.p_max!r}")
    if not 0 <= trunc.interior_window < trunc.mu_max:
        raise ConfigError("interior_window must satisfy 0 <= interior_window < mu_max")

    lattice = dataclasses.replace(
        cfg,
        barrier_height=float(cfg.barrier_height),
        barrier_width=float(cfg.barrier_width),
        barrier_spacing=float(cfg.barrier_spacing),
        drive_amplitude=float(cfg.drive_amplitude),
        drive_frequency=float(cfg.drive_frequency),
        overlap_factor=float(cfg.overlap_factor),
        phases=tuple(canon),
        packet_width=None if cfg.packet_width is None else float(cfg.packet_width),
    )
    truncation = TruncationConfig(
        mu_max=int(trunc.mu_max),
        n_max=int(trunc.n_max),
        n_steps=int(trunc.n_steps),
        p_max=None if trunc.p_max is None else int(trunc.p_max),
        interior_window=int(trunc.interior_window),
    )
    return ValidatedConfig(lattice, truncation, tolerances or Tolerances())


def config_hash(cfg: ValidatedConfig) -> str:
    payload = {"version": CONFIG_FORMAT_VERSION, **cfg.as_dict()}
    text = json.dumps(payload, sort_keys=True, default=repr)
    # float repr is exact and platform independent
    return hashlib.sha256(text.encode()).hexdigest()[:16]


_PI_EXPR = re.compile(
    r"^\s*(?P<sign>[+-])?\s*(?P<coef>\d+(?:\.\d*)?|\.\d+)?\s*\*?\s*pi\s*(?:/\s*(?P<den>\d+(?:\.\d*)?))?\s*$"
)


def parse_angle(value: float | int | str) -> float:
    """Accept a number or a simple multiple of pi such as ``"2pi/3"`` or ``"0.1*pi"``."""
    if isinstance(value, (int, float)):
        return float(value)
    m = _PI_EXPR.match(value)
    if m is None:
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"cannot parse angle {value!r}") from None
    coef = float(m.group("coef")) if m.group("coef") else 1.0
    den = float(m.group("den")) if m.group("den") else 1.0
    sign = -1.0 if m.group("sign") == "-" else 1.0
    return sign * coef * math.pi / den


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "floquet_lattice"


def config_from_mapping(
    data: dict[str, Any], profile: str = "accurate"
) -> ValidatedConfig:
    """Build a configuration from the parsed ``[lattice]``/``[truncation]`` tables."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown tolerance profile {profile!r}")
    if "lattice" not in data:
        raise ConfigError("missing [lattice] table")
    lat = dict(data["lattice"])
    known = {f.name for f in dataclasses.fields(LatticeConfig)}
    unknown = set(lat) - known
    if unknown:
        raise ConfigError(f"unknown lattice keys: {sorted(unknown)}")
    if "phases" not in lat:
        raise ConfigError("lattice.phases is required")
    lat["phases"] = tuple(parse_angle(p) for p in lat["phases"])
    try:
        lattice = LatticeConfig(**lat)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

    base = PROFILES[profile]["truncation"]
    tr = dataclasses.asdict(base)
    tr_in = dict(data.get("truncation", {}))
    unknown = set(tr_in) - set(tr)
    if unknown:
        raise ConfigError(f"unknown truncation keys: {sorted(unknown)}")
    tr.update(tr_in)
    return validate(lattice, TruncationConfig(**tr), PROFILES[profile]["tolerances"])


def load_config(path: str | Path, profile: str = "accurate") -> ValidatedConfig:
    """Read a TOML configuration file (see README for the schema)."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(data, profile)


def fig2_lattice(phases: tuple[float, ...] = (0.0, 0.0, 0.0), **overrides: Any) -> LatticeConfig:
    """Reference barrier lattice: L=10, V0=1, omega=1, A=1, width 0.5."""
    params = dict(
        barrier_height=1.0,
        barrier_width=0.5,
        barrier_spacing=10.0,
        drive_amplitude=1.0,
        drive_frequency=1.0,
        phases=tuple(phases),
    )
    params.update(overrides)
    return LatticeConfig(**params)
