"""On-disk cache of short-time generators, one binary file per (config, kappa).

File layout (little endian)::

    magic      4s   b"FLQC"
    version    u16
    reserved   u16
    mu_max     u32
    n_max      u32
    n_steps    u32
    kappa      f64
    key        32s  ascii cache key (config hash + series tolerance)
    checksum   32s  sha256 of the payload
    payload    complex128[(2 n_max + 1), (2 mu_max + 1), (2 mu_max + 1)], C order

The N short-time blocks are a fixed linear map of the stored generator, so
the file stands in for all of them at a fraction of the size.
"""

from __future__ import annotations

import hashlib
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ValidatedConfig, default_cache_dir
from .errors import CacheCorruption

log = logging.getLogger(__name__)

MAGIC = b"FLQC"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIId32s32s")


def cache_key(cfg: ValidatedConfig) -> str:
    text = f"{cfg.hash}:{cfg.tolerances.series!r}"
    return hashlib.sha256(text.encode()).hexdigest()[:32]


def _kappa_tag(kappa: float) -> str:
    return float(kappa).hex().replace("+", "p").replace("-", "m").replace(".", "_")


@dataclass
class PropagatorCache:
    root: Path = field(default_factory=default_cache_dir)
    hits: int = 0
    misses: int = 0
    rebuilds: int = 0

    def __post_init__(self) -> None:
        self.root = Path(self.root)

    def path_for(self, cfg: ValidatedConfig, kappa: float) -> Path:
        return self.root / f"{cache_key(cfg)}_{_kappa_tag(kappa)}.flq"

    def load(self, cfg: ValidatedConfig, kappa: float) -> np.ndarray | None:
        path = self.path_for(cfg, kappa)
        if not path.exists():
            self.misses += 1
            return None
        try:
            generator = read_generator(path, cfg, kappa)
        except CacheCorruption as exc:
            log.warning("discarding corrupt cache file %s: %s", path, exc)
            self.rebuilds += 1
            path.unlink(missing_ok=True)
            self.misses += 1
            return None
        self.hits += 1
        return generator

    def store(self, cfg: ValidatedConfig, kappa: float, generator: np.ndarray) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path_for(cfg, kappa)
        write_generator(path, cfg, kappa, generator)
        return path

    def entries(self) -> list[dict]:
        if not self.root.exists():
            return []
        return [read_header(p) | {"path": str(p), "bytes": p.stat().st_size} for p in sorted(self.root.glob("*.flq"))]

    def clear(self) -> int:
        count = 0
        if self.root.exists():
            for p in self.root.glob("*.flq"):
                p.unlink()
                count += 1
        return count


def write_generator(path: Path, cfg: ValidatedConfig, kappa: float, generator: np.ndarray) -> None:
    """Write atomically; an existing file for the same key is left untouched."""
    payload = np.ascontiguousarray(generator, dtype="<c16").tobytes()
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        0,
        cfg.truncation.mu_max,
        cfg.truncation.n_max,
        cfg.truncation.n_steps,
        float(kappa),
        cache_key(cfg).encode(),
        hashlib.sha256(payload).digest(),
    )
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        try:
            os.link(tmp, path)  # exclusive creation: first writer wins
        except FileExistsError:
            pass
    finally:
        os.unlink(tmp)


def read_header(path: Path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise CacheCorruption("truncated header")
    magic, version, _, mu_max, n_max, n_steps, kappa, key, checksum = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise CacheCorruption("bad magic")
    return {
        "version": version,
        "mu_max": mu_max,
        "n_max": n_max,
        "n_steps": n_steps,
        "kappa": kappa,
        "key": key.decode(errors="replace"),
        "checksum": checksum.hex(),
    }


def read_generator(path: Path, cfg: ValidatedConfig, kappa: float) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise CacheCorruption("truncated header")
    magic, version, _, mu_max, n_max, n_steps, kap, key, checksum = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise CacheCorruption(f"unsupported file (magic={magic!r}, version={version})")
    tr = cfg.truncation
    if (mu_max, n_max, n_steps) != (tr.mu_max, tr.n_max, tr.n_steps) or kap != float(kappa):
        raise CacheCorruption("header does not match the requested configuration")
    if key.decode(errors="replace") != cache_key(cfg):
        raise CacheCorruption("cache key mismatch")
    payload = raw[_HEADER.size :]
    if hashlib.sha256(payload).digest() != checksum:
        raise CacheCorruption("checksum mismatch")
    shape = (2 * n_max + 1, 2 * mu_max + 1, 2 * mu_max + 1)
    if len(payload) != 16 * int(np.prod(shape)):
        raise CacheCorruption("payload size mismatch")
    return np.frombuffer(payload, dtype="<c16").reshape(shape).astype(complex)
