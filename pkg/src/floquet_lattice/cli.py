"""Command-line front end: parameter sweeps, symmetry verification, cache upkeep.

Examples::

    floquet-lattice run --config lattice.toml --sweep delta2.toml --output-dir out
    floquet-lattice verify --config lattice.toml
    floquet-lattice cache inspect
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .cache import PropagatorCache
from .config import ValidatedConfig, config_from_mapping, default_cache_dir, parse_angle, tomllib
from .errors import CacheCorruption, ConfigError, IOFailure, NoApproach
from .modes import band_scan, class_crossings, kappa_grid, pair_vectors, quasienergy_distance, tracked_gap
from .observables import (
    compute_slices,
    currents_from_slices,
    husimi,
    launch_steps,
)
from .symmetry import lint_symmetry_shifts, modes_with_trajectories, verify_config

log = logging.getLogger("floquet_lattice")

OUTPUTS = ("spectrum", "currents", "husimi", "symmetry-report")


@dataclass
class SweepSpec:
    """One swept parameter and the datasets to produce at every value.

    ``parameter`` is ``delta<i>`` (1-based barrier phase), ``drive_amplitude``
    (alias ``A``), ``t0`` or ``kappa_points``.
    """

    parameter: str | None
    values: list[float]
    outputs: list[str]
    crossing_window: tuple[float, float] | None = None
    refine_gaps: bool = False
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.values:
            raise ConfigError("sweep grid must not be empty")
        bad = set(self.outputs) - set(OUTPUTS)
        if bad:
            raise ConfigError(f"unknown outputs {sorted(bad)}; choose from {OUTPUTS}")
        if self.parameter == "A":
            self.parameter = "drive_amplitude"
        p = self.parameter
        if p is not None and p not in ("drive_amplitude", "t0", "kappa_points") and not (
            p.startswith("delta") and p[5:].isdigit()
        ):
            raise ConfigError(f"cannot sweep {p!r}")


def _grid(spec: dict) -> list[float]:
    if "values" in spec:
        return [parse_angle(v) for v in spec["values"]]
    if "range" in spec:
        r = spec["range"]
        start, stop, num = parse_angle(r["start"]), parse_angle(r["stop"]), int(r["num"])
        return list(np.linspace(start, stop, num, endpoint=bool(r.get("endpoint", True))))
    raise ConfigError("sweep needs 'values' or 'range'")


def load_sweep(path: str | Path | None) -> SweepSpec:
    if path is None:
        return SweepSpec(None, [math.nan], ["spectrum"])
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read sweep {path}: {exc}") from None
    sw = dict(data.get("sweep", {}))
    window = sw.get("crossing_window")
    return SweepSpec(
        parameter=sw.get("parameter"),
        values=_grid(sw) if sw.get("parameter") else [math.nan],
        outputs=list(sw.get("outputs", ["spectrum"])),
        crossing_window=tuple(float(w) for w in window) if window else None,
        refine_gaps=bool(sw.get("refine_gaps", False)),
        options=dict(data.get("observables", {})),
    )


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: dict[str, Any], columns: list[str], rows) -> str:
    """Write ``# key: value`` metadata lines then a CSV table; returns the sha256 of the file."""
    try:
        with open(path, "w", newline="") as fh:
            for k, v in header.items():
                fh.write(f"# {k}: {_fmt(v)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _header(cfg: ValidatedConfig, profile: str, extra: dict | None = None) -> dict[str, Any]:
    tr = cfg.truncation
    head = {
        "tool": f"floquet_lattice {__version__}",
        "config_hash": cfg.hash,
        "profile": profile,
        "phases": " ".join(repr(p) for p in cfg.lattice.phases),
        "drive_amplitude": cfg.lattice.drive_amplitude,
        "mu_max": tr.mu_max,
        "n_max": tr.n_max,
        "n_steps": tr.n_steps,
        "p_max": "auto" if tr.p_max is None else tr.p_max,
    }
    head.update(extra or {})
    return head


# ---------------------------------------------------------------------------
# run


@dataclass
class RunContext:
    base: ValidatedConfig
    profile: str
    out: Path
    cache: PropagatorCache
    workers: int
    kappa_points: int
    t0_points: int
    files: dict[str, str] = field(default_factory=dict)
    points: list[dict] = field(default_factory=list)
    cache_hits: int = 0
    cache_misses: int = 0


def _point_config(ctx: RunContext, parameter: str | None, value: float) -> tuple[ValidatedConfig, float, int]:
    cfg, t0, nk = ctx.base, 0.0, ctx.kappa_points
    if parameter is None:
        return cfg, t0, nk
    if parameter.startswith("delta"):
        i = int(parameter[5:])
        phases = list(cfg.lattice.phases)
        if not 1 <= i <= len(phases):
            raise ConfigError(f"{parameter} does not exist for n_p = {len(phases)}")
        phases[i - 1] = value
        cfg = cfg.replace(phases=tuple(phases))
    elif parameter == "drive_amplitude":
        cfg = cfg.replace(drive_amplitude=value)
    elif parameter == "t0":
        t0 = cfg.snap_time(value) * cfg.dt
    elif parameter == "kappa_points":
        nk = int(value)
        if nk < 3:
            raise ConfigError("kappa_points must be at least 3")
    return cfg, t0, nk


def _count_cache(ctx: RunContext, cfg: ValidatedConfig, kappas) -> None:
    present = sum(ctx.cache.path_for(cfg, float(k)).exists() for k in kappas)
    ctx.cache_hits += present
    ctx.cache_misses += len(kappas) - present


def _spectrum_rows(sp):
    idx = sp.band_indices()
    for i, k in enumerate(sp.kappas):
        for b in range(idx.shape[0]):
            a = idx[b, i]
            yield (k, b, sp.quasienergies[i, a], int(sp.shift_classes[i, a]), sp.residuals[i, a])


def run(ctx: RunContext, sweep: SweepSpec) -> dict:
    """Evaluate every sweep point and write datasets plus ``manifest.json``."""
    start = time.perf_counter()
    try:
        ctx.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create {ctx.out}: {exc}") from exc
    opts = sweep.options
    sigma_w = float(opts.get("packet_width", ctx.base.lattice.packet_width or 10.0))
    jbar_rows, gap_rows = [], []
    reference = None  # crossings of the first sweep point, tracked through the others

    for n, value in enumerate(sweep.values):
        cfg, t0, nk = _point_config(ctx, sweep.parameter, value)
        tag = f"{n:03d}"
        label = {} if sweep.parameter is None else {sweep.parameter: value}
        head = _header(cfg, ctx.profile, {**label, "t0": t0, "kappa_points": nk})
        kappas = kappa_grid(nk, cfg)
        _count_cache(ctx, cfg, kappas)
        log.info("point %s %s hash=%s", tag, label, cfg.hash)
        for msg in lint_symmetry_shifts(cfg):
            log.warning(msg)
        point = {"index": n, "config_hash": cfg.hash, **label, "t0": t0, "kappa_points": nk}

        if "spectrum" in sweep.outputs:
            sp = band_scan(kappas, t0, cfg, cache=ctx.cache, workers=ctx.workers)
            name = f"spectrum_{tag}.csv"
            ctx.files[name] = write_csv(
                ctx.out / name,
                head,
                ["kappa", "band_index", "quasienergy", "shift_class", "eigvec_residual"],
                _spectrum_rows(sp),
            )
            if reference is None and sweep.crossing_window is not None:
                crossings = class_crossings(sp, sweep.crossing_window)
                reference = [(c, pair_vectors(sp, c.bands, c.index), sp.kappas) for c in crossings]
            for c, ref, kref in reference or []:
                i = c.index
                lo, hi = kref[max(i - 2, 0)], kref[min(i + 3, len(kref) - 1)]
                gap_rows.append((value, *_gap_entry(sp, ref, (lo, hi), cfg, ctx, sweep.refine_gaps, c)))

        if "currents" in sweep.outputs or "husimi" in sweep.outputs:
            steps = launch_steps(ctx.t0_points, cfg)
        if "currents" in sweep.outputs:
            slices = compute_slices(kappas, cfg, steps, sigma_w, cache=ctx.cache, workers=ctx.workers)
            cur = currents_from_slices(slices, cfg)
            name = f"currents_{tag}.csv"
            ctx.files[name] = write_csv(
                ctx.out / name,
                {**head, "packet_width": sigma_w, "Jbar": cur.mean},
                ["t0", "J"],
                zip(cur.t0, cur.current),
            )
            jbar_rows.append((value, cur.mean))
            point["Jbar"] = cur.mean

        if "husimi" in sweep.outputs:
            name = f"husimi_{tag}.csv"
            ctx.files[name] = _write_husimi(ctx, cfg, head, opts, name)

        if "symmetry-report" in sweep.outputs:
            name = f"symmetry_{tag}.jsonl"
            kv = float(opts.get("verify_kappa", 0.25 * cfg.brillouin_edge))
            _count_cache(ctx, cfg, [kv, -kv])
            reports = verify_config(cfg, kv, cache=ctx.cache)
            text = "".join(r.to_json() + "\n" for r in reports)
            (ctx.out / name).write_text(text)
            ctx.files[name] = hashlib.sha256(text.encode()).hexdigest()
        ctx.points.append(point)

    if jbar_rows and sweep.parameter is not None:
        ctx.files["jbar.csv"] = write_csv(
            ctx.out / "jbar.csv",
            _header(ctx.base, ctx.profile, {"swept": sweep.parameter, "packet_width": sigma_w}),
            [sweep.parameter, "Jbar"],
            jbar_rows,
        )
    if gap_rows:
        ctx.files["crossing_gaps.csv"] = write_csv(
            ctx.out / "crossing_gaps.csv",
            _header(ctx.base, ctx.profile, {"swept": sweep.parameter or "none", "refined": sweep.refine_gaps}),
            [sweep.parameter or "point", "band_a", "band_b", "class_a", "class_b", "kappa", "quasienergy", "gap"],
            gap_rows,
        )

    manifest = {
        "tool": "floquet_lattice",
        "version": __version__,
        "python": platform.python_version(),
        "profile": ctx.profile,
        "base_config_hash": ctx.base.hash,
        "truncation": dataclasses.asdict(ctx.base.truncation),
        "sweep": {"parameter": sweep.parameter, "values": [float(v) for v in sweep.values], "outputs": sweep.outputs},
        "points": ctx.points,
        "files": ctx.files,
        "cache": {"dir": str(ctx.cache.root), "hits": ctx.cache_hits, "misses": ctx.cache_misses},
        "wall_time_s": time.perf_counter() - start,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (ctx.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    log.info("cache hits=%d misses=%d", ctx.cache_hits, ctx.cache_misses)
    return manifest


def _gap_entry(sp, ref, window, cfg, ctx, refine, crossing):
    a, b = crossing.bands
    qa, qb = crossing.classes
    if refine:
        try:
            g = tracked_gap(ref, window, cfg, t0=sp.t0, cache=ctx.cache)
            return a, b, qa, qb, g.kappa, g.quasienergy, g.gap
        except NoApproach:
            return a, b, qa, qb, math.nan, math.nan, math.nan
    # grid estimate from the stored eigenvectors
    q, _ = np.linalg.qr(ref)
    best = (math.inf, math.nan, math.nan)
    for i, k in enumerate(sp.kappas):
        if not window[0] <= k <= window[1]:
            continue
        w = np.sum(np.abs(q.conj().T @ sp.vectors[i]) ** 2, axis=0)
        i1, i2 = np.argsort(w)[-2:]
        e1, e2 = sp.quasienergies[i, i1], sp.quasienergies[i, i2]
        d = float(quasienergy_distance(e1, e2, cfg.omega))
        if d < best[0]:
            best = (d, float(k), 0.5 * (e1 + e2))
    return a, b, qa, qb, best[1], best[2], best[0]


def _write_husimi(ctx: RunContext, cfg: ValidatedConfig, head: dict, opts: dict, name: str) -> str:
    kappa = float(opts.get("husimi_kappa", 0.0))
    mode_index = int(opts.get("husimi_mode", 0))
    sigma_h = float(opts.get("husimi_width", 0.5))
    t = float(opts.get("husimi_time", 0.0))
    p_max = float(opts.get("husimi_pmax", 2.0))
    nx, npts = int(opts.get("husimi_nx", 121)), int(opts.get("husimi_np", 121))
    modes = modes_with_trajectories(kappa, cfg, cache=ctx.cache)
    # modes closest to the centre of the basis come first
    mus = cfg.basis.mus
    order = sorted(range(len(modes)), key=lambda j: (float(np.sum(mus**2 * np.abs(modes[j].vector) ** 2)), j))
    mode = modes[order[mode_index]]
    a = cfg.cell_length
    x = np.linspace(-0.5 * a, 0.5 * a, nx)
    p = np.linspace(-p_max, p_max, npts)
    grid = husimi(mode, x, p, sigma_h, cfg, t=t)
    rows = ((xi, pj, grid.values[i, j]) for i, xi in enumerate(x) for j, pj in enumerate(p))
    extra = {"husimi_kappa": kappa, "husimi_mode": mode_index, "quasienergy": mode.quasienergy, "sigma_h": sigma_h, "t": t}
    return write_csv(ctx.out / name, {**head, **extra}, ["x", "p", "Q"], rows)


# ---------------------------------------------------------------------------
# entry point


def _load_config(path: str, profile: str) -> tuple[ValidatedConfig, dict]:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(data, profile), dict(data.get("observables", {}))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="floquet-lattice", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="lattice TOML file")
        p.add_argument("--cache-dir", default=None, help="propagator cache (default: $FLOQUET_LATTICE_CACHE or ~/.cache)")
        p.add_argument("--tolerance-profile", choices=("fast", "accurate"), default="accurate")
        p.add_argument("--workers", type=int, default=1, help="processes over quasi-momenta")

    pr = sub.add_parser("run", help="evaluate a sweep and write CSV datasets")
    common(pr)
    pr.add_argument("--sweep", default=None, help="sweep TOML file (default: one spectrum)")
    pr.add_argument("--kappa-points", type=int, default=64)
    pr.add_argument("--t0-points", type=int, default=32)
    pr.add_argument("--output-dir", default="floquet_out")

    pv = sub.add_parser("verify", help="Hamiltonian symmetry scan plus all symmetry predicates")
    common(pv)
    pv.add_argument("--kappa", type=float, default=None, help="quasi-momentum for the checks")
    pv.add_argument("--output-dir", default=None, help="also write symmetry_report.jsonl here")

    pc = sub.add_parser("cache", help="inspect or clear the propagator cache")
    pc.add_argument("action", choices=("inspect", "clear"))
    pc.add_argument("--cache-dir", default=None)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cache = PropagatorCache(Path(args.cache_dir) if args.cache_dir else default_cache_dir())
    try:
        if args.command == "cache":
            if args.action == "clear":
                print(f"removed {cache.clear()} files from {cache.root}")
            else:
                entries = cache.entries()
                for e in entries:
                    print(json.dumps(e, sort_keys=True))
                print(f"{len(entries)} entries, {sum(e['bytes'] for e in entries)} bytes in {cache.root}")
            return 0

        cfg, obs = _load_config(args.config, args.tolerance_profile)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")

        if args.command == "verify":
            kappa = args.kappa if args.kappa is not None else 0.25 * cfg.brillouin_edge
            for msg in lint_symmetry_shifts(cfg):
                log.warning(msg)
            reports = verify_config(cfg, kappa, cache=cache)
            lines = [r.to_json() for r in reports]
            print("\n".join(lines))
            if args.output_dir:
                out = Path(args.output_dir)
                out.mkdir(parents=True, exist_ok=True)
                (out / "symmetry_report.jsonl").write_text("\n".join(lines) + "\n")
            failed = [r.tag for r in reports if r.expected and not r.passed]
            if failed:
                print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
                return 1
            return 0

        sweep = load_sweep(args.sweep)
        sweep.options = {**obs, **sweep.options}
        if args.kappa_points < 3:
            raise ConfigError("--kappa-points must be at least 3")
        ctx = RunContext(
            cfg, args.tolerance_profile, Path(args.output_dir), cache, args.workers, args.kappa_points, args.t0_points
        )
        manifest = run(ctx, sweep)
        print(f"wrote {len(manifest['files'])} files to {ctx.out}")
        return 0
    except (ConfigError, CacheCorruption, IOFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
