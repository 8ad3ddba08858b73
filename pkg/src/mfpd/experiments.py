"""Canned experiment pipelines: the 2D disk reconstruction and the frequency-count sweep.

Both read an :class:`ExperimentConfig` built from experiment defaults, an
optional flat ``key = value`` file and overrides (later sources win).
Written CSV and VTK files depend only on the configuration, so reruns are
byte-identical; timings are returned in the reports but never written.
"""

from __future__ import annotations

import contextlib
import dataclasses
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import io
from .coefficients import CoefficientPair, build_coefficients, four_ball_inclusions, parse_coefficients
from .errors import MfpdError, ValidationError
from .frequency_selection import PROPER, AdmissibilityThresholds, evaluate_conditions, select_frequency_set
from .helmholtz import HelmholtzOperator
from .illumination import parse_illumination
from .mesh import Mesh2D, gen_disk_mesh, save_mesh, submesh
from .power_density import export_power_density, synthesize_from_operator
from .reconstruction import ReconstructionOutput, error_norms, reconstruct

log = logging.getLogger(__name__)

PAPER_2D = "paper-2d"
FREQUENCY_COUNT = "frequency-count"
N_COMBINATIONS = 3**8

# config file key -> dataclass field
KEYS = {
    "mesh.h": "mesh_h",
    "mesh.radius": "mesh_radius",
    "omega_prime.radius": "omega_prime_radius",
    "freqs": "freqs",
    "illuminations": "illuminations",
    "thresholds.p": "threshold_p",
    "thresholds.r": "threshold_r",
    "thresholds.s": "threshold_s",
    "denom_threshold": "denom_threshold",
    "seed": "seed",
    "sample_count": "sample_count",
    "out_dir": "out_dir",
    "coefficients": "coefficients",
    "balls.width": "ball_width",
    "max_l": "max_l",
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _strings(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


_PARSERS = {
    "mesh_h": float,
    "mesh_radius": float,
    "omega_prime_radius": float,
    "freqs": _floats,
    "illuminations": _strings,
    "threshold_p": float,
    "threshold_r": float,
    "threshold_s": float,
    "denom_threshold": float,
    "seed": int,
    "sample_count": int,
    "out_dir": str,
    "coefficients": str,
    "ball_width": float,
    "max_l": int,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = PAPER_2D
    mesh_h: float = 0.05
    mesh_radius: float = 1.0
    omega_prime_radius: float = 0.8
    freqs: tuple[float, ...] = (1.0, 3.0, 7.0)
    illuminations: tuple[str, ...] = ("x1+2", "x2+2")
    threshold_p: float = 1e-3
    threshold_r: float = 1e-3
    threshold_s: float = 1e-3
    denom_threshold: float = 1e-2
    seed: int = 0
    sample_count: int = 100
    out_dir: str = "runs/paper-2d"
    coefficients: str = "paper-2d"
    ball_width: float = 0.02
    max_l: int = 10

    @property
    def thresholds(self) -> AdmissibilityThresholds:
        return AdmissibilityThresholds(self.threshold_p, self.threshold_r, self.threshold_s)

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in (PAPER_2D, FREQUENCY_COUNT):
            raise ValidationError(f"unknown experiment {self.experiment!r}")
        for name in ("mesh_h", "mesh_radius", "omega_prime_radius", "ball_width"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be positive and finite, got {v}")
        if self.mesh_h >= self.mesh_radius:
            raise ValidationError("mesh.h must be smaller than mesh.radius")
        if self.omega_prime_radius >= self.mesh_radius:
            raise ValidationError(
                f"omega_prime.radius {self.omega_prime_radius} must be below mesh.radius {self.mesh_radius}"
                " (the measurement disk must lie inside the domain)"
            )
        if not self.freqs or not all(math.isfinite(k) and k >= 0 for k in self.freqs):
            raise ValidationError("freqs must be a nonempty list of nonnegative numbers")
        if len(set(self.freqs)) != len(self.freqs):
            raise ValidationError("freqs must be distinct")
        if not self.illuminations:
            raise ValidationError("illuminations must not be empty")
        for src in self.illuminations:
            parse_illumination(src)
        self.thresholds
        if not (math.isfinite(self.denom_threshold) and self.denom_threshold >= 0):
            raise ValidationError("denom_threshold must be nonnegative")
        if self.seed < 0:
            raise ValidationError("seed must be nonnegative")
        if not 1 <= self.sample_count <= N_COMBINATIONS:
            raise ValidationError(f"sample_count must be in [1, {N_COMBINATIONS}], got {self.sample_count}")
        if self.max_l < 1:
            raise ValidationError("max_l must be at least 1")
        return self

    def with_values(self, mapping: dict) -> "ExperimentConfig":
        """Copy with config-file style ``key -> string`` entries applied."""
        changes = {}
        for key, raw in mapping.items():
            name = KEYS.get(key)
            if name is None:
                raise ValidationError(f"unknown config key {key!r} (known: {', '.join(KEYS)})")
            try:
                changes[name] = _PARSERS[name](raw) if isinstance(raw, str) else raw
            except ValueError:
                raise ValidationError(f"config key {key!r}: cannot parse {raw!r}") from None
        return dataclasses.replace(self, **changes)

    def as_mapping(self) -> dict[str, str]:
        """Resolved config as config-file entries (full precision)."""
        out = {}
        for key, name in KEYS.items():
            v = getattr(self, name)
            if isinstance(v, tuple):
                out[key] = ", ".join(io.fmt(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                out[key] = io.fmt(v)
            else:
                out[key] = str(v)
        return out

    def echo(self) -> str:
        lines = [f"# experiment = {self.experiment}"]
        lines += [f"{k} = {v}" for k, v in self.as_mapping().items()]
        return "\n".join(lines) + "\n"


def default_config(experiment: str) -> ExperimentConfig:
    if experiment == PAPER_2D:
        return ExperimentConfig()
    if experiment == FREQUENCY_COUNT:
        return ExperimentConfig(
            experiment=FREQUENCY_COUNT,
            mesh_h=0.1,
            illuminations=("1", "x1", "x2"),
            out_dir="runs/frequency-count",
        )
    raise ValidationError(f"unknown experiment {experiment!r}")


def load_config(experiment: str, path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the config file, then ``overrides``; validated."""
    cfg = default_config(experiment)
    if path is not None:
        cfg = cfg.with_values(io.read_config(path))
    if overrides:
        cfg = cfg.with_values(overrides)
    return cfg.validate()


@contextlib.contextmanager
def stage(name: str):
    """Prefix package errors raised inside with the stage name."""
    try:
        yield
    except MfpdError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
            exc.args = (f"stage '{name}': {exc}",) + exc.args[1:]
        raise


def energy_count(n_freqs: int, n_illuminations: int) -> int:
    """Number of distinct scalar power densities, ``e`` and ``E`` per unordered pair."""
    return n_freqs * n_illuminations * (n_illuminations + 1)


@dataclass(eq=False)
class Paper2DReport:
    config: ExperimentConfig
    a_error: float
    q_error: float
    proper: bool
    n_energies: int
    runtime: float
    recon: ReconstructionOutput
    truth: CoefficientPair
    summary: dict
    files: list[str] = field(default_factory=list)


def run_paper_2d(config: ExperimentConfig | None = None, threads: int | None = None, write: bool = True) -> Paper2DReport:
    """Synthesize data on the disk, check properness on the measurement disk and reconstruct."""
    cfg = (config or default_config(PAPER_2D)).validate()
    t0 = time.perf_counter()
    with stage("mesh"):
        mesh = gen_disk_mesh(cfg.mesh_radius, cfg.mesh_h)
        sub = submesh(mesh, (0.0, 0.0), cfg.omega_prime_radius)
    with stage("coefficients"):
        truth = parse_coefficients(cfg.coefficients, mesh, cfg.ball_width)
    with stage("spectrum"):
        op = HelmholtzOperator(mesh, truth)
        spec = op.spectrum()
    with stage("synthesize"):
        data, sols = synthesize_from_operator(op, list(cfg.freqs), list(cfg.illuminations), spec, threads)
    with stage("admissibility"):
        report = evaluate_conditions(sols, cfg.thresholds, PROPER, cells=sub.parent_triangles)
        if not report.is_proper:
            log.warning("frequency set is not proper on %d cells of the measurement disk", len(report.uncovered_cells))
    with stage("reconstruct"):
        sub_data = data.restrict(sub)
        recon = reconstruct(sub_data, report, cfg.denom_threshold, 0.0)
        ea, eq = error_norms(recon, truth)
    runtime = time.perf_counter() - t0
    n_en = energy_count(len(cfg.freqs), len(cfg.illuminations))
    summary = {
        "a_error_l2": ea,
        "q_error_l2": eq,
        "proper": report.is_proper,
        "n_energies": n_en,
        "lambda0": spec.lambda0,
        "lambda1": spec.lambda1,
        "n_vertices": mesh.n_vertices,
        "n_cells": mesh.n_triangles,
        "n_cells_omega_prime": sub.n_triangles,
        "n_cells_used_by_G": int(len(recon.G.used_cells)),
        "min_positivity_on_used": _min_used_positivity(recon),
    }
    out = Paper2DReport(cfg, ea, eq, report.is_proper, n_en, runtime, recon, truth, summary)
    if write:
        with stage("export"):
            out.files = _write_paper_2d(cfg, mesh, sub, truth, data, report, recon, summary, spec)
    return out


def _min_used_positivity(recon: ReconstructionOutput) -> float:
    used = recon.G.usage
    if not used.any():
        return float("nan")
    return float(np.min(recon.G.positivity[used]))


def _write_paper_2d(cfg, mesh, sub, truth, data, report, recon, summary, spec) -> list[str]:
    root = Path(cfg.out_dir)
    files = []

    def add(p):
        files.append(io.relpath(p, root))

    (root / "config.txt").parent.mkdir(parents=True, exist_ok=True)
    (root / "config.txt").write_text(cfg.echo())
    add(root / "config.txt")
    save_mesh(mesh, root / "disk.mesh")
    add(root / "disk.mesh")
    manifest = export_power_density(data, root / "power_density")
    add(manifest)
    add(report.write_csv(root / "admissibility.csv"))
    a_true = truth.a[sub.parent_triangles]
    q_true = truth.q_vertex()[sub.parent_vertices]
    add(io.write_csv(recon.a_star, root / "a_star.csv", coords=sub.barycenters))
    add(io.write_csv(recon.q_star, root / "q_star.csv", coords=sub.vertices))
    add(io.write_csv(recon.G.values, root / "G.csv", coords=sub.barycenters))
    point, cell = recon.fields()
    point["q_true"] = q_true
    point["q_error"] = recon.q_star - q_true
    cell["a_true"] = a_true
    cell["a_error"] = recon.a_star - a_true
    cell["G_true"] = a_true / truth.q[sub.parent_triangles]
    add(io.write_vtk(sub, root / "reconstruction.vtk", point, cell, "reconstruction on the measurement disk"))
    add(
        io.write_vtk(
            mesh,
            root / "coefficients.vtk",
            cell_data={"a": truth.a, "q": truth.q, "label": truth.labels.astype(float)},
            title="true coefficients",
        )
    )
    lines = [
        "paper-2d reconstruction summary",
        f"||a - a*||_2 = {io.fmt(summary['a_error_l2'])}",
        f"||q - q*||_2 = {io.fmt(summary['q_error_l2'])}",
        f"proper on measurement disk = {summary['proper']}",
        f"power density count = {summary['n_energies']}",
        f"frequencies = {', '.join(io.fmt(k) for k in cfg.freqs)}",
        f"illuminations = {', '.join(cfg.illuminations)}",
        f"lambda0 = {io.fmt(spec.lambda0)}",
        f"lambda1 = {io.fmt(spec.lambda1)}",
        f"mesh vertices = {summary['n_vertices']}",
        f"mesh cells = {summary['n_cells']}",
        f"measurement disk cells = {summary['n_cells_omega_prime']}",
        f"cells used by G = {summary['n_cells_used_by_G']}",
        f"min positivity on used cells = {io.fmt(summary['min_positivity_on_used'])}",
    ]
    (root / "summary.txt").write_text("\n".join(lines) + "\n")
    add(root / "summary.txt")
    io.write_json(root / "manifest.json", {"experiment": PAPER_2D, "files": files})
    return files


def combination(index: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """``(alphas, betas)`` of the ``index``-th element of ``{0,1,2}^8`` in lexicographic order."""
    if not 0 <= index < N_COMBINATIONS:
        raise ValidationError(f"combination index must be in [0, {N_COMBINATIONS})")
    digits = tuple(index // 3 ** (7 - n) % 3 for n in range(8))
    return digits[:4], digits[4:]


def sample_indices(sample_count: int, seed: int) -> np.ndarray:
    """Sorted combination indices: all of them, or a seeded sample without replacement."""
    if not 1 <= sample_count <= N_COMBINATIONS:
        raise ValidationError(f"sample_count must be in [1, {N_COMBINATIONS}]")
    if sample_count == N_COMBINATIONS:
        return np.arange(N_COMBINATIONS)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(N_COMBINATIONS, size=sample_count, replace=False))


@lru_cache(maxsize=4)
def _sweep_mesh(radius: float, h: float) -> Mesh2D:
    return gen_disk_mesh(radius, h)


def count_combination(index: int, cfg: ExperimentConfig, mesh: Mesh2D | None = None) -> dict:
    """Select a proper frequency set for one combination; failures are returned, not raised."""
    alphas, betas = combination(index)
    rec = {"index": index, "alphas": alphas, "betas": betas, "n_K": None, "K": [], "lambda0": None, "lambda1": None, "error": ""}
    try:
        mesh = mesh or _sweep_mesh(cfg.mesh_radius, cfg.mesh_h)
        coeffs = build_coefficients(mesh, four_ball_inclusions(alphas, betas, cfg.ball_width))
        op = HelmholtzOperator(mesh, coeffs)
        spec = op.spectrum()
        rec["lambda0"], rec["lambda1"] = spec.lambda0, spec.lambda1
        ks, report, _ = select_frequency_set(
            mesh, coeffs, list(cfg.illuminations), cfg.thresholds, PROPER, cfg.max_l, spectrum=spec, operator=op
        )
        rec["K"] = ks
        if report.covered.all():
            rec["n_K"] = len(ks)
        else:
            rec["error"] = f"{len(report.uncovered_cells)} cells uncovered after {cfg.max_l} frequencies"
    except MfpdError as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
    return rec


def _count_worker(args):
    index, cfg = args
    return count_combination(index, cfg)


@dataclass(eq=False)
class FrequencyCountReport:
    config: ExperimentConfig
    records: list[dict]
    histogram: dict[str, int]
    runtime: float
    files: list[str] = field(default_factory=list)

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.records if r["n_K"] is None]

    @property
    def max_K(self) -> int | None:
        counts = [r["n_K"] for r in self.records if r["n_K"] is not None]
        return max(counts) if counts else None

    @property
    def fraction_two(self) -> float:
        """Fraction of successful combinations needing exactly two frequencies."""
        ok = [r for r in self.records if r["n_K"] is not None]
        return sum(r["n_K"] == 2 for r in ok) / len(ok) if ok else float("nan")


HIST_BINS = ("1", "2", "3", ">=4")


def _histogram(records) -> dict[str, int]:
    hist = dict.fromkeys(HIST_BINS, 0)
    for r in records:
        n = r["n_K"]
        if n is None:
            continue
        hist[str(n) if n < 4 else ">=4"] += 1
    return hist


def run_frequency_count(
    config: ExperimentConfig | None = None, threads: int | None = None, write: bool = True
) -> FrequencyCountReport:
    """Count the frequencies needed for a proper set over the four-ball coefficient family.

    Combinations run in a process pool of ``threads`` workers (default: CPU
    count); results are ordered by combination index. Combinations that
    fail, or stay uncovered after ``max_l`` frequencies, are recorded with
    an error message and left out of the histogram.
    """
    cfg = (config or default_config(FREQUENCY_COUNT)).validate()
    t0 = time.perf_counter()
    idx = [int(i) for i in sample_indices(cfg.sample_count, cfg.seed)]
    workers = threads if threads is not None else (os.cpu_count() or 1)
    if workers < 1:
        raise ValidationError("threads must be at least 1")
    if workers == 1 or len(idx) < 8:
        records = [count_combination(i, cfg) for i in idx]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_count_worker, [(i, cfg) for i in idx], chunksize=max(1, len(idx) // (4 * workers))))
    records.sort(key=lambda r: r["index"])
    report = FrequencyCountReport(cfg, records, _histogram(records), time.perf_counter() - t0)
    if report.failures:
        log.warning("%d of %d combinations failed", len(report.failures), len(records))
    if write:
        with stage("export"):
            report.files = _write_frequency_count(report)
    return report


def _write_frequency_count(report: FrequencyCountReport) -> list[str]:
    cfg = report.config
    root = Path(cfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.txt").write_text(cfg.echo())
    header = ["index"] + [f"alpha{i}" for i in range(1, 5)] + [f"beta{i}" for i in range(1, 5)]
    header += ["lambda0", "lambda1", "n_K", "K", "error"]
    rows = []
    for r in report.records:
        rows.append(
            [r["index"], *r["alphas"], *r["betas"]]
            + [r["lambda0"] if r["lambda0"] is not None else "", r["lambda1"] if r["lambda1"] is not None else ""]
            + [r["n_K"] if r["n_K"] is not None else "", ";".join(io.fmt(k) for k in r["K"]), r["error"]]
        )
    io.write_table(root / "combinations.csv", header, rows)
    io.write_table(root / "histogram.csv", ["n_K", "count"], list(report.histogram.items()))
    n = len(report.records)
    lines = [
        "frequency-count sweep summary",
        f"combinations = {n} of {N_COMBINATIONS} (seed {cfg.seed})",
        *(f"#K = {b}: {c}" for b, c in report.histogram.items()),
        f"failures = {len(report.failures)}",
        f"fraction needing exactly 2 = {io.fmt(report.fraction_two)}",
        f"max #K = {report.max_K}",
    ]
    (root / "summary.txt").write_text("\n".join(lines) + "\n")
    files = ["config.txt", "combinations.csv", "histogram.csv", "summary.txt"]
    io.write_json(root / "manifest.json", {"experiment": FREQUENCY_COUNT, "files": files})
    return files
