"""Pointwise non-degeneracy conditions and the greedy multi-frequency search.

Illuminations play three roles: ``phi1`` (value condition) and
``phi2, phi3`` (gradient conditions). Roles may alias one illumination.
At each cell barycenter and frequency k:

- ``psm1 = |u^1|`` (also the complete-set value condition)
- ``psm2 = |det[grad u^2, grad u^3]|`` (identical to the complete-set
  gradient condition in 2D)
- ``csm3 = |det [[u^1, u^2, u^3], [grad u^1, grad u^2, grad u^3]]|``

A cell is admissible at k when every condition of the chosen mode meets
its threshold.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import io
from .coefficients import CoefficientPair
from .errors import ValidationError
from .helmholtz import HelmholtzOperator, HelmholtzSolution, SpectrumEstimate, check_resonance
from .illumination import as_illumination
from .mesh import Mesh2D

log = logging.getLogger(__name__)

PROPER = "proper"
COMPLETE = "complete"


@dataclass(frozen=True)
class AdmissibilityThresholds:
    p: float = 1e-3
    r: float = 1e-3
    s: float = 1e-3

    def __post_init__(self):
        for name in ("p", "r", "s"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValidationError(f"threshold {name} must be positive and finite, got {v}")


@dataclass(eq=False)
class AdmissibilityReport:
    """Condition values and admissibility per (frequency, cell).

    Arrays ``values[name]`` and ``admissible`` have shape ``(len(ks), len(cells))``.
    """

    ks: np.ndarray
    cells: np.ndarray
    mode: str
    thresholds: AdmissibilityThresholds
    values: dict
    admissible: np.ndarray
    proper_mask: np.ndarray
    complete_mask: np.ndarray | None = None
    info: dict = field(default_factory=dict)
    mesh: Mesh2D | None = None

    @property
    def covered(self) -> np.ndarray:
        return self.admissible.any(axis=0)

    @property
    def is_proper(self) -> bool:
        return bool(self.proper_mask.any(axis=0).all())

    @property
    def is_complete(self) -> bool:
        return bool(self.complete_mask is not None and self.complete_mask.any(axis=0).all())

    @property
    def uncovered_cells(self) -> np.ndarray:
        return self.cells[~self.covered]

    @property
    def min_K(self) -> int | None:
        """Smallest m such that the first m frequencies cover every cell, else None."""
        if len(self.ks) == 0:
            return None
        prefix = np.logical_or.accumulate(self.admissible, axis=0).all(axis=1)
        hits = np.flatnonzero(prefix)
        return int(hits[0]) + 1 if len(hits) else None

    def mask_for(self, mesh: Mesh2D) -> np.ndarray:
        """Admissibility as ``(len(ks), mesh.n_triangles)`` for ``mesh`` or a submesh of the report's mesh.

        Cells that were not evaluated count as not admissible.
        """
        if self.mesh is None:
            raise ValidationError("report does not record its mesh")
        if mesh is self.mesh:
            idx = np.arange(mesh.n_triangles)
        elif mesh.parent_triangles is not None and int(mesh.parent_triangles.max()) < self.mesh.n_triangles:
            idx = mesh.parent_triangles
        else:
            raise ValidationError("report was computed on an unrelated mesh")
        full = np.zeros((len(self.ks), self.mesh.n_triangles), dtype=bool)
        full[:, self.cells] = self.admissible
        return full[:, idx]

    def admissible_ks(self, cell: int) -> list[float]:
        pos = np.flatnonzero(self.cells == cell)
        if len(pos) == 0:
            raise ValidationError(f"cell {cell} was not evaluated")
        return [float(k) for k in self.ks[self.admissible[:, pos[0]]]]

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "thresholds": {"p": self.thresholds.p, "r": self.thresholds.r, "s": self.thresholds.s},
            "frequencies": [float(k) for k in self.ks],
            "n_cells": int(len(self.cells)),
            "n_covered": int(self.covered.sum()),
            "is_proper": self.is_proper,
            "is_complete": self.is_complete,
            "min_K": self.min_K,
            **self.info,
        }

    def write_csv(self, path):
        names = sorted(self.values)
        header = ["cell", "admissible_k"] + [f"{n}_k{l}" for l in range(len(self.ks)) for n in names]
        rows = []
        for c_pos, cell in enumerate(self.cells):
            ks = ";".join(io.fmt(k) for k in self.ks[self.admissible[:, c_pos]])
            vals = [float(self.values[n][l, c_pos]) for l in range(len(self.ks)) for n in names]
            rows.append([int(cell), ks] + vals)
        return io.write_table(path, header, rows)


def default_roles(n_illuminations: int, mode: str) -> tuple[int, int, int]:
    """``(0, 1, 2)`` for three illuminations; ``(0, 0, 1)`` for two in proper mode."""
    if n_illuminations >= 3:
        return (0, 1, 2)
    if n_illuminations == 2 and mode == PROPER:
        return (0, 0, 1)
    raise ValidationError(f"{mode} mode needs {'2 or more' if mode == PROPER else '3'} illuminations, got {n_illuminations}")


def _check_roles(roles, n, mode):
    roles = tuple(int(r) for r in roles)
    if len(roles) != 3 or min(roles) < 0 or max(roles) >= n:
        raise ValidationError(f"roles must be three indices into {n} illuminations, got {roles}")
    if mode == COMPLETE and (n != 3 or len(set(roles)) != 3):
        raise ValidationError("complete mode needs exactly three distinct illuminations")
    if mode not in (PROPER, COMPLETE):
        raise ValidationError(f"unknown mode {mode!r}")
    return roles


def condition_values(row: list[HelmholtzSolution], roles, cells=None, with_csm3: bool = False) -> dict:
    """Condition values at the barycenters of ``cells`` for one frequency."""
    i1, i2, i3 = roles
    mesh = row[0].mesh
    cells = np.arange(mesh.n_triangles) if cells is None else np.asarray(cells)
    tri = mesh.triangles[cells]
    u = [s.u[tri].mean(axis=1) for s in row]
    g = [s.grad[cells] for s in row]
    det2 = g[i2][:, 0] * g[i3][:, 1] - g[i2][:, 1] * g[i3][:, 0]
    out = {"psm1": np.abs(u[i1]), "psm2": np.abs(det2)}
    if with_csm3:
        m = np.empty((len(cells), 3, 3))
        for col, idx in enumerate(roles):
            m[:, 0, col] = u[idx]
            m[:, 1:, col] = g[idx]
        out["csm3"] = np.abs(np.linalg.det(m))
    return out


def psm2_sine_form(row: list[HelmholtzSolution], i2: int, i3: int, cells=None) -> np.ndarray:
    """``|grad u^2| |grad u^3| |sin theta|`` with theta from the two polar angles."""
    mesh = row[0].mesh
    cells = np.arange(mesh.n_triangles) if cells is None else np.asarray(cells)
    g2, g3 = row[i2].grad[cells], row[i3].grad[cells]
    theta = np.arctan2(g3[:, 1], g3[:, 0]) - np.arctan2(g2[:, 1], g2[:, 0])
    return np.linalg.norm(g2, axis=1) * np.linalg.norm(g3, axis=1) * np.abs(np.sin(theta))


def evaluate_conditions(
    solutions,
    thresholds: AdmissibilityThresholds,
    mode: str = PROPER,
    roles=None,
    cells=None,
) -> AdmissibilityReport:
    """Evaluate the conditions for ``solutions[l][i]`` (frequency l, illumination i)."""
    solutions = [list(r) for r in solutions]
    if not solutions:
        raise ValidationError("no frequencies to evaluate")
    n = len(solutions[0])
    roles = _check_roles(default_roles(n, mode) if roles is None else roles, n, mode)
    mesh = solutions[0][0].mesh
    cells = np.arange(mesh.n_triangles) if cells is None else np.asarray(cells, dtype=np.int64)
    want_csm3 = mode == COMPLETE
    per_k = [condition_values(row, roles, cells, want_csm3) for row in solutions]
    values = {name: np.array([v[name] for v in per_k]) for name in per_k[0]}
    proper = (values["psm1"] >= thresholds.p) & (values["psm2"] >= thresholds.r)
    complete = proper & (values["csm3"] >= thresholds.s) if want_csm3 else None
    admissible = complete if want_csm3 else proper
    ks = np.array([row[0].k for row in solutions])
    return AdmissibilityReport(
        ks, cells, mode, thresholds, values, admissible, proper, complete, {"roles": list(roles)}, mesh
    )


def frequency_sequence(lambda0: float, lambda1: float, a_off: float = 0.25, b_span: float = 0.5, l: int = 0) -> float:
    """``lambda0 + A + B / (l + 1)``, ``A = a_off (lambda1 - lambda0)``, ``B = b_span (lambda1 - lambda0)``."""
    if not (a_off > 0 and b_span > 0 and a_off + b_span < 1):
        raise ValidationError(f"need a_off > 0, b_span > 0, a_off + b_span < 1 (got {a_off}, {b_span})")
    if not 0 < lambda0 < lambda1:
        raise ValidationError("need 0 < lambda0 < lambda1")
    if l < 0:
        raise ValidationError("l must be nonnegative")
    gap = lambda1 - lambda0
    return lambda0 + a_off * gap + b_span * gap / (l + 1)


def select_frequency_set(
    mesh: Mesh2D,
    coeffs: CoefficientPair,
    illuminations,
    thresholds: AdmissibilityThresholds = AdmissibilityThresholds(),
    mode: str = PROPER,
    max_l: int = 10,
    a_off: float = 0.25,
    b_span: float = 0.5,
    roles=None,
    cells=None,
    spectrum: SpectrumEstimate | None = None,
    operator: HelmholtzOperator | None = None,
    gap_tol: float = 0.05,
):
    """Greedy sweep over ``k_0, k_1, ...`` until every cell is admissible for some k.

    Returns ``(K, report, solutions)``. When ``max_l`` frequencies do not
    suffice, ``report.uncovered_cells`` lists the remaining cells.
    """
    if max_l < 1:
        raise ValidationError("max_l must be at least 1")
    ills = [as_illumination(p) for p in illuminations]
    roles = _check_roles(default_roles(len(ills), mode) if roles is None else roles, len(ills), mode)
    op = operator or HelmholtzOperator(mesh, coeffs)
    spec = spectrum or op.spectrum()
    cells = np.arange(mesh.n_triangles) if cells is None else np.asarray(cells, dtype=np.int64)
    covered = np.zeros(len(cells), dtype=bool)
    solutions = []
    report = None
    for l in range(max_l):
        k = frequency_sequence(spec.lambda0, spec.lambda1, a_off, b_span, l)
        check_resonance(k, spec, gap_tol)
        solutions.append([op.solve(k, p, spec, gap_tol) for p in ills])
        step = evaluate_conditions([solutions[-1]], thresholds, mode, roles, cells)
        covered |= step.admissible[0]
        if covered.all():
            break
    report = evaluate_conditions(solutions, thresholds, mode, roles, cells)
    report.info.update({"lambda0": spec.lambda0, "lambda1": spec.lambda1, "a_off": a_off, "b_span": b_span})
    if not report.covered.all():
        log.info("%d of %d cells uncovered after %d frequencies", (~report.covered).sum(), len(cells), max_l)
    return [float(k) for k in report.ks], report, solutions


@dataclass
class BMNReport:
    passed: bool
    convex: bool
    nondegenerate: bool
    simple_turning: bool
    first_violation: int | None
    area: float
    turning: float
    jacobian_min: float | None
    jacobian_positive: bool | None
    message: str = ""


def verify_bmn(phi2, phi3, mesh: Mesh2D) -> BMNReport:
    """Screen ``(phi2, phi3)`` for the convex-image boundary condition at mesh resolution.

    The boundary loop is mapped by ``(phi2, phi3)``. Passing requires every
    consecutive cross product of the image polygon to share one sign (zero
    within ``1e-12 * scale**2`` tolerated), a positive enclosed area, and a
    total turning of one full revolution. This is a necessary-condition
    screen, not a proof. The Jacobian of the expressions at cell barycenters
    is reported alongside and does not affect ``passed``.
    """
    loops = mesh.boundary_loops()
    if len(loops) != 1:
        raise ValidationError(f"verify_bmn supports a single boundary loop, mesh has {len(loops)}")
    p2, p3 = as_illumination(phi2), as_illumination(phi3)
    pts = mesh.vertices[loops[0]]
    img = np.column_stack([p2.at(pts), p3.at(pts)])
    d = np.roll(img, -1, axis=0) - img
    cross = d[:, 0] * np.roll(d, -1, axis=0)[:, 1] - d[:, 1] * np.roll(d, -1, axis=0)[:, 0]
    scale = float(np.ptp(img, axis=0).max())
    tol = 1e-12 * max(scale, 1e-300) ** 2
    pos, neg = cross > tol, cross < -tol
    sign = 1 if pos.sum() >= neg.sum() else -1
    bad = np.flatnonzero(neg if sign > 0 else pos)
    convex = len(bad) == 0
    area = 0.5 * float(np.sum(img[:, 0] * np.roll(img[:, 1], -1) - np.roll(img[:, 0], -1) * img[:, 1]))
    nondeg = abs(area) > tol and scale > 0
    lens = np.linalg.norm(d, axis=1)
    ok = lens > 0
    ang = np.arctan2(d[ok, 1], d[ok, 0])
    turn = float(np.sum(np.angle(np.exp(1j * (np.roll(ang, -1) - ang))))) if ok.sum() >= 3 else 0.0
    simple = abs(abs(turn) - 2 * np.pi) < 1e-6
    first = int(bad[0]) if len(bad) else None
    if first is None and not nondeg:
        first = 0
    bc = mesh.barycenters
    g2, g3 = p2.gradient(bc), p3.gradient(bc)
    jac = g2[:, 0] * g3[:, 1] - g2[:, 1] * g3[:, 0]
    jmin = float(np.min(jac * np.sign(area))) if nondeg else float(np.min(np.abs(jac)))
    passed = convex and nondeg and simple
    msg = []
    if not convex:
        msg.append(f"image polygon not convex at boundary index {first}")
    if not nondeg:
        msg.append("image is degenerate (zero enclosed area)")
    if nondeg and not simple:
        msg.append(f"image winds {turn / (2 * np.pi):.3g} times")
    return BMNReport(passed, convex, nondeg, simple, first, area, turn, jmin, bool(jmin > 0), "; ".join(msg))
