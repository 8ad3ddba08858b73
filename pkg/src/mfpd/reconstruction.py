"""Reconstruction of ``G = a/q``, ``q`` and ``a`` from power densities.

Per frequency, with ``e`` evaluated at barycenters by vertex averaging::

    G_k = 2 (tr e tr E - tr(e E)) / (|grad(e / tr e)|^2 tr(e)^2)

where ``|grad M|^2`` sums the squared P1 cell gradients of every entry
``M_ij`` (off-diagonal entries therefore twice). ``log q`` then solves::

    -div(G tr(e) grad w) = -div(G grad tr(e)) + 2 sum_{k,i} (E_k^{ii} - k e_k^{ii})

on the measurement subdomain, with ``tr(e) = sum_{k,i} e_k^{ii}``, and ``a = G q``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .coefficients import CoefficientPair
from .errors import ReconstructionError, ValidationError
from .frequency_selection import AdmissibilityReport
from .mesh import Mesh2D
from .power_density import PowerDensityData

log = logging.getLogger(__name__)

DEFAULT_DENOM_THRESHOLD = 1e-2
TRACE_FLOOR = 1e-12

# cell provenance flags for G
DIRECT, NEIGHBOR, FALLBACK = 0, 1, 2


def _traces(data: PowerDensityData, l: int):
    e = data.e_cells(l)
    E = data.E[l]
    tr_e = np.einsum("iic->c", e)
    tr_E = np.einsum("iic->c", E)
    tr_eE = np.einsum("ijc,jic->c", e, E)
    return tr_e, tr_E, tr_eE


def positivity_field(data: PowerDensityData, k: float) -> tuple[np.ndarray, np.ndarray]:
    """``(tr(e) tr(E) - tr(eE)) / tr(e)^2`` per cell, and the mask of evaluated cells.

    Cells with ``tr(e) <= 0`` are flagged (mask False, value NaN).
    """
    l = data.k_index(k)
    tr_e, tr_E, tr_eE = _traces(data, l)
    ok = tr_e > 0
    out = np.full(len(tr_e), np.nan)
    out[ok] = (tr_e[ok] * tr_E[ok] - tr_eE[ok]) / tr_e[ok] ** 2
    return out, ok


def _normalized_gradient_sq(data: PowerDensityData, l: int, tr_v: np.ndarray) -> np.ndarray:
    g = fem.basis_gradients(data.mesh)
    m = data.e[l] / tr_v
    grads = np.einsum("cad,ijca->ijcd", g, m[..., data.mesh.triangles])
    return np.einsum("ijcd,ijcd->c", grads, grads)


@dataclass(eq=False)
class GField:
    mesh: Mesh2D
    values: np.ndarray
    per_k: np.ndarray
    usage: np.ndarray
    denominators: np.ndarray
    positivity: np.ndarray
    flags: np.ndarray
    ks: np.ndarray

    @property
    def used_cells(self) -> np.ndarray:
        return np.flatnonzero(self.usage.any(axis=0))

    @property
    def usage_count(self) -> np.ndarray:
        return self.usage.sum(axis=0)


def _cell_neighbors(mesh: Mesh2D):
    """Pairs of cells sharing an edge."""
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    owner = np.tile(np.arange(len(t)), 3)
    key = np.sort(edges, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    ks = key[order]
    same = np.all(ks[1:] == ks[:-1], axis=1)
    a = owner[order][:-1][same]
    b = owner[order][1:][same]
    return a, b


def reconstruct_G(
    data: PowerDensityData,
    report: AdmissibilityReport | None = None,
    denom_threshold: float = DEFAULT_DENOM_THRESHOLD,
) -> GField:
    """Blend the per-frequency trace formula over the valid frequencies of each cell.

    A frequency is valid at a cell when its denominator exceeds
    ``denom_threshold``, ``tr(e) > 0`` and, if ``report`` is given, the cell
    is admissible there. Cells without a valid frequency take the mean of
    their edge neighbors that have one (flag ``NEIGHBOR``); cells still empty
    after that pass take the mean over all direct cells (flag ``FALLBACK``).
    """
    if not denom_threshold >= 0:
        raise ValidationError("denom_threshold must be nonnegative")
    mesh = data.mesh
    n_k, nc = len(data.ks), mesh.n_triangles
    adm = np.ones((n_k, nc), dtype=bool)
    if report is not None:
        mask = report.mask_for(mesh)
        for l, k in enumerate(data.ks):
            hits = np.flatnonzero(np.isclose(report.ks, k, rtol=1e-12, atol=0.0))
            adm[l] = mask[hits[0]] if len(hits) else False
    per_k = np.full((n_k, nc), np.nan)
    den = np.zeros((n_k, nc))
    pos = np.full((n_k, nc), np.nan)
    usage = np.zeros((n_k, nc), dtype=bool)
    for l in range(n_k):
        tr_e, tr_E, tr_eE = _traces(data, l)
        tr_v = np.einsum("iin->n", data.e[l])
        safe_v = np.where(tr_v > 0, tr_v, 1.0)
        ok = (tr_e > 0) & np.all(tr_v[mesh.triangles] > 0, axis=1)
        den[l] = _normalized_gradient_sq(data, l, safe_v) * tr_e**2
        num = 2.0 * (tr_e * tr_E - tr_eE)
        pos[l, ok] = num[ok] / (2.0 * tr_e[ok] ** 2)
        usage[l] = ok & (den[l] > denom_threshold) & adm[l]
        per_k[l, usage[l]] = num[usage[l]] / den[l, usage[l]]
    if not usage.any():
        raise ReconstructionError("reconstruct_G: no cell has a frequency with denominator above the threshold")
    cnt = usage.sum(axis=0)
    g = np.where(cnt > 0, np.nansum(np.where(usage, per_k, 0.0), axis=0) / np.maximum(cnt, 1), np.nan)
    flags = np.full(nc, DIRECT)
    holes = cnt == 0
    if holes.any():
        a, b = _cell_neighbors(mesh)
        s = np.zeros(nc)
        w = np.zeros(nc)
        for x, y in ((a, b), (b, a)):
            take = holes[x] & ~holes[y]
            np.add.at(s, x[take], g[y[take]])
            np.add.at(w, x[take], 1.0)
        filled = holes & (w > 0)
        g[filled] = s[filled] / w[filled]
        flags[filled] = NEIGHBOR
        rest = holes & ~filled
        if rest.any():
            g[rest] = float(np.mean(g[~holes]))
            flags[rest] = FALLBACK
        log.info("G: %d cells filled from neighbors, %d by fallback", filled.sum(), rest.sum())
    return GField(mesh, g, per_k, usage, den, pos, flags, data.ks.copy())


def total_trace(data: PowerDensityData) -> np.ndarray:
    """``sum_{k,i} e_k^{ii}`` per vertex."""
    return np.einsum("liin->n", data.e)


def reconstruct_q(
    G: np.ndarray,
    data: PowerDensityData,
    boundary_log_q=0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve for ``log q`` on ``data.mesh``; returns ``(q_star, log_q)`` per vertex.

    ``boundary_log_q`` is a scalar or one value per boundary vertex of the
    mesh (in ``mesh.boundary_vertices`` order) or per vertex.
    """
    mesh = data.mesh
    G = np.asarray(G, dtype=float)
    if G.shape != (mesh.n_triangles,):
        raise ValidationError("G must have one value per cell of the data mesh")
    tr = total_trace(data)
    low = tr < TRACE_FLOOR
    if low.any():
        v = int(np.flatnonzero(low)[0])
        cell = int(np.flatnonzero(np.any(mesh.triangles == v, axis=1))[0])
        raise ReconstructionError(f"reconstruct_q: tr(e) = {tr[v]:.3e} below {TRACE_FLOOR} at vertex {v} (cell {cell})")
    coeff = G * mesh.cell_average(tr)
    k_mat = fem.assemble_stiffness(mesh, coeff)
    rhs = fem.gradient_load_vector(mesh, G, fem.p1_gradient(mesh, tr))
    sum_E = np.einsum("liic->c", data.E)
    sum_ke = np.einsum("l,liin->n", data.ks, data.e)
    rhs = rhs + 2.0 * fem.load_vector(mesh, sum_E) - 2.0 * fem.load_vector(mesh, sum_ke)
    bidx = mesh.boundary_vertices
    bv = np.asarray(boundary_log_q, dtype=float)
    if bv.ndim == 0:
        bv = np.full(len(bidx), float(bv))
    elif len(bv) == mesh.n_vertices:
        bv = bv[bidx]
    elif len(bv) != len(bidx):
        raise ValidationError("boundary_log_q needs a scalar, one value per boundary vertex, or one per vertex")
    red = fem.apply_dirichlet(fem.SparseSystem(k_mat, rhs), (bidx, bv))
    w = red.expand(fem.solve_spd(red.matrix, red.rhs))
    return np.exp(w), w


def reconstruct_a(G: np.ndarray, q_star: np.ndarray, mesh: Mesh2D) -> np.ndarray:
    """``a* = G q*`` per cell (q* averaged from vertices to cells)."""
    return np.asarray(G, dtype=float) * fem.cell_values(mesh, q_star)


@dataclass(eq=False)
class ReconstructionOutput:
    mesh: Mesh2D
    G: GField
    q_star: np.ndarray
    log_q: np.ndarray
    a_star: np.ndarray
    errors: dict = field(default_factory=dict)

    def fields(self) -> tuple[dict, dict]:
        """(vertex fields, cell fields) for export."""
        point = {"q_star": self.q_star, "log_q_star": self.log_q}
        cell = {
            "G": self.G.values,
            "a_star": self.a_star,
            "usage_count": self.G.usage_count.astype(float),
            "G_flag": self.G.flags.astype(float),
        }
        for l, k in enumerate(self.G.ks):
            cell[f"positivity_k{l}"] = np.nan_to_num(self.G.positivity[l], nan=0.0)
            cell[f"denominator_k{l}"] = self.G.denominators[l]
        return point, cell


def reconstruct(
    data: PowerDensityData,
    report: AdmissibilityReport | None = None,
    denom_threshold: float = DEFAULT_DENOM_THRESHOLD,
    boundary_log_q=0.0,
) -> ReconstructionOutput:
    g = reconstruct_G(data, report, denom_threshold)
    q_star, log_q = reconstruct_q(g.values, data, boundary_log_q)
    a_star = reconstruct_a(g.values, q_star, data.mesh)
    return ReconstructionOutput(data.mesh, g, q_star, log_q, a_star)


def _truth_on(mesh: Mesh2D, truth: CoefficientPair):
    if truth.mesh is mesh or truth.mesh.n_triangles == mesh.n_triangles and truth.mesh.n_vertices == mesh.n_vertices:
        return truth.a, truth.q_vertex()
    if mesh.parent_triangles is None or truth.mesh.n_triangles <= int(mesh.parent_triangles.max()):
        raise ValidationError("truth coefficients live on an unrelated mesh")
    return truth.a[mesh.parent_triangles], truth.q_vertex()[mesh.parent_vertices]


def error_norms(recon: ReconstructionOutput, truth: CoefficientPair) -> tuple[float, float]:
    """``(||a - a*||, ||q - q*||)`` in L2 over the reconstruction mesh.

    ``a`` is compared per cell; ``q`` per vertex, with the true q at a vertex
    the area-weighted mean of its incident cells on the truth mesh.
    ``truth`` may live on the reconstruction mesh or on its parent.
    """
    mesh = recon.mesh
    a_true, q_true = _truth_on(mesh, truth)
    ea = fem.l2_norm(mesh, fem.ScalarField(mesh, a_true - recon.a_star, "cell"))
    eq = fem.l2_norm(mesh, fem.ScalarField(mesh, q_true - recon.q_star, "vertex"))
    recon.errors = {"a_l2": ea, "q_l2": eq}
    return ea, eq
