"""Internal power densities and the simulated ultrasound-modulated acquisition.

For solutions ``u_i`` at one frequency ``k``::

    e^{ij} = q u_i u_j            (per vertex)
    E^{ij} = a grad u_i . grad u_j (per cell)

``e`` uses q at vertices as the area-weighted mean of the incident cells.
Only same-frequency pairs are formed.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem, io
from .coefficients import CoefficientPair
from .errors import NumericalError, ValidationError
from .helmholtz import HelmholtzOperator, HelmholtzSolution, SpectrumEstimate
from .illumination import Illumination, as_illumination
from .mesh import Mesh2D

log = logging.getLogger(__name__)

OMEGA = "omega"
OMEGA_PRIME = "omega_prime"
DIM = 2


@dataclass(eq=False)
class PowerDensityData:
    """Power densities for frequencies ``ks`` and illuminations.

    ``e[l, i, j]`` is the vertex field ``e_{k_l}^{ij}`` and ``E[l, i, j]`` the
    cell field ``E_{k_l}^{ij}``.
    """

    mesh: Mesh2D
    coeffs: CoefficientPair
    ks: np.ndarray
    illuminations: list[Illumination]
    e: np.ndarray
    E: np.ndarray
    region: str = OMEGA

    def __post_init__(self):
        self.ks = np.asarray(self.ks, dtype=float)
        n_k, n = len(self.ks), len(self.illuminations)
        if self.e.shape != (n_k, n, n, self.mesh.n_vertices):
            raise ValidationError(f"e has shape {self.e.shape}, expected {(n_k, n, n, self.mesh.n_vertices)}")
        if self.E.shape != (n_k, n, n, self.mesh.n_triangles):
            raise ValidationError(f"E has shape {self.E.shape}, expected {(n_k, n, n, self.mesh.n_triangles)}")

    @property
    def n_illuminations(self) -> int:
        return len(self.illuminations)

    def k_index(self, k: float) -> int:
        hits = np.flatnonzero(np.isclose(self.ks, k, rtol=1e-12, atol=0.0))
        if len(hits) == 0:
            raise ValidationError(f"frequency {k} not in data (have {list(self.ks)})")
        return int(hits[0])

    def illumination_index(self, phi) -> int:
        src = as_illumination(phi).tree
        for i, ill in enumerate(self.illuminations):
            if ill.tree == src:
                return i
        raise ValidationError(f"illumination {phi} not in data")

    def e_cells(self, l: int) -> np.ndarray:
        """``e_{k_l}`` at cell barycenters by vertex averaging, shape (N, N, cells)."""
        return self.e[l][..., self.mesh.triangles].mean(axis=-1)

    def restrict(self, sub: Mesh2D, coeffs: CoefficientPair | None = None) -> "PowerDensityData":
        """Data on a submesh (``sub`` must carry parent maps into this mesh)."""
        if sub.parent_vertices is None or sub.parent_triangles is None:
            raise ValidationError("restrict needs a submesh with parent maps")
        c = coeffs if coeffs is not None else self.coeffs.restrict(sub)
        return PowerDensityData(
            sub,
            c,
            self.ks.copy(),
            list(self.illuminations),
            self.e[..., sub.parent_vertices].copy(),
            self.E[..., sub.parent_triangles].copy(),
            OMEGA_PRIME,
        )

    def scaled(self, c: float) -> "PowerDensityData":
        """Data for all illuminations multiplied by ``c``."""
        return PowerDensityData(
            self.mesh,
            self.coeffs,
            self.ks.copy(),
            [ill.scaled(c) for ill in self.illuminations],
            self.e * c**2,
            self.E * c**2,
            self.region,
        )


def synthesize(solutions, coeffs: CoefficientPair) -> PowerDensityData:
    """Power densities from ``solutions[l][i]`` (frequency ``l``, illumination ``i``)."""
    solutions = [list(row) for row in solutions]
    if not solutions or not solutions[0]:
        raise ValidationError("synthesize needs at least one frequency and one illumination")
    mesh = solutions[0][0].mesh
    n = len(solutions[0])
    ills = [s.illumination for s in solutions[0]]
    for row in solutions:
        if len(row) != n:
            raise ValidationError("every frequency needs the same illuminations")
        for s, ill in zip(row, ills):
            if s.mesh is not mesh and (s.mesh.n_vertices != mesh.n_vertices or s.mesh.n_triangles != mesh.n_triangles):
                raise ValidationError("solutions live on different meshes")
            if s.illumination.tree != ill.tree:
                raise ValidationError("illumination order differs between frequencies")
        if len({s.k for s in row}) != 1:
            raise ValidationError("a frequency row mixes different k")
    if coeffs.mesh.n_triangles != mesh.n_triangles:
        raise ValidationError("coefficients live on a different mesh")
    qv = coeffs.q_vertex()
    ks = np.array([row[0].k for row in solutions])
    e = np.empty((len(ks), n, n, mesh.n_vertices))
    E = np.empty((len(ks), n, n, mesh.n_triangles))
    for l, row in enumerate(solutions):
        for i in range(n):
            for j in range(i, n):
                # one evaluation per unordered pair keeps both arrays exactly symmetric
                e[l, i, j] = e[l, j, i] = qv * row[i].u * row[j].u
                E[l, i, j] = E[l, j, i] = coeffs.a * np.einsum("cd,cd->c", row[i].grad, row[j].grad)
    return PowerDensityData(mesh, coeffs, ks, ills, e, E, OMEGA)


def synthesize_from_operator(
    op: HelmholtzOperator, ks, illuminations, spectrum: SpectrumEstimate | None = None, threads: int | None = None
) -> tuple[PowerDensityData, list[list[HelmholtzSolution]]]:
    """Solve every (k, illumination) pair on ``op`` and synthesize."""
    ills = [as_illumination(p) for p in illuminations]
    jobs = [(k, p) for k in ks for p in ills]
    if threads == 1 or len(jobs) == 1:
        flat = [op.solve(k, p, spectrum) for k, p in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            flat = list(pool.map(lambda kp: op.solve(kp[0], kp[1], spectrum), jobs))
    n = len(ills)
    sols = [flat[l * n : (l + 1) * n] for l in range(len(ks))]
    return synthesize(sols, op.coeffs), sols


def hs_norm(m: np.ndarray) -> np.ndarray:
    """Pointwise Hilbert-Schmidt norm of a stack ``(N, N, n)``."""
    return np.sqrt(np.einsum("ijn,ijn->n", m, m))


def trace(m: np.ndarray) -> np.ndarray:
    return np.einsum("iin->n", m)


def point_values(data: PowerDensityData, l: int, i: int, j: int, z) -> tuple[float, float]:
    """``(E^{ij}(z), e^{ij}(z))``.

    e is the P1 interpolant at ``z``; E is the cell value, area-averaged over
    all cells touching ``z`` when it sits on an edge or a vertex.
    """
    mesh = data.mesh
    c = mesh.locate(z)
    w = mesh.barycentric(c, z)
    e = float(w @ data.e[l, i, j][mesh.triangles[c]])
    hits = mesh.cells_containing(z)
    E = float(np.average(data.E[l, i, j][hits], weights=mesh.areas[hits]))
    return E, e


@dataclass(frozen=True)
class AcousticPerturbation:
    """``a -> a (1 + c_a alpha chi)``, ``q -> q (1 + c_q alpha chi)`` on ``omega = B(z, radius)``.

    ``c_a`` and ``c_q`` are constants or expressions in ``x1, x2``.
    """

    center: tuple[float, float]
    radius: float
    amplitudes: tuple[float, ...] = (0.5, 1.0)
    c_a: float | str = 1.0
    c_q: float | str = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError("perturbation radius must be positive")
        amps = tuple(float(a) for a in self.amplitudes)
        if len(set(amps)) != len(amps):
            raise ValidationError("amplitudes must be distinct")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def contrast(self, which: str, pts) -> np.ndarray:
        c = self.c_a if which == "a" else self.c_q
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if isinstance(c, (int, float)):
            return np.full(len(pts), float(c))
        return as_illumination(c).at(pts)

    def cells(self, mesh: Mesh2D) -> np.ndarray:
        """Cells whose barycenter lies in the ball; validates the ball against the mesh."""
        z = np.asarray(self.center)
        bd = mesh.vertices[mesh.boundary_vertices]
        if np.min(np.linalg.norm(bd - z, axis=1)) <= self.radius:
            raise ValidationError(f"perturbation ball B({tuple(z)}, {self.radius}) is not inside the domain")
        try:
            mesh.locate(z)
        except ValidationError:
            raise ValidationError(f"perturbation center {tuple(z)} is outside the domain") from None
        inside = np.flatnonzero(np.linalg.norm(mesh.barycenters - z, axis=1) < self.radius)
        if len(inside) == 0:
            raise ValidationError("perturbation ball contains no cell barycenter; refine the mesh")
        return inside

    def perturbed(self, coeffs: CoefficientPair, alpha: float, cells=None) -> CoefficientPair:
        mesh = coeffs.mesh
        cells = self.cells(mesh) if cells is None else cells
        bc = mesh.barycenters[cells]
        fa = 1.0 + self.contrast("a", bc) * alpha
        fq = 1.0 + self.contrast("q", bc) * alpha
        if fa.min() <= 0 or fq.min() <= 0:
            raise ValidationError(f"amplitude {alpha} makes the perturbed coefficients non-positive")
        a = np.array(coeffs.a)
        q = np.array(coeffs.q)
        a[cells] *= fa
        q[cells] *= fq
        return CoefficientPair(mesh, a, q, coeffs.labels, coeffs.description + f" +pert(alpha={alpha})")


def _pairing(op_mesh, coeffs, k, u, psi_lift):
    k_mat = fem.assemble_stiffness(op_mesh, coeffs.a)
    m_mat = fem.assemble_mass(op_mesh, coeffs.q)
    return psi_lift @ (k_mat @ u - k * (m_mat @ u))


def lift(mesh: Mesh2D, psi) -> np.ndarray:
    """P1 lifting of ``psi``: boundary values from ``psi``, zero inside."""
    psi = as_illumination(psi)
    out = np.zeros(mesh.n_vertices)
    b = mesh.boundary_vertices
    out[b] = psi.at(mesh.vertices[b])
    return out


def boundary_flux_pairing(
    u_bar: HelmholtzSolution,
    u: HelmholtzSolution,
    psi,
    coeffs_bar: CoefficientPair,
    coeffs: CoefficientPair,
    k: float,
    lifting: np.ndarray | None = None,
) -> float:
    """Discrete ``int_{boundary} a (d_nu u_bar - d_nu u) psi``.

    Evaluated through the volume form ``B_bar(u_bar, Psi) - B(u, Psi)`` with
    ``B(w, Psi) = int a grad w . grad Psi - k int q w Psi`` and ``Psi`` a P1
    lifting of ``psi``. The result depends on ``Psi`` only through its
    boundary values, up to the solver residual.
    """
    if not (np.isclose(u_bar.k, k) and np.isclose(u.k, k)):
        raise ValidationError(f"solutions at k={u_bar.k}, {u.k} do not match k={k}")
    if u_bar.illumination.tree != u.illumination.tree:
        raise ValidationError("perturbed and unperturbed solutions use different illuminations")
    mesh = u.mesh
    psi_lift = lift(mesh, psi) if lifting is None else np.asarray(lifting, dtype=float)
    return float(_pairing(mesh, coeffs_bar, k, u_bar.u, psi_lift) - _pairing(mesh, coeffs, k, u.u, psi_lift))


@dataclass
class AcquisitionResult:
    E_est: float
    e_est: float
    omega_area: float
    n_cells: int
    amplitudes: tuple[float, ...]
    measurements: np.ndarray
    matrix: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def acquisition_rows(pert: AcousticPerturbation, k: float) -> np.ndarray:
    """Row ``(d c_a alpha / (c_a alpha + d), -k c_q alpha)`` per amplitude.

    The measured pairing divided by ``|omega|`` is modelled as
    ``row . (X, Y)`` with ``X = a grad u_phi . grad u_psi (z)`` and
    ``Y = q u_phi u_psi (z)``; the disk polarization factor gives the first
    column. The minus sign follows from the weak form (the perturbation of q
    enters the bilinear form with the sign of ``-k q``).
    """
    z = np.asarray(pert.center)[None]
    ca = float(pert.contrast("a", z)[0])
    cq = float(pert.contrast("q", z)[0])
    rows = []
    for al in pert.amplitudes:
        if abs(ca * al) >= DIM:
            raise ValidationError(f"|c_a alpha| = {abs(ca * al)} must stay below {DIM}")
        rows.append((DIM * ca * al / (ca * al + DIM), -k * cq * al))
    return np.array(rows)


def simulate_acquisition(
    pert: AcousticPerturbation,
    k: float,
    phi,
    psi,
    mesh: Mesh2D,
    coeffs: CoefficientPair,
    spectrum: SpectrumEstimate | None = None,
    operator: HelmholtzOperator | None = None,
    threads: int | None = None,
) -> AcquisitionResult:
    """Recover ``(a grad u_phi . grad u_psi, q u_phi u_psi)`` at the perturbation center.

    One perturbed solve per amplitude; the boundary pairings divided by
    ``|omega|`` are fitted to the asymptotic model (exact 2x2 solve for two
    amplitudes, least squares for more).
    """
    if len(pert.amplitudes) < 2:
        raise ValidationError("acquisition needs at least two amplitudes")
    mat = acquisition_rows(pert, k)
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise NumericalError("acquisition system is singular (e.g. c_q = 0 or k = 0 makes q u u unrecoverable)")
    cells = pert.cells(mesh)
    area = float(mesh.areas[cells].sum())
    op = operator or HelmholtzOperator(mesh, coeffs)
    phi = as_illumination(phi)
    u = op.solve(k, phi, spectrum)
    psi_lift = lift(mesh, psi)

    def one(alpha):
        cb = pert.perturbed(coeffs, alpha, cells)
        ub = HelmholtzOperator(mesh, cb).solve(k, phi, None)
        return boundary_flux_pairing(ub, u, psi, cb, coeffs, k, psi_lift) / area

    amps = pert.amplitudes
    if threads == 1:
        meas = np.array([one(al) for al in amps])
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            meas = np.array(list(pool.map(one, amps)))
    sol, *_ = np.linalg.lstsq(mat, meas, rcond=None)
    diag = {"condition": float(sv[0] / sv[-1]), "residual": float(np.linalg.norm(mat @ sol - meas))}
    return AcquisitionResult(float(sol[0]), float(sol[1]), area, len(cells), amps, meas, mat, diag)


def product_pde_residual(u_i: HelmholtzSolution, u_j: HelmholtzSolution, data: PowerDensityData) -> float:
    """Relative weak residual of ``-div(a grad(u_i u_j)) = 2k e^{ij} - 2E^{ij}``.

    ``w = u_i u_j`` is the vertexwise product and ``r = K w - F`` is taken on
    interior test functions. Both ``r`` and ``F`` are measured in the
    discrete dual energy norm ``sqrt(r^T K0^{-1} r)`` (``K0`` the interior
    stiffness), the norm in which a weak residual converges on unstructured
    meshes. A zero (rounding-level) load returns the absolute residual.
    """
    if not np.isclose(u_i.k, u_j.k):
        raise ValidationError("u_i and u_j must share the frequency")
    mesh = data.mesh
    l = data.k_index(u_i.k)
    i = data.illumination_index(u_i.illumination)
    j = data.illumination_index(u_j.illumination)
    k = data.ks[l]
    w = u_i.u * u_j.u
    k_mat = fem.assemble_stiffness(mesh, data.coeffs.a).tocsr()
    load = 2.0 * k * fem.load_vector(mesh, data.e[l, i, j]) - 2.0 * fem.load_vector(mesh, data.E[l, i, j])
    inner = mesh.interior_vertices
    fac = fem.Factorization(k_mat[inner][:, inner])
    r = (k_mat @ w - load)[inner]
    f = load[inner]
    nr = np.sqrt(max(float(r @ fac.solve(r)), 0.0))
    nf = np.sqrt(max(float(f @ fac.solve(f)), 0.0))
    # a load at rounding level (e.g. constant u) counts as zero
    scale = np.sqrt(mesh.areas.sum()) * max(float(np.max(np.abs(w))), 1.0)
    return float(nr / nf) if nf > 1e-12 * scale else nr


def export_power_density(data: PowerDensityData, out_dir) -> Path:
    """One CSV per (k, i, j), i <= j, for e (vertices) and E (cells), plus ``manifest.json``."""
    out = Path(out_dir)
    files = []
    n = data.n_illuminations
    for l, k in enumerate(data.ks):
        for i in range(n):
            for j in range(i, n):
                fe = f"e_k{l}_{i}{j}.csv"
                fE = f"E_k{l}_{i}{j}.csv"
                io.write_csv(data.e[l, i, j], out / fe, coords=data.mesh.vertices)
                io.write_csv(data.E[l, i, j], out / fE, coords=data.mesh.barycenters)
                files.append({"file": fe, "field": "e", "entity": "vertex", "k": io.fmt(k), "k_index": l, "i": i, "j": j})
                files.append({"file": fE, "field": "E", "entity": "cell", "k": io.fmt(k), "k_index": l, "i": i, "j": j})
    manifest = {
        "frequencies": [io.fmt(k) for k in data.ks],
        "illuminations": [ill.source for ill in data.illuminations],
        "region": data.region,
        "n_vertices": data.mesh.n_vertices,
        "n_cells": data.mesh.n_triangles,
        "files": files,
    }
    return io.write_json(out / "manifest.json", manifest)


def load_power_density(manifest_path, mesh: Mesh2D, coeffs: CoefficientPair) -> PowerDensityData:
    """Inverse of :func:`export_power_density`."""
    from .illumination import parse_illumination

    manifest_path = Path(manifest_path)
    m = io.read_json(manifest_path)
    try:
        ks = np.array([float(k) for k in m["frequencies"]])
        ills = [parse_illumination(s) for s in m["illuminations"]]
        files = m["files"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{manifest_path}: malformed manifest ({exc})") from None
    if m.get("n_vertices") != mesh.n_vertices or m.get("n_cells") != mesh.n_triangles:
        raise ValidationError(f"{manifest_path}: data does not match the mesh")
    n = len(ills)
    e = np.zeros((len(ks), n, n, mesh.n_vertices))
    E = np.zeros((len(ks), n, n, mesh.n_triangles))
    for f in files:
        vals = io.read_csv(manifest_path.parent / f["file"])
        target = e if f["field"] == "e" else E
        target[f["k_index"], f["i"], f["j"]] = vals
        target[f["k_index"], f["j"], f["i"]] = vals
    return PowerDensityData(mesh, coeffs, ks, ills, e, E, m.get("region", OMEGA))
