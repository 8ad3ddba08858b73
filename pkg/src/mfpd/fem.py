"""P1 Lagrange finite elements on triangles.

Coefficients enter assembly cellwise (P0). Vertex-valued coefficients are
averaged to the barycenter first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EigenvalueError, EllipticityError, SolverError, ValidationError
from .mesh import Mesh2D

log = logging.getLogger(__name__)

SOLVE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal (``"vertex"``) or cellwise (``"cell"``) scalar values on a mesh."""

    mesh: Mesh2D
    values: np.ndarray
    kind: str = "vertex"
    unit: str = ""

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True).reshape(-1)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        expected = {"vertex": self.mesh.n_vertices, "cell": self.mesh.n_triangles}.get(self.kind)
        if expected is None:
            raise ValidationError(f"unknown field kind {self.kind!r}")
        if len(vals) != expected:
            raise ValidationError(f"{self.kind} field needs {expected} values, got {len(vals)}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("field values must be finite")

    def cell_values(self) -> np.ndarray:
        if self.kind == "cell":
            return self.values
        return self.mesh.cell_average(self.values)


def cell_values(mesh: Mesh2D, coeff) -> np.ndarray:
    """Per-cell samples of a coefficient given as scalar, ScalarField or array.

    Arrays are interpreted by length: one value per triangle is P0, one per
    vertex is P1 and gets averaged to the barycenter.
    """
    if isinstance(coeff, ScalarField):
        return coeff.cell_values()
    arr = np.asarray(coeff, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.n_triangles, float(arr))
    arr = arr.reshape(-1)
    if len(arr) == mesh.n_triangles:
        return arr
    if len(arr) == mesh.n_vertices:
        return mesh.cell_average(arr)
    raise ValidationError(
        f"coefficient has {len(arr)} values; expected {mesh.n_triangles} (cells) or {mesh.n_vertices} (vertices)"
    )


def basis_gradients(mesh: Mesh2D) -> np.ndarray:
    """Gradients of the three P1 hat functions on every triangle, shape (M, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    two_area = mesh.signed_areas * 2.0
    g = np.empty((mesh.n_triangles, 3, 2))
    g[:, 0, 0] = y[:, 1] - y[:, 2]
    g[:, 1, 0] = y[:, 2] - y[:, 0]
    g[:, 2, 0] = y[:, 0] - y[:, 1]
    g[:, 0, 1] = x[:, 2] - x[:, 1]
    g[:, 1, 1] = x[:, 0] - x[:, 2]
    g[:, 2, 1] = x[:, 1] - x[:, 0]
    return g / two_area[:, None, None]


def _scatter(mesh, local):
    rows = np.repeat(mesh.triangles, 3, axis=1).reshape(-1)
    cols = np.tile(mesh.triangles, (1, 3)).reshape(-1)
    n = mesh.n_vertices
    return sp.csr_matrix((local.reshape(-1), (rows, cols)), shape=(n, n))


def assemble_stiffness(mesh: Mesh2D, a=1.0) -> sp.csr_matrix:
    """Matrix of the form ``(u, v) -> int a grad u . grad v``."""
    ac = cell_values(mesh, a)
    if np.any(~(ac > 0)):
        bad = int(np.flatnonzero(~(ac > 0))[0])
        raise EllipticityError(f"coefficient must be positive; cell {bad} has value {ac[bad]!r}")
    g = basis_gradients(mesh)
    local = np.einsum("cid,cjd->cij", g, g) * (ac * mesh.areas)[:, None, None]
    return _scatter(mesh, local)


_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def assemble_mass(mesh: Mesh2D, q=1.0, check_positive: bool = True) -> sp.csr_matrix:
    """Matrix of the form ``(u, v) -> int q u v`` with exact P1 integration."""
    qc = cell_values(mesh, q)
    if check_positive and np.any(~(qc > 0)):
        bad = int(np.flatnonzero(~(qc > 0))[0])
        raise EllipticityError(f"coefficient must be positive; cell {bad} has value {qc[bad]!r}")
    local = _MASS_REF[None] * (qc * mesh.areas)[:, None, None]
    return _scatter(mesh, local)


def load_vector(mesh: Mesh2D, f) -> np.ndarray:
    """``int f v_i`` for each hat function; ``f`` per vertex (P1) or per cell (P0)."""
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        f = np.full(mesh.n_triangles, float(f))
    if len(f) == mesh.n_triangles and (len(f) != mesh.n_vertices):
        vals = np.repeat((f * mesh.areas / 3.0)[:, None], 3, axis=1)
        out = np.zeros(mesh.n_vertices)
        np.add.at(out, mesh.triangles, vals)
        return out
    return assemble_mass(mesh, 1.0) @ f


def gradient_load_vector(mesh: Mesh2D, coeff_cells, grad_cells) -> np.ndarray:
    """``int c w . grad v_i`` for a cellwise coefficient ``c`` and cellwise vector field ``w``."""
    g = basis_gradients(mesh)
    vals = np.einsum("cid,cd->ci", g, grad_cells) * (coeff_cells * mesh.areas)[:, None]
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles, vals)
    return out


@dataclass
class SparseSystem:
    matrix: sp.spmatrix
    rhs: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class ReducedSystem:
    """Dirichlet-eliminated system ``A_ff x_f = b_f - A_fc g``."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    constrained: np.ndarray
    values: np.ndarray
    size: int

    def expand(self, x_free) -> np.ndarray:
        x = np.empty(self.size)
        x[self.free] = x_free
        x[self.constrained] = self.values
        return x


def apply_dirichlet(system: SparseSystem, boundary_values) -> ReducedSystem:
    """Eliminate prescribed unknowns.

    ``boundary_values`` is a mapping ``vertex -> value`` or a pair of
    arrays ``(indices, values)``.
    """
    if isinstance(boundary_values, dict):
        idx = np.fromiter(boundary_values.keys(), dtype=np.int64, count=len(boundary_values))
        vals = np.fromiter(boundary_values.values(), dtype=float, count=len(boundary_values))
    else:
        idx, vals = boundary_values
        idx = np.asarray(idx, dtype=np.int64).reshape(-1)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), idx.shape).copy()
    n = system.matrix.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValidationError(f"constraint on index outside 0..{n - 1}")
    order = np.argsort(idx)
    idx, vals = idx[order], vals[order]
    if len(np.unique(idx)) != len(idx):
        raise ValidationError("duplicate constrained index")
    mask = np.ones(n, dtype=bool)
    mask[idx] = False
    free = np.flatnonzero(mask)
    a = sp.csr_matrix(system.matrix)
    a_ff = a[free][:, free]
    rhs = np.asarray(system.rhs, dtype=float)[free] - a[free][:, idx] @ vals
    return ReducedSystem(matrix=sp.csr_matrix(a_ff), rhs=rhs, free=free, constrained=idx, values=vals, size=n)


def _relres(a, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(a @ x - b)
    return r / nb if nb > 0 else r


class Factorization:
    """Sparse LU of a (possibly indefinite) symmetric matrix, reusable across right-hand sides."""

    def __init__(self, a):
        self.matrix = sp.csc_matrix(a)
        n = self.matrix.shape[0]
        self._lu = None
        if n == 0:
            return
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:
            # SuperLU reports exact singularity this way
            raise SolverError(f"factorization failed: {exc}") from None

    def solve(self, b, rtol: float = SOLVE_RTOL) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.matrix.shape[0] == 0:
            return np.zeros(0)
        if not np.any(b):
            return np.zeros_like(b)
        x = self._lu.solve(b)
        res = _relres(self.matrix, x, b) if np.all(np.isfinite(x)) else np.inf
        for _ in range(3):
            if res <= rtol:
                break
            # iterative refinement
            x = x + self._lu.solve(b - self.matrix @ x)
            res = _relres(self.matrix, x, b)
        if not res <= rtol:
            x, res = _minres(self.matrix, b, x if np.all(np.isfinite(x)) else None, rtol)
        if not res <= rtol:
            raise SolverError("linear solve did not reach the residual tolerance", residual=res)
        return x


def _minres(a, b, x0, rtol):
    d = np.abs(a.diagonal())
    d[d == 0] = 1.0
    prec = sp.diags(1.0 / d)
    x, info = spla.minres(a, b, x0=x0, M=prec, rtol=rtol * 0.1, maxiter=20 * a.shape[0] + 100)
    return x, _relres(a, x, b)


def solve_spd(a, b) -> np.ndarray:
    """Solve ``A x = b`` to relative residual 1e-10.

    Uses sparse LU with iterative refinement; falls back to diagonally
    preconditioned MINRES if the factorization is not accurate enough.
    Symmetric indefinite matrices are accepted.
    """
    a = sp.csc_matrix(a)
    if a.shape[0] == 0:
        return np.zeros(0)
    if sp.linalg.norm(a - a.T, ord=np.inf) > 1e-12 * max(sp.linalg.norm(a, ord=np.inf), 1.0):
        raise ValidationError("matrix is not symmetric")
    fac = Factorization(a)
    return fac.solve(b)


def smallest_eigenvalues(k_mat, m_mat, count: int = 2, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0):
    """Smallest ``count`` eigenvalues of ``K x = lambda M x`` (K, M symmetric positive definite).

    Shift-and-invert (shift 0) subspace iteration on a block of
    ``count + 2`` vectors with Rayleigh-Ritz projection; the extra vectors
    speed up convergence of the wanted pairs. Stops when every wanted Ritz
    value changes by less than ``tol`` (relative) between sweeps and its
    residual ``|K x - lambda M x| / |lambda M x|`` is below 1e-8.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors M-orthonormal.
    """
    if count < 1:
        raise ValidationError("count must be at least 1")
    k_mat = sp.csc_matrix(k_mat)
    m_mat = sp.csr_matrix(m_mat)
    n = k_mat.shape[0]
    if n < count:
        raise ValidationError(f"system of size {n} has fewer than {count} eigenvalues")
    block = min(n, count + 2)
    fac = Factorization(k_mat)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, block))
    prev = None
    theta = None
    for it in range(1, max_iter + 1):
        y = fac._lu.solve(m_mat @ x)
        kr = y.T @ (k_mat @ y)
        mr = y.T @ (m_mat @ y)
        kr = 0.5 * (kr + kr.T)
        mr = 0.5 * (mr + mr.T)
        theta, v = scipy.linalg.eigh(kr, mr)
        x = y @ v
        if prev is not None:
            change = np.abs(theta[:count] - prev[:count]) / np.abs(theta[:count])
            if np.all(change < tol):
                mx = m_mat @ x[:, :count]
                res = np.linalg.norm(k_mat @ x[:, :count] - mx * theta[:count], axis=0) / (
                    np.abs(theta[:count]) * np.linalg.norm(mx, axis=0)
                )
                if np.all(res <= 1e-8):
                    log.debug("eigenvalues converged after %d sweeps", it)
                    return theta[:count].copy(), x[:, :count].copy()
        prev = theta
    raise EigenvalueError(
        f"eigenvalue iteration did not converge in {max_iter} sweeps",
        partial=None if theta is None else theta[:count].copy(),
    )


def p1_gradient(mesh: Mesh2D, u) -> np.ndarray:
    """Exact gradient of the P1 interpolant of vertex values ``u``, one 2-vector per cell."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != mesh.n_vertices:
        raise ValidationError("p1_gradient needs one value per vertex")
    return np.einsum("cid,ci->cd", basis_gradients(mesh), u[mesh.triangles])


def recover_vertex_gradient(mesh: Mesh2D, grad_cells) -> np.ndarray:
    """Area-weighted average of incident-cell gradients at each vertex."""
    return mesh.vertex_cell_average(grad_cells)


def l2_norm(mesh: Mesh2D, field_values) -> float:
    """L2 norm over the mesh, exact for P0 (per cell) and P1 (per vertex) data."""
    if isinstance(field_values, ScalarField):
        kind, vals = field_values.kind, field_values.values
    else:
        vals = np.asarray(field_values, dtype=float).reshape(-1)
        if len(vals) == mesh.n_triangles and len(vals) != mesh.n_vertices:
            kind = "cell"
        elif len(vals) == mesh.n_vertices:
            kind = "vertex"
        else:
            raise ValidationError("field length matches neither vertices nor cells")
    if kind == "cell":
        return float(np.sqrt(np.sum(mesh.areas * vals**2)))
    v = vals[mesh.triangles]
    # exact integral of a squared linear function over a triangle
    sq = (np.sum(v**2, axis=1) + np.sum(v, axis=1) ** 2) / 12.0
    return float(np.sqrt(np.sum(mesh.areas * sq)))


# 7-point degree-5 rule on the reference triangle (barycentric coordinates, weights sum to 1)
_A1, _B1 = 0.0597158717897698, 0.4701420641051151
_A2, _B2 = 0.7974269853530873, 0.1012865073234563
_W0, _W1, _W2 = 0.225, 0.1323941527885062, 0.1259391805448271
QUAD7_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1],
        [_B1, _A1, _B1],
        [_B1, _B1, _A1],
        [_A2, _B2, _B2],
        [_B2, _A2, _B2],
        [_B2, _B2, _A2],
    ]
)
QUAD7_WEIGHTS = np.array([_W0, _W1, _W1, _W1, _W2, _W2, _W2])


def l2_error_against(mesh: Mesh2D, u, exact) -> tuple[float, float]:
    """``(||u_h - exact||, ||exact||)`` in L2 with a degree-5 quadrature rule.

    ``exact`` is a vectorized callable ``exact(x1, x2)``.
    """
    u = np.asarray(u, dtype=float)
    p = mesh.vertices[mesh.triangles]
    pts = np.einsum("qk,ckd->cqd", QUAD7_BARY, p)
    uh = np.einsum("qk,ck->cq", QUAD7_BARY, u[mesh.triangles])
    ex = exact(pts[..., 0], pts[..., 1])
    w = mesh.areas[:, None] * QUAD7_WEIGHTS[None]
    return float(np.sqrt(np.sum(w * (uh - ex) ** 2))), float(np.sqrt(np.sum(w * ex**2)))
