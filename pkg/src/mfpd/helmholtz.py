"""Dirichlet problems ``-div(a grad u) - k q u = 0``, ``u = phi`` on the boundary.

:class:`HelmholtzOperator` assembles stiffness and mass once per
(mesh, coefficients) pair and reuses one factorization per frequency
across illuminations. It holds no mutable state besides those caches, so
concurrent solves on a shared operator are safe.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import fem
from .coefficients import CoefficientPair
from .errors import ResonanceError, ValidationError
from .illumination import Illumination, as_illumination
from .mesh import Mesh2D

log = logging.getLogger(__name__)

DEFAULT_GAP_TOL = 0.05


@dataclass(frozen=True)
class SpectrumEstimate:
    lambda0: float
    lambda1: float
    n_vertices: int = 0
    description: str = ""

    def __post_init__(self):
        if not 0 < self.lambda0 < self.lambda1:
            raise ValidationError(f"need 0 < lambda0 < lambda1, got {self.lambda0}, {self.lambda1}")

    @property
    def values(self):
        return (self.lambda0, self.lambda1)


@dataclass(eq=False)
class HelmholtzSolution:
    mesh: Mesh2D
    k: float
    illumination: Illumination
    u: np.ndarray
    grad: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @cached_property
    def vertex_grad(self) -> np.ndarray:
        return fem.recover_vertex_gradient(self.mesh, self.grad)

    @property
    def u_cells(self) -> np.ndarray:
        """u at cell barycenters."""
        return self.mesh.cell_average(self.u)


def check_resonance(k: float, spectrum: SpectrumEstimate | None, gap_tol: float = DEFAULT_GAP_TOL) -> dict:
    """Resonance guard; returns diagnostics or raises :class:`ResonanceError`.

    Frequencies clearly above the second estimated eigenvalue are accepted
    with ``above_lambda1`` set, since higher eigenvalues are not estimated.
    """
    if spectrum is None:
        return {"resonance_gap": None, "above_lambda1": None}
    gaps = [abs(k - lam) / lam for lam in spectrum.values]
    i = int(np.argmin(gaps))
    if gaps[i] <= gap_tol:
        raise ResonanceError(k, spectrum.values[i], gaps[i], gap_tol)
    above = bool(k > spectrum.lambda1)
    if above:
        log.warning("k=%g is above the estimated second eigenvalue %g; higher resonances are not guarded", k, spectrum.lambda1)
    return {"resonance_gap": float(min(gaps)), "above_lambda1": above}


class HelmholtzOperator:
    def __init__(self, mesh: Mesh2D, coeffs: CoefficientPair):
        if coeffs.mesh is not mesh and coeffs.mesh.n_triangles != mesh.n_triangles:
            raise ValidationError("coefficients live on a different mesh")
        self.mesh = mesh
        self.coeffs = coeffs
        self.stiffness = fem.assemble_stiffness(mesh, coeffs.a)
        self.mass = fem.assemble_mass(mesh, coeffs.q)
        self.boundary = mesh.boundary_vertices
        self.interior = mesh.interior_vertices
        self._factors: dict[float, fem.Factorization] = {}
        self._lock = threading.Lock()
        self._spectrum = None

    def reduced(self, k: float) -> sp.csr_matrix:
        a = (self.stiffness - k * self.mass).tocsr()
        return a[self.interior][:, self.interior]

    def factor(self, k: float) -> fem.Factorization:
        with self._lock:
            fac = self._factors.get(k)
        if fac is None:
            fac = fem.Factorization(self.reduced(k))
            with self._lock:
                self._factors.setdefault(k, fac)
        return fac

    def spectrum(self) -> SpectrumEstimate:
        if self._spectrum is None:
            self._spectrum = estimate_spectrum(self.mesh, self.coeffs, operator=self)
        return self._spectrum

    def solve(self, k: float, phi, spectrum: SpectrumEstimate | None = None, gap_tol: float = DEFAULT_GAP_TOL) -> HelmholtzSolution:
        """Solve with boundary datum ``phi`` (an illumination or its source string)."""
        if k < 0:
            raise ValidationError("k must be nonnegative")
        phi = as_illumination(phi)
        diag = check_resonance(k, spectrum, gap_tol)
        bvals = phi.at(self.mesh.vertices[self.boundary])
        full = (self.stiffness - k * self.mass).tocsr()
        rhs = -(full[self.interior][:, self.boundary] @ bvals)
        fac = self.factor(k)
        x = fac.solve(rhs)
        u = np.empty(self.mesh.n_vertices)
        u[self.interior] = x
        u[self.boundary] = bvals
        nb = np.linalg.norm(rhs)
        diag["residual"] = float(np.linalg.norm(fac.matrix @ x - rhs) / nb) if nb > 0 else 0.0
        diag["k"] = float(k)
        return HelmholtzSolution(self.mesh, float(k), phi, u, fem.p1_gradient(self.mesh, u), diag)

    def solve_homogeneous(self, k: float, rhs_full: np.ndarray) -> np.ndarray:
        """Solve ``(K - k M) w = f`` on interior rows with ``w = 0`` on the boundary."""
        w = np.zeros(self.mesh.n_vertices)
        w[self.interior] = self.factor(k).solve(np.asarray(rhs_full)[self.interior])
        return w


def estimate_spectrum(mesh: Mesh2D, coeffs: CoefficientPair, operator: HelmholtzOperator | None = None) -> SpectrumEstimate:
    """Two smallest Dirichlet eigenvalues of ``-div(a grad u) = lambda q u``."""
    op = operator or HelmholtzOperator(mesh, coeffs)
    i = op.interior
    k_red = op.stiffness.tocsr()[i][:, i]
    m_red = op.mass.tocsr()[i][:, i]
    lam, _ = fem.smallest_eigenvalues(k_red, m_red, count=2)
    return SpectrumEstimate(float(lam[0]), float(lam[1]), mesh.n_vertices, coeffs.description)


def solve_helmholtz(
    mesh: Mesh2D,
    coeffs: CoefficientPair,
    k: float,
    phi,
    spectrum: SpectrumEstimate | None = None,
    gap_tol: float = DEFAULT_GAP_TOL,
) -> HelmholtzSolution:
    return HelmholtzOperator(mesh, coeffs).solve(k, phi, spectrum, gap_tol)


@dataclass
class NeumannSeriesReport:
    errors: list[float]
    ratios: list[float]
    diverged: bool
    message: str = ""

    @property
    def stabilized_ratio(self) -> float | None:
        return self.ratios[-1] if self.ratios else None


def neumann_series_check(
    mesh: Mesh2D,
    coeffs: CoefficientPair,
    k0: float,
    k: float,
    n_terms: int,
    phi,
    spectrum: SpectrumEstimate | None = None,
    operator: HelmholtzOperator | None = None,
) -> NeumannSeriesReport:
    """Partial sums of the frequency expansion of ``u_k`` around ``k0``.

    ``w_0 = u_{k0}`` and ``w_{n+1}`` solves ``(K - k0 M) w_{n+1} = (k - k0) M w_n``
    with zero boundary values; ``S_n = w_0 + ... + w_n``. Returns
    ``||S_n - u_k||_{L2}`` for ``n = 0..n_terms``. Growth over three
    consecutive terms is reported as divergence instead of raising.
    """
    op = operator or HelmholtzOperator(mesh, coeffs)
    exact = op.solve(k, phi, spectrum).u
    w = op.solve(k0, phi, spectrum).u
    s = w.copy()
    errors = [fem.l2_norm(mesh, s - exact)]
    growth = 0
    diverged = False
    for _ in range(n_terms):
        w = op.solve_homogeneous(k0, (k - k0) * (op.mass @ w))
        s = s + w
        errors.append(fem.l2_norm(mesh, s - exact))
        growth = growth + 1 if errors[-1] > errors[-2] else 0
        if growth >= 3:
            diverged = True
            break
    ratios = [e1 / e0 for e0, e1 in zip(errors[:-1], errors[1:]) if e0 > 0]
    msg = "partial sums diverge (error grew over 3 consecutive terms)" if diverged else ""
    if diverged:
        log.info("Neumann series around k0=%g diverges at k=%g", k0, k)
    return NeumannSeriesReport(errors, ratios, diverged, msg)
