"""Coefficient pairs ``(a, q)`` built from inclusion geometry.

Inclusions are sampled at cell barycenters. An inclusion either overrides
the current value inside its support (``mode="set"``) or adds to it
(``mode="add"``); smoothed balls always add ``value * sigma((r - |x-P|)/w)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EllipticityError, ValidationError
from .mesh import Mesh2D

log = logging.getLogger(__name__)

SHAPES = ("rectangle", "ellipse", "star_curve", "smoothed_ball")


@dataclass(frozen=True)
class Inclusion:
    """One inclusion.

    ``params`` by shape:

    - rectangle: ``corner1``, ``corner2`` (opposite corners of an axis-aligned box)
    - ellipse: ``center``, ``axis_x``, ``axis_y`` (full axis lengths)
    - star_curve: ``center``, ``r0``, ``sines`` (pairs ``(n, c_n)``), boundary
      ``r(t) = r0 + sum c_n sin(n t)``
    - smoothed_ball: ``center``, ``radius``, ``width``
    """

    shape: str
    params: dict
    a: float = 0.0
    q: float = 0.0
    mode: str = "set"

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown inclusion shape {self.shape!r}")
        if self.mode not in ("set", "add"):
            raise ValidationError(f"unknown inclusion mode {self.mode!r}")

    def indicator(self, pts: np.ndarray) -> np.ndarray:
        """Membership weight in [0, 1] at each point."""
        x, y = pts[:, 0], pts[:, 1]
        p = self.params
        if self.shape == "rectangle":
            (x0, y0), (x1, y1) = p["corner1"], p["corner2"]
            inside = (x >= min(x0, x1)) & (x <= max(x0, x1)) & (y >= min(y0, y1)) & (y <= max(y0, y1))
            return inside.astype(float)
        if self.shape == "ellipse":
            cx, cy = p["center"]
            ax, ay = 0.5 * p["axis_x"], 0.5 * p["axis_y"]
            return (((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 <= 1.0).astype(float)
        if self.shape == "star_curve":
            cx, cy = p["center"]
            dx, dy = x - cx, y - cy
            t = np.arctan2(dy, dx)
            rho = p["r0"] + sum(c * np.sin(n * t) for n, c in p["sines"])
            return (np.hypot(dx, dy) <= rho).astype(float)
        cx, cy = p["center"]
        w = p["width"]
        s = (p["radius"] - np.hypot(x - cx, y - cy)) / w
        return 0.5 * (1.0 + np.tanh(0.5 * s))  # logistic sigma(s), overflow-free

    def bounding_radius(self) -> tuple[tuple[float, float], float]:
        p = self.params
        if self.shape == "rectangle":
            (x0, y0), (x1, y1) = p["corner1"], p["corner2"]
            c = (0.5 * (x0 + x1), 0.5 * (y0 + y1))
            return c, 0.5 * math.hypot(x1 - x0, y1 - y0)
        if self.shape == "ellipse":
            return tuple(p["center"]), 0.5 * max(p["axis_x"], p["axis_y"])
        if self.shape == "star_curve":
            return tuple(p["center"]), p["r0"] + sum(abs(c) for _, c in p["sines"])
        return tuple(p["center"]), p["radius"]


@dataclass(frozen=True, eq=False)
class CoefficientPair:
    """Cellwise ``a`` and ``q`` with their ellipticity/positivity bounds."""

    mesh: Mesh2D
    a: np.ndarray
    q: np.ndarray
    labels: np.ndarray = field(default=None)
    description: str = ""

    def __post_init__(self):
        a = np.array(np.broadcast_to(np.asarray(self.a, dtype=float), (self.mesh.n_triangles,)))
        q = np.array(np.broadcast_to(np.asarray(self.q, dtype=float), (self.mesh.n_triangles,)))
        if np.any(~np.isfinite(a)) or np.any(~np.isfinite(q)):
            raise ValidationError("coefficients must be finite")
        if a.min() <= 0:
            raise EllipticityError(f"a must be positive, min is {a.min()!r}")
        if q.min() <= 0:
            raise EllipticityError(f"q must be positive, min is {q.min()!r}")
        labels = np.zeros(len(a), dtype=np.int64) if self.labels is None else np.asarray(self.labels, dtype=np.int64)
        for name, arr in (("a", a), ("q", q), ("labels", labels)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def bounds(self) -> dict:
        """``lambda <= a <= Lambda`` and ``beta1 <= q <= beta2``."""
        return {
            "lambda": float(self.a.min()),
            "Lambda": float(self.a.max()),
            "beta1": float(self.q.min()),
            "beta2": float(self.q.max()),
        }

    def q_vertex(self) -> np.ndarray:
        """q at vertices as the area-weighted mean of incident cells."""
        return self.mesh.vertex_cell_average(self.q)

    def restrict(self, sub: Mesh2D) -> "CoefficientPair":
        if sub.parent_triangles is None:
            raise ValidationError("restrict needs a submesh with a parent map")
        t = sub.parent_triangles
        return CoefficientPair(sub, self.a[t], self.q[t], self.labels[t], self.description)

    def scaled(self, ca: float = 1.0, cq: float = 1.0) -> "CoefficientPair":
        return CoefficientPair(self.mesh, ca * self.a, cq * self.q, self.labels, self.description)


def build_coefficients(
    mesh: Mesh2D, inclusions=(), a0: float = 1.0, q0: float = 1.0, description: str = ""
) -> CoefficientPair:
    """Sample background plus inclusions at cell barycenters.

    ``labels`` records the 1-based index of the last sharp inclusion covering
    each cell (0 for background). Inclusions leaving the mesh's bounding
    circle are clipped with a warning.
    """
    pts = mesh.barycenters
    a = np.full(mesh.n_triangles, float(a0))
    q = np.full(mesh.n_triangles, float(q0))
    labels = np.zeros(mesh.n_triangles, dtype=np.int64)
    center = mesh.vertices.mean(axis=0)
    mesh_r = np.linalg.norm(mesh.vertices - center, axis=1).max()
    for n, inc in enumerate(inclusions, start=1):
        c, r = inc.bounding_radius()
        if np.linalg.norm(np.asarray(c) - center) + r > mesh_r * (1 + 1e-12):
            log.warning("inclusion %d (%s) extends outside the mesh and is clipped", n, inc.shape)
        w = inc.indicator(pts)
        if inc.shape == "smoothed_ball" or inc.mode == "add":
            a = a + inc.a * w
            q = q + inc.q * w
            if inc.shape != "smoothed_ball":
                labels[w > 0] = n
        else:
            inside = w > 0
            a[inside] = inc.a
            q[inside] = inc.q
            labels[inside] = n
    return CoefficientPair(mesh, a, q, labels, description)


def homogeneous(mesh: Mesh2D, a0: float = 1.0, q0: float = 1.0) -> CoefficientPair:
    return CoefficientPair(mesh, a0, q0, description=f"homogeneous a={a0} q={q0}")


def paper_2d_inclusions(ellipse_axes=(0.2, 0.3)) -> list[Inclusion]:
    """Rectangle B, star-shaped C and ellipse E on a unit background.

    ``ellipse_axes`` are the (horizontal, vertical) full axis lengths.
    """
    return [
        Inclusion("rectangle", {"corner1": (0.0, 0.4), "corner2": (0.3, 0.5)}, a=2.0, q=2.0),
        Inclusion(
            "star_curve",
            {"center": (0.3, -0.2), "r0": 0.20, "sines": ((5, 0.03), (15, -0.02), (25, 0.01))},
            a=1.2,
            q=1.8,
        ),
        Inclusion(
            "ellipse",
            {"center": (-0.3, 0.1), "axis_x": ellipse_axes[0], "axis_y": ellipse_axes[1]},
            a=2.5,
            q=1.2,
        ),
    ]


FOUR_BALL_CENTER_OFFSET = 0.35
FOUR_BALL_RADIUS = 0.2


def four_ball_inclusions(alphas, betas, width: float = 0.02) -> list[Inclusion]:
    """Smoothed balls ``B(P_i, 0.2)`` at ``P = (+-0.35, +-0.35)`` adding ``alpha_i`` to a, ``beta_i`` to q.

    Ball order: (-c,-c), (-c,c), (c,-c), (c,c).
    """
    c, r = FOUR_BALL_CENTER_OFFSET, FOUR_BALL_RADIUS
    centers = [(-c, -c), (-c, c), (c, -c), (c, c)]
    if len(alphas) != 4 or len(betas) != 4:
        raise ValidationError("four-ball family needs four alphas and four betas")
    return [
        Inclusion("smoothed_ball", {"center": p, "radius": r, "width": width}, a=float(al), q=float(be), mode="add")
        for p, al, be in zip(centers, alphas, betas)
    ]


def parse_coefficients(spec: str, mesh: Mesh2D, width: float = 0.02) -> CoefficientPair:
    """Coefficients from a short description.

    ``homogeneous``, ``homogeneous:A,Q``, ``paper-2d``,
    ``balls:a1,a2,a3,a4,b1,b2,b3,b4``, or a path to a CSV file with columns
    ``id,a,q`` (one row per cell).
    """
    from .io import read_coefficients_csv

    spec = spec.strip()
    if spec == "homogeneous":
        return homogeneous(mesh)
    if spec.startswith("homogeneous:"):
        vals = [float(v) for v in spec.split(":", 1)[1].split(",")]
        if len(vals) != 2:
            raise ValidationError("homogeneous:A,Q needs two values")
        return homogeneous(mesh, *vals)
    if spec == "paper-2d":
        return build_coefficients(mesh, paper_2d_inclusions(), description="paper-2d")
    if spec.startswith("balls:"):
        vals = [float(v) for v in spec.split(":", 1)[1].split(",")]
        if len(vals) != 8:
            raise ValidationError("balls: needs eight comma-separated values")
        return build_coefficients(mesh, four_ball_inclusions(vals[:4], vals[4:], width), description=spec)
    a, q = read_coefficients_csv(spec, mesh.n_triangles)
    return CoefficientPair(mesh, a, q, description=spec)
