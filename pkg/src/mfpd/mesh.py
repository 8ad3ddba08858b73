"""Triangular meshes of disk-like domains.

Meshes are generated from concentric rings of vertices. Ring ``i`` sits at
radius ``i * dr`` and carries a vertex count proportional to its
circumference; consecutive rings are stitched by an angular merge walk, which
gives a conforming, near-uniform triangulation without any external mesher.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import MeshFormatError, MeshResourceError, ValidationError

BOUNDARY_MARKER = 1
SUBDOMAIN_BOUNDARY_MARKER = 2
MAX_TRIANGLES = 1_000_000
DUPLICATE_TOL = 1e-12


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Conforming triangulation with region tags and marked boundary edges.

    ``parent_vertices`` / ``parent_triangles`` are only set on meshes
    produced by :func:`submesh`; they map local indices back to the mesh the
    selection was taken from and are not part of the file format.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    regions: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    parent_vertices: np.ndarray | None = field(default=None)
    parent_triangles: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, float).reshape(-1, 2))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int64).reshape(-1, 3))
        object.__setattr__(self, "regions", _frozen(self.regions, np.int64).reshape(-1))
        object.__setattr__(self, "boundary_edges", _frozen(self.boundary_edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, "boundary_markers", _frozen(self.boundary_markers, np.int64).reshape(-1))
        for name in ("parent_vertices", "parent_triangles"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val, np.int64))
        self._validate()

    def _validate(self):
        nv = len(self.vertices)
        if len(self.regions) != len(self.triangles):
            raise ValidationError("one region tag per triangle is required")
        if len(self.boundary_markers) != len(self.boundary_edges):
            raise ValidationError("one marker per boundary edge is required")
        for name, idx in (("triangle", self.triangles), ("boundary edge", self.boundary_edges)):
            if idx.size and (idx.min() < 0 or idx.max() >= nv):
                raise ValidationError(f"{name} references a vertex outside 0..{nv - 1}")
        if not np.all(np.isfinite(self.vertices)):
            raise ValidationError("vertex coordinates must be finite")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted vertex pairs."""
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = False
        return np.flatnonzero(mask)

    def max_edge_length(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).max())

    def boundary_loops(self) -> list[np.ndarray]:
        """Boundary vertex loops in edge order, each without the repeated start."""
        succ = {}
        for a, b in self.boundary_edges:
            succ[int(a)] = int(b)
        loops = []
        seen = set()
        for start in (int(e[0]) for e in self.boundary_edges):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            cur = succ[start]
            while cur != start:
                if cur in seen or cur not in succ:
                    raise ValidationError("boundary edges do not form closed loops")
                loop.append(cur)
                seen.add(cur)
                cur = succ[cur]
            loops.append(np.array(loop))
        return loops

    def vertex_cell_average(self, cell_values) -> np.ndarray:
        """Area-weighted average of incident-cell values at each vertex."""
        cell_values = np.asarray(cell_values, dtype=float)
        w = np.zeros(self.n_vertices)
        s = np.zeros((self.n_vertices,) + cell_values.shape[1:])
        for col in range(3):
            idx = self.triangles[:, col]
            np.add.at(w, idx, self.areas)
            np.add.at(s, idx, self.areas.reshape((-1,) + (1,) * (cell_values.ndim - 1)) * cell_values)
        return s / w.reshape((-1,) + (1,) * (cell_values.ndim - 1))

    def cell_average(self, vertex_values) -> np.ndarray:
        """Mean of the three vertex values of each triangle (value at the barycenter)."""
        return np.asarray(vertex_values, dtype=float)[self.triangles].mean(axis=1)

    def cells_containing(self, point, tol: float = 1e-12) -> np.ndarray:
        """All triangles containing ``point`` (several on shared edges and vertices)."""
        p = np.asarray(point, dtype=float)
        tri = self.vertices[self.triangles]
        v0 = tri[:, 0]
        d1 = tri[:, 1] - v0
        d2 = tri[:, 2] - v0
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        r = p - v0
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        return np.flatnonzero((l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1 + tol))

    def locate(self, point) -> int:
        """Index of a triangle containing ``point``; raises if outside the mesh."""
        hits = self.cells_containing(point)
        if hits.size == 0:
            raise ValidationError(f"point {tuple(np.asarray(point, dtype=float))} is outside the mesh")
        return int(hits[0])

    def barycentric(self, cell: int, point) -> np.ndarray:
        tri = self.vertices[self.triangles[cell]]
        t = np.array([[tri[0, 0], tri[1, 0], tri[2, 0]], [tri[0, 1], tri[1, 1], tri[2, 1]], [1.0, 1.0, 1.0]])
        return np.linalg.solve(t, np.array([point[0], point[1], 1.0]))


def _ring_angles(n, offset):
    return offset + 2.0 * np.pi * np.arange(n) / n


def _stitch(inner_ids, inner_ang, outer_ids, outer_ang):
    """Triangulate the annulus between two closed vertex rings."""
    ni, no = len(inner_ids), len(outer_ids)
    tris = []
    a = b = 0
    while a < ni or b < no:
        next_in = inner_ang[(a + 1) % ni] + 2 * np.pi * ((a + 1) // ni)
        next_out = outer_ang[(b + 1) % no] + 2 * np.pi * ((b + 1) // no)
        if b < no and (a >= ni or next_out <= next_in):
            tris.append((inner_ids[a % ni], outer_ids[b % no], outer_ids[(b + 1) % no]))
            b += 1
        else:
            tris.append((inner_ids[a % ni], outer_ids[b % no], inner_ids[(a + 1) % ni]))
            a += 1
    return tris


def gen_disk_mesh(radius: float, target_h: float, center=(0.0, 0.0)) -> Mesh2D:
    """Concentric-ring triangulation of the disk ``B(center, radius)``.

    Ring spacing is ``target_h * sqrt(3) / 2`` (the height of an equilateral
    triangle of side ``target_h``) and ring ``i`` holds about
    ``2*pi*r_i / target_h`` vertices, so elements are close to equilateral.
    Alternate rings are rotated by half an angular step.
    """
    if not radius > 0:
        raise ValidationError("radius must be positive")
    if not 0 < target_h < radius:
        raise ValidationError("target_h must satisfy 0 < target_h < radius")
    dr_target = target_h * math.sqrt(3.0) / 2.0
    n_rings = max(1, int(math.ceil(radius / dr_target - 1e-9)))
    projected = 2 * math.pi * radius**2 / (target_h * radius / n_rings)
    if projected > MAX_TRIANGLES:
        raise MeshResourceError(
            f"target_h={target_h} would produce about {projected:.0f} triangles (limit {MAX_TRIANGLES})"
        )
    cx, cy = float(center[0]), float(center[1])
    verts = [(cx, cy)]
    tris = []
    prev_ids = np.array([0])
    prev_ang = None
    for i in range(1, n_rings + 1):
        r = radius * i / n_rings
        n = max(6, int(math.ceil(2 * math.pi * r / target_h)))
        offset = 0.5 * (2 * math.pi / n) * (i % 2)
        ang = _ring_angles(n, offset)
        ids = np.arange(len(verts), len(verts) + n)
        if i == n_rings:
            # boundary ring: land exactly on the circle
            verts.extend(zip(cx + radius * np.cos(ang), cy + radius * np.sin(ang)))
        else:
            verts.extend(zip(cx + r * np.cos(ang), cy + r * np.sin(ang)))
        if i == 1:
            tris.extend((0, ids[j], ids[(j + 1) % n]) for j in range(n))
        else:
            tris.extend(_stitch(prev_ids, prev_ang, ids, ang))
        prev_ids, prev_ang = ids, ang
    vertices = np.array(verts)
    triangles = np.array(tris, dtype=np.int64)
    triangles = _orient_ccw(vertices, triangles)
    bnd = np.column_stack([prev_ids, np.roll(prev_ids, -1)])
    return Mesh2D(
        vertices=vertices,
        triangles=triangles,
        regions=np.zeros(len(triangles), dtype=np.int64),
        boundary_edges=bnd,
        boundary_markers=np.full(len(bnd), BOUNDARY_MARKER),
    )


def _ray_exit(center, radius, z, ang):
    """Distance from ``z`` along each direction in ``ang`` to the circle ``|x - center| = radius``."""
    w = np.asarray(z, dtype=float) - np.asarray(center, dtype=float)
    d = np.column_stack([np.cos(ang), np.sin(ang)])
    wd = d @ w
    return -wd + np.sqrt(wd**2 - w @ w + radius**2)


def _focus_radii(focus_radius, fine_h, target_h, grading, r_in):
    """Ring radii about the focus: one ring exactly at ``focus_radius``, graded spacing."""

    def h_at(s):
        return min(target_h, fine_h + grading * abs(s - focus_radius))

    step = math.sqrt(3.0) / 2.0
    inner = []
    s = focus_radius
    while True:
        nxt = s - h_at(s) * step
        if nxt < 0.5 * h_at(s) * step:
            break
        inner.append(nxt)
        s = nxt
    outer = []
    s = focus_radius
    while True:
        nxt = s + h_at(s) * step
        if nxt > r_in:
            break
        outer.append(nxt)
        s = nxt
    radii = inner[::-1] + [focus_radius] + outer
    return np.array(radii), np.array([h_at(r) for r in radii])


def gen_focused_disk_mesh(
    radius: float,
    target_h: float,
    focus,
    focus_radius: float,
    fine_h: float,
    center=(0.0, 0.0),
    grading: float = 0.3,
) -> Mesh2D:
    """Disk mesh resolving the small ball ``B(focus, focus_radius)``.

    Rings are concentric about ``focus`` with one ring exactly at
    ``focus_radius``, so the ball is a union of cells bounded by an
    inscribed polygon (cells inside carry region tag 1). Spacing grows from
    ``fine_h`` at that ring by ``grading`` per unit distance up to
    ``target_h``. Beyond ``r_in`` (60% of the distance from the focus to the
    boundary) the rings are blended onto the outer circle along rays from
    the focus; all rings stay star-shaped about the focus, which is what the
    angular stitching needs.
    """
    if not radius > 0 or not 0 < target_h < radius:
        raise ValidationError("need radius > 0 and 0 < target_h < radius")
    if not 0 < fine_h <= target_h:
        raise ValidationError("need 0 < fine_h <= target_h")
    if grading <= 0:
        raise ValidationError("grading must be positive")
    z = np.asarray(focus, dtype=float)
    c = np.asarray(center, dtype=float)
    gap = radius - float(np.linalg.norm(z - c))
    r_in = 0.6 * gap
    if not 0 < focus_radius < r_in:
        raise ValidationError(f"focus ball must satisfy 0 < focus_radius < {r_in:.6g} for this focus")
    radii, hs = _focus_radii(focus_radius, fine_h, target_h, grading, r_in)
    r_max = float(_ray_exit(c, radius, z, np.linspace(0, 2 * np.pi, 720, endpoint=False)).max())
    step = target_h * math.sqrt(3.0) / 2.0
    n_blend = max(1, int(math.ceil((r_max - radii[-1]) / step - 1e-9)))
    blend = radii[-1] + (r_max - radii[-1]) * np.arange(1, n_blend + 1) / n_blend
    all_s = np.concatenate([radii, blend])
    all_h = np.concatenate([hs, np.full(n_blend, target_h)])
    projected = sum(max(6, math.ceil(2 * math.pi * s / h)) for s, h in zip(all_s, all_h)) * 2
    if projected > MAX_TRIANGLES:
        raise MeshResourceError(f"focused mesh would produce about {projected} triangles (limit {MAX_TRIANGLES})")
    r_last = radii[-1]
    verts = [tuple(z)]
    tris = []
    prev_ids = prev_ang = None
    focus_ring = len(radii) - len(radii[radii > focus_radius]) - 1
    inside_count = 0
    for i, (s, h) in enumerate(zip(all_s, all_h)):
        n = max(6, int(math.ceil(2 * math.pi * s / h)))
        ang = _ring_angles(n, 0.5 * (2 * math.pi / n) * (i % 2))
        if s <= r_last:
            rad = np.full(n, s)
        else:
            exit_r = _ray_exit(c, radius, z, ang)
            rad = r_last + (s - r_last) / (r_max - r_last) * (exit_r - r_last)
        ids = np.arange(len(verts), len(verts) + n)
        verts.extend(zip(z[0] + rad * np.cos(ang), z[1] + rad * np.sin(ang)))
        if i == 0:
            tris.extend((0, ids[j], ids[(j + 1) % n]) for j in range(n))
        else:
            tris.extend(_stitch(prev_ids, prev_ang, ids, ang))
        if i == focus_ring:
            inside_count = len(tris)
        prev_ids, prev_ang = ids, ang
    vertices = np.array(verts)
    # outer ring lands on the circle up to rounding; snap it exactly
    d = vertices[prev_ids] - c
    vertices[prev_ids] = c + radius * d / np.linalg.norm(d, axis=1)[:, None]
    triangles = _orient_ccw(vertices, np.array(tris, dtype=np.int64))
    regions = np.zeros(len(triangles), dtype=np.int64)
    regions[:inside_count] = 1
    bnd = np.column_stack([prev_ids, np.roll(prev_ids, -1)])
    return Mesh2D(
        vertices=vertices,
        triangles=triangles,
        regions=regions,
        boundary_edges=bnd,
        boundary_markers=np.full(len(bnd), BOUNDARY_MARKER),
    )


def _orient_ccw(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    neg = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) < 0
    triangles = triangles.copy()
    triangles[neg, 1], triangles[neg, 2] = triangles[neg, 2].copy(), triangles[neg, 1].copy()
    return triangles


def _outer_edges(triangles):
    """Directed edges (CCW) that belong to exactly one triangle."""
    directed = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(directed, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return directed[counts[inv.reshape(-1)] == 1]


def submesh(mesh: Mesh2D, center, radius: float) -> Mesh2D:
    """Triangles of ``mesh`` whose barycenter lies strictly inside ``B(center, radius)``.

    Vertices are re-indexed. Boundary edges that were on the parent boundary
    keep their marker; new ones get ``SUBDOMAIN_BOUNDARY_MARKER``.
    """
    if not radius > 0:
        raise ValidationError("radius must be positive")
    c = np.asarray(center, dtype=float)
    keep = np.flatnonzero(np.linalg.norm(mesh.barycenters - c, axis=1) < radius)
    if keep.size == 0:
        raise ValidationError(f"no triangle barycenter lies in B({tuple(c)}, {radius})")
    sel = mesh.triangles[keep]
    used = np.unique(sel)
    local = np.full(mesh.n_vertices, -1, dtype=np.int64)
    local[used] = np.arange(len(used))
    outer = _outer_edges(sel)
    parent_marks = {}
    for (a, b), m in zip(mesh.boundary_edges, mesh.boundary_markers):
        parent_marks[(min(a, b), max(a, b))] = int(m)
    markers = np.array(
        [parent_marks.get((min(a, b), max(a, b)), SUBDOMAIN_BOUNDARY_MARKER) for a, b in outer],
        dtype=np.int64,
    )
    return Mesh2D(
        vertices=mesh.vertices[used],
        triangles=local[sel],
        regions=mesh.regions[keep],
        boundary_edges=local[outer],
        boundary_markers=markers,
        parent_vertices=used,
        parent_triangles=keep,
    )


def save_mesh(mesh: Mesh2D, path) -> None:
    lines = [f"$Vertices {mesh.n_vertices}"]
    lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.vertices.tolist())]
    lines.append(f"$Triangles {mesh.n_triangles}")
    lines += [
        f"{i} {a} {b} {c} {r}"
        for i, ((a, b, c), r) in enumerate(zip(mesh.triangles.tolist(), mesh.regions.tolist()))
    ]
    lines.append(f"$BoundaryEdges {len(mesh.boundary_edges)}")
    lines += [
        f"{i} {a} {b} {m}"
        for i, ((a, b), m) in enumerate(zip(mesh.boundary_edges.tolist(), mesh.boundary_markers.tolist()))
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh2D:
    text = Path(path).read_text().splitlines()
    pos = 0

    def section(header, width, types):
        nonlocal pos
        while pos < len(text) and not text[pos].strip():
            pos += 1
        if pos >= len(text):
            raise MeshFormatError(f"missing ${header} header", pos + 1)
        parts = text[pos].split()
        if len(parts) != 2 or parts[0] != f"${header}":
            raise MeshFormatError(f"expected '${header} <count>'", pos + 1)
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshFormatError(f"bad count in ${header} header", pos + 1) from None
        pos += 1
        rows = []
        for expected_id in range(count):
            if pos >= len(text):
                raise MeshFormatError(f"unexpected end of file in ${header}", pos + 1)
            parts = text[pos].split()
            if len(parts) != width + 1:
                raise MeshFormatError(f"expected {width + 1} fields", pos + 1)
            try:
                row_id = int(parts[0])
                row = [t(s) for t, s in zip(types, parts[1:])]
            except ValueError:
                raise MeshFormatError("unparseable number", pos + 1) from None
            if row_id != expected_id:
                raise MeshFormatError(f"ids must be 0-based and consecutive, got {row_id}", pos + 1)
            rows.append(row)
            pos += 1
        return rows, pos

    verts, _ = section("Vertices", 2, (float, float))
    tri_start = pos + 2
    tris, _ = section("Triangles", 4, (int, int, int, int))
    nv = len(verts)
    for n, row in enumerate(tris):
        if any(v < 0 or v >= nv for v in row[:3]):
            raise MeshFormatError(f"triangle references vertex outside 0..{nv - 1}", tri_start + n)
    edge_start = pos + 2
    edges, _ = section("BoundaryEdges", 3, (int, int, int))
    for n, row in enumerate(edges):
        if any(v < 0 or v >= nv for v in row[:2]):
            raise MeshFormatError(f"boundary edge references vertex outside 0..{nv - 1}", edge_start + n)
    tris = np.array(tris, dtype=np.int64).reshape(-1, 4)
    edges = np.array(edges, dtype=np.int64).reshape(-1, 3)
    return Mesh2D(
        vertices=np.array(verts, dtype=float).reshape(-1, 2),
        triangles=tris[:, :3],
        regions=tris[:, 3],
        boundary_edges=edges[:, :2],
        boundary_markers=edges[:, 2],
    )


def check_mesh(mesh: Mesh2D) -> list[str]:
    """Problems with the mesh invariants; an empty list means the mesh is valid."""
    problems = []
    if np.any(mesh.signed_areas <= 0):
        problems.append(f"{int(np.sum(mesh.signed_areas <= 0))} triangles are not counterclockwise")
    rounded = np.round(mesh.vertices / DUPLICATE_TOL)
    if len(np.unique(rounded, axis=0)) != mesh.n_vertices:
        problems.append("duplicate vertices")
    outer = _outer_edges(mesh.triangles)
    declared = {(min(a, b), max(a, b)) for a, b in mesh.boundary_edges.tolist()}
    found = {(min(a, b), max(a, b)) for a, b in outer.tolist()}
    if declared != found:
        problems.append("declared boundary edges differ from edges with a single incident triangle")
    try:
        mesh.boundary_loops()
    except ValidationError as exc:
        problems.append(str(exc))
    return problems
