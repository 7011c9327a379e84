"""Conforming P1 triangle meshes, their deformation, refinement and I/O.

A :class:`TriMesh` is an immutable value: every operation returns a new mesh.
Two kinds of meshes appear in the package:

* a mesh of a shape ``Omega`` itself (``unit_square_mesh``, ``disk_mesh``),
  used by the state/adjoint solvers and by the shape functional;
* a mesh of the hold-all ``D`` whose triangles carry an ``inside`` marker
  (:class:`EmbeddedDomain`).  Deformation fields live on this mesh and vanish
  on ``dD``; ``Omega`` is the union of the marked triangles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "Rectangle",
    "TriMesh",
    "EmbeddedDomain",
    "MeshError",
    "unit_square_mesh",
    "tensor_mesh",
    "holdall_square_domain",
    "disk_mesh",
    "strip_mesh",
    "snap_to_circle",
    "deform",
    "refine_congruent",
    "element_gradients",
    "signed_areas",
    "min_angles",
    "boundary_loops",
    "write_mesh",
    "read_mesh",
    "write_vtk",
]


class MeshError(ValueError):
    """Raised for invalid meshes or constraint-violating deformations."""


@dataclass(frozen=True)
class Rectangle:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    @classmethod
    def square(cls, half_width: float) -> "Rectangle":
        return cls(-half_width, half_width, -half_width, half_width)

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.xmax - self.xmin, self.ymax - self.ymin))

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        return (
            (x >= self.xmin - tol)
            & (x <= self.xmax + tol)
            & (y >= self.ymin - tol)
            & (y <= self.ymax + tol)
        )

    def on_boundary(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        return (
            (np.abs(x - self.xmin) <= tol)
            | (np.abs(x - self.xmax) <= tol)
            | (np.abs(y - self.ymin) <= tol)
            | (np.abs(y - self.ymax) <= tol)
        )


DEFAULT_HOLDALL = Rectangle.square(2.0)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh with counter-clockwise triangles.

    ``boundary_edges`` are oriented so that the mesh lies on their left; outer
    loops therefore run counter-clockwise and hole loops clockwise.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    holdall: Rectangle = DEFAULT_HOLDALL

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise MeshError("vertices must have shape (n_v, 2)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must have shape (n_t, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, shape (n_e, 2), sorted rows."""
        return self._edge_data[0]

    @cached_property
    def triangle_edges(self) -> np.ndarray:
        """Edge index of local edges (0-1, 1-2, 2-0) per triangle."""
        return self._edge_data[1]

    @cached_property
    def _edge_data(self):
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        undirected = np.sort(directed, axis=1)
        edges, inverse = np.unique(undirected, axis=0, return_inverse=True)
        inverse = inverse.reshape(3, -1).T
        return edges, inverse

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        counts = np.bincount(self.triangle_edges.T.ravel(), minlength=len(self.edges))
        if counts.size and counts.max() > 2:
            raise MeshError("non-manifold edge shared by more than two triangles")
        once = counts[self.triangle_edges.T.ravel()] == 1
        return directed[once]

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    @cached_property
    def loops(self) -> list[np.ndarray]:
        return boundary_loops(self.boundary_edges)

    @property
    def perimeter(self) -> float:
        e = self.boundary_edges
        if len(e) == 0:
            return 0.0
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.triangles, self.holdall)

    def validate(self) -> None:
        """Check the structural invariants; raise :class:`MeshError` on failure."""
        if np.any(self.areas <= 0):
            raise MeshError("non-positive triangle area")
        if not np.all(self.holdall.contains(self.vertices)):
            raise MeshError("vertex outside the hold-all domain")
        for loop in self.loops:
            if len(loop) < 3:
                raise MeshError("boundary loop with fewer than 3 edges")


@dataclass(frozen=True, eq=False)
class EmbeddedDomain:
    """A shape ``Omega`` given as the marked triangles of a mesh of ``D``."""

    mesh: TriMesh
    inside: np.ndarray

    def __post_init__(self):
        inside = np.asarray(self.inside, dtype=bool).copy()
        if inside.shape != (self.mesh.n_triangles,):
            raise MeshError("inside mask must have one entry per triangle")
        inside.setflags(write=False)
        object.__setattr__(self, "inside", inside)

    @cached_property
    def omega_vertex_ids(self) -> np.ndarray:
        return np.unique(self.mesh.triangles[self.inside])

    @cached_property
    def _omega_triangles(self) -> np.ndarray:
        lookup = np.full(self.mesh.n_vertices, -1, dtype=np.int64)
        lookup[self.omega_vertex_ids] = np.arange(len(self.omega_vertex_ids))
        return lookup[self.mesh.triangles[self.inside]]

    @cached_property
    def omega(self) -> TriMesh:
        """Submesh of ``Omega`` (vertex ``i`` is ``mesh`` vertex ``omega_vertex_ids[i]``)."""
        return TriMesh(
            self.mesh.vertices[self.omega_vertex_ids],
            self._omega_triangles,
            self.mesh.holdall,
        )

    @cached_property
    def fixed_vertices(self) -> np.ndarray:
        """Vertices on ``dD``, where admissible fields vanish."""
        return np.flatnonzero(self.mesh.holdall.on_boundary(self.mesh.vertices, 1e-10))

    def with_vertices(self, vertices: np.ndarray) -> "EmbeddedDomain":
        return EmbeddedDomain(self.mesh.with_vertices(vertices), self.inside)

    def scatter(self, omega_values: np.ndarray) -> np.ndarray:
        """Extend per-vertex values of ``omega`` by zero to all of ``mesh``."""
        out = np.zeros((self.mesh.n_vertices,) + omega_values.shape[1:])
        out[self.omega_vertex_ids] = omega_values
        return out


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * (
        (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
        - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    )


def min_angles(mesh: TriMesh) -> np.ndarray:
    """Smallest interior angle (radians) of every triangle."""
    p = mesh.vertices[mesh.triangles]
    angles = []
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        w = p[:, (i + 2) % 3] - p[:, i]
        cross = u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0]
        dot = np.einsum("ij,ij->i", u, w)
        angles.append(np.arctan2(np.abs(cross), dot))
    return np.min(angles, axis=0)


def boundary_loops(boundary_edges: np.ndarray) -> list[np.ndarray]:
    """Split directed boundary edges into closed loops of vertex indices."""
    if len(boundary_edges) == 0:
        return []
    succ = {}
    for a, b in boundary_edges.tolist():
        if a in succ:
            raise MeshError(f"boundary vertex {a} has two outgoing boundary edges")
        succ[a] = b
    loops = []
    seen = set()
    for start in sorted(succ):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        nxt = succ[start]
        while nxt != start:
            if nxt in seen or nxt not in succ:
                raise MeshError("boundary edges do not form closed loops")
            loop.append(nxt)
            seen.add(nxt)
            nxt = succ[nxt]
        loops.append(np.array(loop, dtype=np.int64))
    return loops


# --------------------------------------------------------------------------
# constructors


def tensor_mesh(xs, ys, holdall: Rectangle = DEFAULT_HOLDALL) -> TriMesh:
    """Criss-cross triangulation of the tensor grid ``xs x ys``.

    Each cell is split by its lower-left to upper-right diagonal; vertices are
    numbered row-major (x fastest).
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    ll = (j * (nx + 1) + i).ravel()
    lr, ul = ll + 1, ll + nx + 1
    ur = ul + 1
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([ll, lr, ur])
    tris[1::2] = np.column_stack([ll, ur, ul])
    return TriMesh(vertices, tris, holdall)


def unit_square_mesh(
    half_width: float, n: int, holdall: Rectangle = DEFAULT_HOLDALL
) -> TriMesh:
    """Criss-cross mesh of ``(-half_width, half_width)^2`` with ``n`` cells per side."""
    if n < 2:
        raise MeshError("need at least 2 subdivisions per side")
    if half_width <= 0:
        raise MeshError("half_width must be positive")
    inner = min(-holdall.xmin, holdall.xmax, -holdall.ymin, holdall.ymax)
    if half_width >= inner:
        raise MeshError("square must lie strictly inside the hold-all domain")
    xs = np.linspace(-half_width, half_width, n + 1)
    return tensor_mesh(xs, xs, holdall)


def holdall_square_domain(
    half_width: float,
    n: int,
    holdall: Rectangle = DEFAULT_HOLDALL,
    outer_cells: int | None = None,
) -> EmbeddedDomain:
    """Hold-all mesh of ``D`` conforming to the square ``(-half_width, half_width)^2``.

    The square gets ``n`` uniform cells per side; each of the four margins up
    to ``dD`` gets ``outer_cells`` uniform cells (by default chosen so that the
    margin cells are about as wide as the inner ones).
    """
    unit_square_mesh(half_width, n, holdall)  # argument checks
    h = 2 * half_width / n

    def axis(lo, hi):
        m_lo = outer_cells or max(1, int(round((-half_width - lo) / h)))
        m_hi = outer_cells or max(1, int(round((hi - half_width) / h)))
        return np.concatenate(
            [
                np.linspace(lo, -half_width, m_lo + 1)[:-1],
                np.linspace(-half_width, half_width, n + 1),
                np.linspace(half_width, hi, m_hi + 1)[1:],
            ]
        )

    xs = axis(holdall.xmin, holdall.xmax)
    ys = axis(holdall.ymin, holdall.ymax)
    mesh = tensor_mesh(xs, ys, holdall)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    inside = np.all(np.abs(centroids) < half_width, axis=1)
    return EmbeddedDomain(mesh, inside)


def disk_mesh(
    radius: float, n_rings: int, center=(0.0, 0.0), holdall: Rectangle = DEFAULT_HOLDALL
) -> TriMesh:
    """Ring-structured mesh of a disk: ring ``k`` carries ``6k`` vertices on the circle of radius ``k*radius/n_rings``."""
    if n_rings < 1:
        raise MeshError("need at least one ring")
    pts = [np.zeros(2)]
    ring_start = [0]
    angles = [np.zeros(1)]
    for k in range(1, n_rings + 1):
        theta = 2 * np.pi * np.arange(6 * k) / (6 * k)
        r = radius * k / n_rings
        ring_start.append(1 + 3 * k * (k - 1))
        pts.extend(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
        angles.append(theta)
    vertices = np.asarray(pts) + np.asarray(center, dtype=float)

    tris = []
    for k in range(1, n_rings + 1):
        inner_n = 1 if k == 1 else 6 * (k - 1)
        outer_n = 6 * k
        s_in, s_out = ring_start[k - 1], ring_start[k]
        if k == 1:
            for i in range(outer_n):
                tris.append((0, s_out + i, s_out + (i + 1) % outer_n))
            continue
        th_in = np.append(angles[k - 1], 2 * np.pi)
        th_out = np.append(angles[k], 2 * np.pi)
        i = j = 0
        while i < inner_n or j < outer_n:
            a_in = s_in + i % inner_n
            a_out = s_out + j % outer_n
            if j < outer_n and (i >= inner_n or th_out[j + 1] <= th_in[i + 1] + 1e-12):
                tris.append((a_in, a_out, s_out + (j + 1) % outer_n))
                j += 1
            else:
                tris.append((a_in, a_out, s_in + (i + 1) % inner_n))
                i += 1
    tris = np.asarray(tris, dtype=np.int64)
    area = signed_areas(vertices, tris)
    tris[area < 0] = tris[area < 0][:, [0, 2, 1]]
    return TriMesh(vertices, tris, holdall)


def snap_to_circle(mesh: TriMesh, radius: float, center=(0.0, 0.0)) -> TriMesh:
    """Move the boundary vertices radially onto a circle.

    Congruent refinement keeps a polygonal disk polygonal; snapping after each
    refinement makes the mesh sequence converge to the disk itself.
    """
    c = np.asarray(center, dtype=float)
    v = mesh.vertices.copy()
    b = mesh.boundary_vertices
    d = v[b] - c
    v[b] = c + radius * d / np.linalg.norm(d, axis=1)[:, None]
    out = mesh.with_vertices(v)
    if np.any(out.areas <= 0):
        raise MeshError("snapping inverted a boundary triangle")
    return out


def strip_mesh(length: float, width: float, nx: int, ny: int) -> TriMesh:
    """Criss-cross mesh of ``(0, length) x (0, width)``."""
    holdall = Rectangle(0.0, length, 0.0, width)
    return tensor_mesh(np.linspace(0, length, nx + 1), np.linspace(0, width, ny + 1), holdall)


# --------------------------------------------------------------------------
# operations


def element_gradients(mesh: TriMesh, field: np.ndarray) -> np.ndarray:
    """Constant Jacobians of the P1 interpolant of a vertex field.

    ``field`` has shape (n_v, m) (or (n_v,) for scalars); returns shape
    (n_t, m, 2) with ``out[t, i, j] = d field_i / d x_j`` (or (n_t, 2)).
    """
    field = np.asarray(field, dtype=float)
    if field.shape[0] != mesh.n_vertices:
        raise MeshError("field length does not match mesh")
    scalar = field.ndim == 1
    f = field[:, None] if scalar else field
    g = _barycentric_gradients(mesh.vertices, mesh.triangles)  # (nt, 3, 2)
    out = np.einsum("tai,taj->tij", f[mesh.triangles], g)
    return out[:, 0, :] if scalar else out


def _barycentric_gradients(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    area2 = 2 * signed_areas(vertices, triangles)
    g = np.empty((len(triangles), 3, 2))
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        e = p[:, c] - p[:, b]
        g[:, a, 0] = -e[:, 1] / area2
        g[:, a, 1] = e[:, 0] / area2
    return g


def deform(mesh: TriMesh, V: np.ndarray, t: float) -> TriMesh:
    """Move every vertex ``x`` to ``x + t V(x)``; connectivity is kept."""
    V = np.asarray(V, dtype=float)
    if V.shape != mesh.vertices.shape:
        raise MeshError("vertex field does not match mesh")
    moved = mesh.with_vertices(mesh.vertices + t * V)
    bad = np.flatnonzero(moved.areas <= 0)
    if len(bad):
        raise MeshError(
            f"deformation inverted {len(bad)} triangle(s) (first: {bad[0]}); "
            "is the field normalized to spectral norm <= 1 and t <= 1/2?"
        )
    return moved


def refine_congruent(
    mesh: TriMesh, carried_fields=(), parent: np.ndarray | None = None
):
    """Split every triangle into four congruent children through edge midpoints.

    Returns ``(fine_mesh, fine_fields, parent_of_child)``.  Carried fields are
    P1 vertex fields, interpolated linearly at the new midpoint vertices.
    Children of triangle ``k`` are ``4k .. 4k+3``.
    """
    nv = mesh.n_vertices
    edges = mesh.edges
    mid = nv + mesh.triangle_edges  # midpoint vertex of edges (01, 12, 20)
    new_vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
    t = mesh.triangles
    m01, m12, m20 = mid[:, 0], mid[:, 1], mid[:, 2]
    children = np.stack(
        [
            np.column_stack([t[:, 0], m01, m20]),
            np.column_stack([m01, t[:, 1], m12]),
            np.column_stack([m20, m12, t[:, 2]]),
            np.column_stack([m01, m12, m20]),
        ],
        axis=1,
    ).reshape(-1, 3)
    fine = TriMesh(new_vertices, children, mesh.holdall)
    fields = []
    for f in carried_fields:
        f = np.asarray(f, dtype=float)
        if f.shape[0] != nv:
            raise MeshError("carried field does not match mesh")
        fields.append(np.concatenate([f, 0.5 * (f[edges[:, 0]] + f[edges[:, 1]])]))
    parent_of_child = np.repeat(np.arange(mesh.n_triangles), 4)
    return fine, fields, parent_of_child


def refine_domain(domain: EmbeddedDomain, carried_fields=()):
    """Congruent refinement of the hold-all mesh; children inherit the ``inside`` marker.

    ``None`` entries of ``carried_fields`` are passed through unchanged.
    """
    present = [f for f in carried_fields if f is not None]
    fine, refined, parent = refine_congruent(domain.mesh, present)
    it = iter(refined)
    fields = [None if f is None else next(it) for f in carried_fields]
    return EmbeddedDomain(fine, domain.inside[parent]), fields


# --------------------------------------------------------------------------
# I/O


def write_mesh(mesh: TriMesh, path) -> None:
    """Plain text format: ``nv nt nb`` then vertices, triangles, boundary edges."""
    b = mesh.boundary_edges
    lines = [f"{mesh.n_vertices} {mesh.n_triangles} {len(b)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines += [f"{i} {j}" for i, j in b.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, holdall: Rectangle = DEFAULT_HOLDALL) -> TriMesh:
    tokens = Path(path).read_text().split("\n")
    rows = [line.split() for line in tokens if line.strip()]
    try:
        nv, nt, nb = (int(s) for s in rows[0])
        vertices = np.array([[float(s) for s in r] for r in rows[1 : 1 + nv]]).reshape(nv, 2)
        tris = np.array([[int(s) for s in r] for r in rows[1 + nv : 1 + nv + nt]]).reshape(nt, 3)
        bnd = np.array(
            [[int(s) for s in r] for r in rows[1 + nv + nt : 1 + nv + nt + nb]], dtype=np.int64
        ).reshape(nb, 2)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    mesh = TriMesh(vertices, tris, holdall)
    got = {tuple(e) for e in mesh.boundary_edges.tolist()}
    if got != {tuple(e) for e in bnd.tolist()}:
        raise MeshError("boundary edges in file do not match the triangles")
    return mesh


def write_vtk(mesh: TriMesh, path, point_data=None, cell_data=None, title="lipshape") -> None:
    """Legacy ASCII VTK unstructured grid (triangles, cell type 5)."""
    n, m = mesh.n_vertices, mesh.n_triangles
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {n} double")
    out += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices.tolist()]
    out.append(f"CELLS {m} {4 * m}")
    out += [f"3 {i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    out.append(f"CELL_TYPES {m}")
    out += ["5"] * m

    def block(kind, count, data):
        if not data:
            return
        out.append(f"{kind} {count}")
        for name, values in data.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 1:
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out.extend(repr(v) for v in values.tolist())
            else:
                out.append(f"VECTORS {name} double")
                out.extend(f"{a!r} {b!r} 0.0" for a, b in values[:, :2].tolist())

    block("POINT_DATA", n, point_data)
    block("CELL_DATA", m, cell_data)
    Path(path).write_text("\n".join(out) + "\n")
