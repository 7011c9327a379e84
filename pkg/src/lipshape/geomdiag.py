"""Geometric diagnostics for sequences of shapes.

The Hausdorff complementary distance of two open sets ``A, B`` in ``D`` is
``max_x |d_{D\\A}(x) - d_{D\\B}(x)|``.  It is sampled on a uniform grid over
``D``; distance functions are 1-Lipschitz, so the sampled value is within
``2h`` of the true maximum for grid step ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import MeshError, Rectangle, TriMesh

__all__ = [
    "DomainSampler",
    "winding_number",
    "point_in_domain",
    "segment_distance",
    "complement_distance",
    "hausdorff_complementary",
    "boundary_components",
    "complement_components",
    "boundary_length",
    "circularity",
]


def _segments(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    e = mesh.boundary_edges
    return mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]


def winding_number(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Winding number of the closed edge set ``a -> b`` around each point.

    Uses signed upward/downward crossings; points exactly on an edge get an
    arbitrary count, so callers treat them separately.
    """
    points = np.atleast_2d(points)
    out = np.zeros(len(points), dtype=np.int64)
    for lo in range(0, len(points), 4096):
        P = points[lo : lo + 4096, None, :]
        ay, by = a[None, :, 1], b[None, :, 1]
        cross = (b[None, :, 0] - a[None, :, 0]) * (P[..., 1] - ay) - (P[..., 0] - a[None, :, 0]) * (by - ay)
        up = (ay <= P[..., 1]) & (by > P[..., 1]) & (cross > 0)
        down = (ay > P[..., 1]) & (by <= P[..., 1]) & (cross < 0)
        out[lo : lo + 4096] = up.sum(axis=1) - down.sum(axis=1)
    return out


def segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the nearest segment ``[a_i, b_i]``."""
    points = np.atleast_2d(points)
    out = np.empty(len(points))
    d = b - a
    len2 = np.maximum(np.einsum("ij,ij->i", d, d), np.finfo(float).tiny)
    chunk = max(1, 2_000_000 // max(len(a), 1))
    for lo in range(0, len(points), chunk):
        P = points[lo : lo + chunk, None, :] - a[None]
        s = np.clip(np.einsum("pij,ij->pi", P, d) / len2, 0.0, 1.0)
        diff = P - s[..., None] * d[None]
        out[lo : lo + chunk] = np.sqrt(np.min(np.einsum("pij,pij->pi", diff, diff), axis=1))
    return out


def point_in_domain(mesh: TriMesh, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Strict membership in the open domain; points on the boundary count as outside."""
    a, b = _segments(mesh)
    inside = winding_number(points, a, b) != 0
    if inside.any():
        idx = np.flatnonzero(inside)
        on_edge = segment_distance(points[idx], a, b) <= tol
        inside[idx[on_edge]] = False
    return inside


def complement_distance(mesh: TriMesh, points: np.ndarray) -> np.ndarray:
    """``dist(x, closure(D) minus Omega)``: distance to ``dOmega`` inside, 0 outside."""
    points = np.atleast_2d(points)
    a, b = _segments(mesh)
    out = np.zeros(len(points))
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    box = np.all((points >= lo) & (points <= hi), axis=1)
    idx = np.flatnonzero(box)
    if len(idx) == 0:
        return out
    inside = winding_number(points[idx], a, b) != 0
    idx = idx[inside]
    out[idx] = segment_distance(points[idx], a, b)
    return out


@dataclass
class DomainSampler:
    """Samples of ``d_{complement Omega}`` on the grid nodes of ``holdall`` with step about ``h``."""

    holdall: Rectangle
    h: float

    def __post_init__(self):
        hd = self.holdall
        nx = max(1, int(np.ceil((hd.xmax - hd.xmin) / self.h)))
        ny = max(1, int(np.ceil((hd.ymax - hd.ymin) / self.h)))
        self.xs = np.linspace(hd.xmin, hd.xmax, nx + 1)
        self.ys = np.linspace(hd.ymin, hd.ymax, ny + 1)
        X, Y = np.meshgrid(self.xs, self.ys)
        self.points = np.column_stack([X.ravel(), Y.ravel()])
        self.step = max(self.xs[1] - self.xs[0], self.ys[1] - self.ys[0])

    def sample(self, mesh: TriMesh) -> np.ndarray:
        d = complement_distance(mesh, self.points)
        return d.reshape(len(self.ys), len(self.xs))


def hausdorff_complementary(mesh_a: TriMesh, mesh_b: TriMesh, h: float | None = None) -> float:
    """Grid approximation of the Hausdorff complementary distance (error <= 2h)."""
    if mesh_a.holdall != mesh_b.holdall:
        raise ValueError("meshes must share the hold-all domain")
    if h is None:
        h = mesh_a.holdall.diameter / 512
    sampler = DomainSampler(mesh_a.holdall, h)
    return float(np.max(np.abs(sampler.sample(mesh_a) - sampler.sample(mesh_b))))


def boundary_components(mesh: TriMesh) -> int:
    return len(mesh.loops)


def _loop_area(mesh: TriMesh, loop: np.ndarray) -> float:
    p = mesh.vertices[loop]
    q = np.roll(p, -1, axis=0)
    return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


def complement_components(mesh: TriMesh) -> int:
    """Components of ``D \\ Omega``: one per hole (clockwise loop) plus the outer one."""
    loops = mesh.loops
    if not loops:
        raise MeshError("mesh has no boundary")
    holes = sum(1 for loop in loops if _loop_area(mesh, loop) < 0)
    return holes + 1


def boundary_length(mesh: TriMesh) -> float:
    return mesh.perimeter


def circularity(mesh: TriMesh):
    """``(centroid, mean boundary radius, radius coefficient of variation)``."""
    loops = mesh.loops
    if len(loops) != 1:
        raise MeshError(f"circularity needs exactly one boundary loop, found {len(loops)}")
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    centroid = (mesh.areas[:, None] * centroids).sum(axis=0) / mesh.area
    r = np.linalg.norm(mesh.vertices[loops[0]] - centroid, axis=1)
    mean = float(r.mean())
    return centroid, mean, float(r.std() / mean)
