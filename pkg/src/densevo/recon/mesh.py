"""Triangle meshes from sparse landmarks, and planarity-preserving smoothing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import Delaunay, QhullError

from ..errors import InvalidInputError
from ..geometry.camera import PinholeCamera, Pose, project_points


@dataclass
class TriangleMesh:
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def is_empty(self) -> bool:
        return self.n_faces == 0

    def validate(self) -> "TriangleMesh":
        f = self.faces
        if len(f) and (f.min() < 0 or f.max() >= self.n_vertices):
            raise InvalidInputError("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise InvalidInputError("face with a repeated vertex")
        if self.normals is not None:
            if len(self.normals) != self.n_vertices:
                raise InvalidInputError("one normal per vertex expected")
            if not np.allclose(np.linalg.norm(self.normals, axis=1), 1.0, atol=1e-6):
                raise InvalidInputError("normals must be unit length")
        return self

    def face_normals(self) -> np.ndarray:
        """Unit normals (zero for degenerate faces) and nothing else."""
        return _unit(_face_cross(self.vertices, self.faces))

    def with_vertex_normals(self) -> "TriangleMesh":
        """Copy carrying area-weighted vertex normals (+z for isolated vertices)."""
        acc = np.zeros_like(self.vertices)
        cross = _face_cross(self.vertices, self.faces)
        for k in range(3):
            np.add.at(acc, self.faces[:, k], cross)
        n = _unit(acc)
        n[np.linalg.norm(n, axis=1) == 0] = (0.0, 0.0, 1.0)
        return TriangleMesh(self.vertices.copy(), self.faces.copy(), n)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)


def _face_cross(vertices, faces):
    v = vertices[faces]
    return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])


def _unit(v):
    n = np.linalg.norm(v, axis=1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def triangle_gates(vertices, faces, depths, max_edge: float, max_depth_ratio: float) -> np.ndarray:
    """Mask of faces whose 3D edges and vertex-depth ratios stay within the gates."""
    v = vertices[faces]
    edges = np.linalg.norm(v - np.roll(v, -1, axis=1), axis=2)
    d = depths[faces]
    d_next = np.roll(d, -1, axis=1)
    ratio = np.maximum(d, d_next) / np.minimum(d, d_next)
    return (edges.max(axis=1) <= max_edge) & (ratio.max(axis=1) <= max_depth_ratio)


def mesh_frame(points, pose: Pose, camera: PinholeCamera, *, voxel_size: float = 0.05,
               max_edge_voxels: float = 30.0, max_depth_ratio: float = 1.5) -> TriangleMesh:
    """Delaunay-triangulate the landmarks' projections and lift the triangles to 3D.

    Landmarks behind the camera or outside the image are ignored. Triangles
    with a 3D edge longer than ``max_edge_voxels * voxel_size`` or with a
    vertex-depth ratio above ``max_depth_ratio`` along an edge are dropped.
    Faces are ordered counter-clockwise as seen in the image.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 3:
        return TriangleMesh()
    uv, z = project_points(camera, pose, points)
    keep = z > 1e-6
    if camera.width is not None and camera.height is not None:
        keep &= camera.contains(uv)
    idx = np.nonzero(keep)[0]
    if len(idx) < 3:
        return TriangleMesh()
    try:
        tri = Delaunay(uv[idx])
    except (QhullError, ValueError):
        return TriangleMesh()
    faces = idx[tri.simplices]
    # image y points down, so a positive signed area is clockwise on screen
    a, b, c = uv[faces[:, 0]], uv[faces[:, 1]], uv[faces[:, 2]]
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    faces[area > 0] = faces[area > 0][:, [0, 2, 1]]
    faces = faces[np.abs(area) > 0]
    ok = triangle_gates(points, faces, z, max_edge_voxels * voxel_size, max_depth_ratio)
    faces = faces[ok]
    used, inverse = np.unique(faces, return_inverse=True)
    return TriangleMesh(points[used], inverse.reshape(-1, 3))


def _face_adjacency(faces: np.ndarray, n_vertices: int):
    """Pairs (f, g) of faces sharing at least one vertex, including f == g."""
    F = len(faces)
    incidence = sparse.csr_matrix(
        (np.ones(3 * F), (np.repeat(np.arange(F), 3), faces.ravel())), shape=(F, n_vertices))
    adj = (incidence @ incidence.T).tocoo()
    return adj.row, adj.col


def smooth_mesh(mesh: TriangleMesh, iterations: int = 10, strength: float = 1.0, *,
                normal_sigma: float = 0.5, normal_passes: int = 2, max_move: float | None = None) -> TriangleMesh:
    """Pull each vertex toward the planes of its incident faces.

    Per iteration, face normals are first averaged over neighboring faces
    with a Gaussian weight on the normal difference (``normal_sigma``), so
    creases between distinct planes survive. Each vertex then moves by
    ``strength`` times the mean of its offsets to the planes through its
    incident face centroids with those filtered normals. Moves are capped at
    ``max_move`` (default: half the median edge length). Connectivity is
    never changed.
    """
    if mesh.is_empty() or iterations <= 0:
        return TriangleMesh(mesh.vertices.copy(), mesh.faces.copy(),
                            None if mesh.normals is None else mesh.normals.copy())
    v = mesh.vertices.copy()
    faces = mesh.faces
    V = len(v)
    if max_move is None:
        e = mesh.edges()
        max_move = 0.5 * float(np.median(np.linalg.norm(v[e[:, 0]] - v[e[:, 1]], axis=1)))
    rows, cols = _face_adjacency(faces, V)
    counts = np.bincount(faces.ravel(), minlength=V).astype(np.float64)

    for _ in range(iterations):
        cross = _face_cross(v, faces)
        area = 0.5 * np.linalg.norm(cross, axis=1)
        n = _unit(cross)
        for _ in range(normal_passes):
            ng = n[cols]
            sign = np.where(np.einsum("ij,ij->i", n[rows], ng) < 0, -1.0, 1.0)
            ng = ng * sign[:, None]
            diff = np.sum((n[rows] - ng) ** 2, axis=1)
            w = area[cols] * np.exp(-diff / (2 * normal_sigma ** 2))
            acc = np.zeros_like(n)
            np.add.at(acc, rows, w[:, None] * ng)
            n = _unit(acc)
        centroid = v[faces].mean(axis=1)
        delta = np.zeros_like(v)
        for k in range(3):
            off = np.einsum("ij,ij->i", n, centroid - v[faces[:, k]])
            np.add.at(delta, faces[:, k], off[:, None] * n)
        delta = strength * delta / np.maximum(counts, 1.0)[:, None]
        norm = np.linalg.norm(delta, axis=1, keepdims=True)
        delta = np.where(norm > max_move, delta * (max_move / np.maximum(norm, 1e-300)), delta)
        v = v + delta
    out = TriangleMesh(v, faces.copy())
    return out.with_vertex_normals() if mesh.normals is not None else out
