"""Mesh representation, icosphere template, camera model, projection,
voxelization, and the two mesh-quality regularizers.

All differentiable paths are built from tensor ops; voxelization is a
parity ray test compiled with numba.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import tensor as T
from ._kernels import voxelize_columns

DEFAULT_FOV_DEG = 30.0      # half-angle of the view cone
DEFAULT_DISTANCE = 2.732


class MeshError(ValueError):
    pass


class ProjectionError(ValueError):
    pass


@dataclass
class Mesh:
    """Triangle mesh: (V,3) vertex tensor + (F,3) integer faces (CCW)."""

    vertices: T.Tensor
    faces: np.ndarray

    def __post_init__(self):
        if not isinstance(self.vertices, T.Tensor):
            self.vertices = T.Tensor(self.vertices)
        self.faces = np.asarray(self.faces, dtype=np.int64)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def detached(self) -> "Mesh":
        return Mesh(self.vertices.detach(), self.faces)


@dataclass(frozen=True)
class CameraPose:
    """Euler-angle viewpoint with a fixed camera distance."""

    elevation_deg: float
    azimuth_deg: float
    distance: float = DEFAULT_DISTANCE

    def __post_init__(self):
        if not -90.0 <= self.elevation_deg <= 90.0:
            raise ValueError(f"elevation {self.elevation_deg} outside [-90, 90]")
        if not 0.0 <= self.azimuth_deg < 360.0:
            raise ValueError(f"azimuth {self.azimuth_deg} outside [0, 360)")
        if self.distance <= 0.0:
            raise ValueError(f"distance {self.distance} must be positive")

    @classmethod
    def wrapped(cls, elevation_deg: float, azimuth_deg: float,
                distance: float = DEFAULT_DISTANCE) -> "CameraPose":
        return cls(elevation_deg, azimuth_deg % 360.0, distance)

    def embedding(self) -> np.ndarray:
        """(sin az, cos az, sin el, cos el) in a 4-vector."""
        az = math.radians(self.azimuth_deg)
        el = math.radians(self.elevation_deg)
        return np.array([math.sin(az), math.cos(az), math.sin(el), math.cos(el)])


def pose_embedding(pose: CameraPose) -> T.Tensor:
    return T.Tensor(pose.embedding())


@dataclass(frozen=True)
class PoseDistribution:
    """Uniform azimuth/elevation ranges with a fixed camera distance."""

    azimuth_min: float = 0.0
    azimuth_max: float = 360.0
    elevation_min: float = 0.0
    elevation_max: float = 30.0
    distance: float = DEFAULT_DISTANCE

    def __post_init__(self):
        if not -90.0 <= self.elevation_min <= self.elevation_max <= 90.0:
            raise ValueError("elevation range must lie inside [-90, 90]")
        if not 0.0 <= self.azimuth_min <= self.azimuth_max <= 360.0:
            raise ValueError("azimuth range must lie inside [0, 360]")

    def sample(self, rng: np.random.Generator) -> CameraPose:
        az = rng.uniform(self.azimuth_min, self.azimuth_max) % 360.0
        el = rng.uniform(self.elevation_min, self.elevation_max)
        return CameraPose(el, az, self.distance)


@dataclass
class VoxelGrid:
    """Cubic occupancy grid over the canonical [-1,1]^3 cube."""

    resolution: int
    occupancy: np.ndarray

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        expected = (self.resolution,) * 3
        if self.occupancy.shape != expected:
            raise ValueError(f"occupancy shape {self.occupancy.shape} != {expected}")

    @property
    def fill_fraction(self) -> float:
        return float(self.occupancy.mean())


# ---------------------------------------------------------------------------
# template generation

_ICO_T = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array([
    [-1, _ICO_T, 0], [1, _ICO_T, 0], [-1, -_ICO_T, 0], [1, -_ICO_T, 0],
    [0, -1, _ICO_T], [0, 1, _ICO_T], [0, -1, -_ICO_T], [0, 1, -_ICO_T],
    [_ICO_T, 0, -1], [_ICO_T, 0, 1], [-_ICO_T, 0, -1], [-_ICO_T, 0, 1],
], dtype=np.float64)
_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def icosphere(subdivisions: int) -> Mesh:
    """Unit icosphere: 10*4^n + 2 vertices, 20*4^n faces, watertight."""
    if not 0 <= subdivisions <= 5:
        raise ValueError(f"subdivisions {subdivisions} outside [0, 5]")
    verts = _ICO_VERTS / np.linalg.norm(_ICO_VERTS, axis=1, keepdims=True)
    faces = _ICO_FACES.copy()
    for _ in range(subdivisions):
        verts_list = list(verts)
        midpoint: dict[tuple[int, int], int] = {}

        def mid(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                m = verts_list[i] + verts_list[j]
                m = m / np.linalg.norm(m)
                midpoint[key] = len(verts_list)
                verts_list.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)
    return Mesh(T.Tensor(verts), faces)


# ---------------------------------------------------------------------------
# topology (cached per faces array)

@dataclass
class MeshTopology:
    num_vertices: int
    directed_src: np.ndarray      # (2E,) gather/scatter indices for neighbours
    directed_dst: np.ndarray
    degrees: np.ndarray           # (V,)
    edges: np.ndarray             # (E,2) sorted vertex pairs
    edge_faces: np.ndarray        # (E,2) adjacent faces, -1 marks a boundary
    boundary_edge_count: int = 0
    nonmanifold_edge_count: int = 0

    @property
    def is_closed_manifold(self) -> bool:
        return self.boundary_edge_count == 0 and self.nonmanifold_edge_count == 0


_TOPO_CACHE: dict = {}


def topology(faces: np.ndarray, num_vertices: int) -> MeshTopology:
    key = (hashlib.sha1(np.ascontiguousarray(faces).tobytes()).hexdigest(), num_vertices)
    hit = _TOPO_CACHE.get(key)
    if hit is not None:
        return hit

    edge_map: dict[tuple[int, int], list[int]] = {}
    for fi, (a, b, c) in enumerate(faces):
        for i, j in ((a, b), (b, c), (c, a)):
            e = (int(i), int(j)) if i < j else (int(j), int(i))
            edge_map.setdefault(e, []).append(fi)

    edges = np.array(sorted(edge_map), dtype=np.int64).reshape(-1, 2)
    ef = np.full((len(edges), 2), -1, dtype=np.int64)
    boundary = nonmanifold = 0
    for row, e in enumerate(map(tuple, edges)):
        adj = edge_map[e]
        if len(adj) == 1:
            boundary += 1
            ef[row, 0] = adj[0]
        elif len(adj) == 2:
            ef[row] = adj
        else:
            nonmanifold += 1
            ef[row] = adj[:2]

    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    degrees = np.bincount(src, minlength=num_vertices)

    topo = MeshTopology(num_vertices, src, dst, degrees, edges, ef,
                        boundary, nonmanifold)
    _TOPO_CACHE[key] = topo
    return topo


def is_watertight(mesh: Mesh) -> bool:
    """Every edge shared by exactly two faces."""
    topo = topology(mesh.faces, mesh.num_vertices)
    return topo.is_closed_manifold


def euler_characteristic(mesh: Mesh) -> int:
    topo = topology(mesh.faces, mesh.num_vertices)
    return mesh.num_vertices - len(topo.edges) + mesh.num_faces


def validate_mesh(mesh: Mesh) -> None:
    if mesh.faces.size and mesh.faces.max() >= mesh.num_vertices:
        raise MeshError(f"face index {mesh.faces.max()} >= V={mesh.num_vertices}")
    if mesh.faces.size:
        a, b, c = mesh.faces[:, 0], mesh.faces[:, 1], mesh.faces[:, 2]
        if np.any((a == b) | (b == c) | (a == c)):
            raise MeshError("degenerate face with repeated vertex index")


# ---------------------------------------------------------------------------
# deformation and rigid transform

def apply_offsets(template: Mesh, offsets: T.Tensor) -> Mesh:
    """Deformed copy of the template: vertices + offsets, faces shared."""
    if offsets.shape != template.vertices.shape:
        raise ValueError(f"offsets shape {offsets.shape} != vertex shape "
                         f"{template.vertices.shape}")
    return Mesh(template.vertices + offsets, template.faces)


PoseLike = Union[CameraPose, T.Tensor]


def _pose_scalars(pose: PoseLike, distance: Optional[float]):
    """(sa, ca, se, ce, d) with the four trig terms as (1,) tensors."""
    if isinstance(pose, CameraPose):
        emb = pose_embedding(pose)
        d = pose.distance
    else:
        emb = pose
        if emb.size != 4:
            raise ValueError(f"pose embedding must have 4 entries, got {emb.shape}")
        if distance is None:
            raise ValueError("distance is required with an embedding pose")
        d = float(distance)
    flat = T.reshape(emb, (4,))
    sa = T.getitem(flat, (slice(0, 1),))
    ca = T.getitem(flat, (slice(1, 2),))
    se = T.getitem(flat, (slice(2, 3),))
    ce = T.getitem(flat, (slice(3, 4),))
    return sa, ca, se, ce, d


def view_transform(mesh: Mesh, pose: PoseLike, distance: Optional[float] = None) -> Mesh:
    """Rotate by azimuth about +y, then by elevation about the camera-right
    axis, then translate by the camera distance along the view (+z) axis."""
    v = transform_vertices(mesh.vertices, pose, distance)
    return Mesh(v, mesh.faces)


def transform_vertices(vertices: T.Tensor, pose: PoseLike,
                       distance: Optional[float] = None) -> T.Tensor:
    sa, ca, se, ce, d = _pose_scalars(pose, distance)
    n = vertices.shape[0]
    x = T.getitem(vertices, (slice(None), 0))
    y = T.getitem(vertices, (slice(None), 1))
    z = T.getitem(vertices, (slice(None), 2))
    # azimuth about +y: +x maps onto prior +z at 90 degrees
    x1 = ca * x - sa * z
    z1 = sa * x + ca * z
    # elevation about camera-right (+x): +y tilts toward the camera
    y2 = ce * y + se * z1
    z2 = ce * z1 - se * y
    z3 = z2 + d
    cols = [T.reshape(x1, (n, 1)), T.reshape(y2, (n, 1)), T.reshape(z3, (n, 1))]
    return T.concat(cols, axis=1)


def ndc_scale(fov_deg: float) -> float:
    return 1.0 / math.tan(math.radians(fov_deg))


def project(camera_space: Union[Mesh, T.Tensor], fov_deg: float = DEFAULT_FOV_DEG,
            scale: Optional[float] = None) -> T.Tensor:
    """Perspective division to normalized device coordinates in [-1,1]^2.

    ``fov_deg`` is the half-angle of the view cone; pass ``scale`` to set the
    NDC focal scale directly.
    """
    verts = camera_space.vertices if isinstance(camera_space, Mesh) else camera_space
    zdata = verts.data[:, 2]
    if np.any(zdata <= 0.0):
        bad = int(np.argmin(zdata))
        raise ProjectionError(
            f"vertex {bad} has non-positive camera depth {zdata[bad]:.6g}")
    f = float(scale) if scale is not None else ndc_scale(fov_deg)
    n = verts.shape[0]
    x = T.getitem(verts, (slice(None), 0))
    y = T.getitem(verts, (slice(None), 1))
    z = T.getitem(verts, (slice(None), 2))
    px = f * x / z
    py = f * y / z
    return T.concat([T.reshape(px, (n, 1)), T.reshape(py, (n, 1))], axis=1)


def projected_sphere_radius_ndc(radius: float, distance: float,
                                fov_deg: float = DEFAULT_FOV_DEG) -> float:
    """Analytic NDC radius of a sphere silhouette (tangent-cone construction)."""
    return ndc_scale(fov_deg) * math.tan(math.asin(radius / distance))


# ---------------------------------------------------------------------------
# regularizers

def face_normals(mesh: Mesh, eps: float = 1e-20) -> T.Tensor:
    """(F,3) unit outward normals for CCW faces, differentiable."""
    v = mesh.vertices
    f = mesh.faces
    v0 = T.take_rows(v, f[:, 0])
    v1 = T.take_rows(v, f[:, 1])
    v2 = T.take_rows(v, f[:, 2])
    e1 = v1 - v0
    e2 = v2 - v0
    m = mesh.num_faces

    def col(t, i):
        return T.getitem(t, (slice(None), i))

    nx = col(e1, 1) * col(e2, 2) - col(e1, 2) * col(e2, 1)
    ny = col(e1, 2) * col(e2, 0) - col(e1, 0) * col(e2, 2)
    nz = col(e1, 0) * col(e2, 1) - col(e1, 1) * col(e2, 0)
    n = T.concat([T.reshape(nx, (m, 1)), T.reshape(ny, (m, 1)),
                  T.reshape(nz, (m, 1))], axis=1)
    norm = T.tsqrt(T.tsum(T.square(n), axes=1, keepdims=True) + eps)
    return n / T.broadcast_to(norm, n.shape)


def laplacian_loss(mesh: Mesh) -> T.Tensor:
    """Mean over vertices of the squared offset from the neighbour centroid."""
    topo = topology(mesh.faces, mesh.num_vertices)
    if np.any(topo.degrees == 0):
        bad = int(np.argmin(topo.degrees))
        raise MeshError(f"isolated vertex {bad} has no neighbours")
    v = mesh.vertices
    nb = T.take_rows(v, topo.directed_dst)
    nb_sum = T.scatter_add_rows(nb, topo.directed_src, mesh.num_vertices)
    inv_deg = T.Tensor((1.0 / topo.degrees)[:, None])
    centroid = nb_sum * T.broadcast_to(inv_deg, nb_sum.shape)
    lap = v - centroid
    return T.tsum(T.square(lap)) * (1.0 / mesh.num_vertices)


def flatten_loss(mesh: Mesh) -> T.Tensor:
    """Mean over edges of (cos theta + 1)^2 where theta is the dihedral angle
    between adjacent faces; coplanar faces (theta = pi) contribute zero."""
    topo = topology(mesh.faces, mesh.num_vertices)
    if topo.boundary_edge_count or topo.nonmanifold_edge_count:
        raise MeshError(
            f"flatten loss requires a closed 2-manifold; found "
            f"{topo.boundary_edge_count} boundary and "
            f"{topo.nonmanifold_edge_count} non-manifold edges")
    normals = face_normals(mesh)
    n1 = T.take_rows(normals, topo.edge_faces[:, 0])
    n2 = T.take_rows(normals, topo.edge_faces[:, 1])
    cos_between = T.tsum(n1 * n2, axes=1)        # cos(pi - theta)
    return T.tmean(T.square(1.0 - cos_between))


def regularizer_values(mesh: Mesh) -> tuple[T.Tensor, T.Tensor]:
    return laplacian_loss(mesh), flatten_loss(mesh)


# ---------------------------------------------------------------------------
# voxelization

def voxelize(mesh: Mesh, resolution: int) -> VoxelGrid:
    """Occupancy by parity of axis-aligned ray crossings at voxel centers.

    Degenerate hits (ray through an edge or vertex) are resolved by
    deterministically jittering the ray.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    if not is_watertight(mesh):
        topo = topology(mesh.faces, mesh.num_vertices)
        raise MeshError(
            f"voxelize requires a watertight mesh; found "
            f"{topo.boundary_edge_count} boundary and "
            f"{topo.nonmanifold_edge_count} non-manifold edges")
    verts = mesh.vertices.data
    if verts.size and np.max(np.abs(verts)) > 1.0 + 1e-9:
        raise MeshError("voxelize expects the mesh inside the canonical [-1,1]^3 cube")
    tris = verts[mesh.faces]                     # (F,3,3)
    occ, ok = voxelize_columns(np.ascontiguousarray(tris), resolution)
    if not ok:
        raise MeshError("voxelize: degenerate ray configuration persisted after jitter")
    return VoxelGrid(resolution, occ.astype(bool))


def voxel_iou(a: VoxelGrid, b: VoxelGrid) -> float:
    """Intersection over union; defined as 1.0 when both grids are empty."""
    if a.resolution != b.resolution:
        raise ValueError(f"voxel grids differ in resolution: {a.resolution} vs {b.resolution}")
    union = np.logical_or(a.occupancy, b.occupancy).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(a.occupancy, b.occupancy).sum()
    return float(inter) / float(union)


# ---------------------------------------------------------------------------
# normalization and OBJ I/O

def normalize_to_unit_sphere(mesh: Mesh) -> Mesh:
    """Translate the bounding-box center to the origin and scale the bounding
    sphere to radius one. Idempotent on already-normalized meshes."""
    v = mesh.vertices.data
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    shifted = v - center
    r = float(np.max(np.linalg.norm(shifted, axis=1)))
    if r <= 0.0:
        raise MeshError("cannot normalize a degenerate (single-point) mesh")
    return Mesh(T.Tensor(shifted / r), mesh.faces)


def merge_meshes(meshes: list[Mesh]) -> Mesh:
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices.data)
        faces.append(m.faces + offset)
        offset += m.num_vertices
    return Mesh(T.Tensor(np.concatenate(verts)), np.concatenate(faces))


def write_obj(mesh: Mesh, path) -> None:
    lines = []
    for x, y, z in mesh.vertices.data:
        lines.append(f"v {x:.17g} {y:.17g} {z:.17g}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def obj_to_string(mesh: Mesh) -> str:
    parts = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices.data]
    parts += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return "\n".join(parts) + "\n"


def read_obj(path) -> Mesh:
    verts, faces = [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            tag, *rest = body.split()
            if tag == "v":
                if len(rest) < 3:
                    raise MeshError(f"{path}:{ln}: malformed vertex line")
                verts.append([float(r) for r in rest[:3]])
            elif tag == "f":
                if len(rest) != 3:
                    raise MeshError(f"{path}:{ln}: only triangle faces are supported")
                faces.append([int(r.split("/")[0]) - 1 for r in rest])
    if not verts or not faces:
        raise MeshError(f"{path}: no geometry found")
    mesh = Mesh(T.Tensor(np.array(verts)), np.array(faces, dtype=np.int64))
    validate_mesh(mesh)
    return mesh
