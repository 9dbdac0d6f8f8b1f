"""Differentiable soft silhouette renderer plus a binary reference rasterizer.

Per pixel p and face j the soft influence is
``D_j(p) = sigmoid(delta_j(p) * d^2(p, boundary_j) / sigma)`` with
``delta = +1`` inside the projected triangle and ``-1`` outside; the
silhouette aggregates as ``S(p) = 1 - prod_j (1 - D_j(p))`` (computed in
log space). Gradients flow to the projected vertices analytically and are
chained to 3-D vertices and pose angles.

Two equivalent paths exist: a composable one built on the geometry ops,
and a fused single-node op used by the training loop. The test suite pins
them against each other.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from . import tensor as T
from ._kernels import hard_forward, soft_backward, soft_forward
from .geometry import (
    DEFAULT_FOV_DEG,
    CameraPose,
    Mesh,
    ndc_scale,
    project,
    transform_vertices,
)

PoseLike = Union[CameraPose, T.Tensor]


def _check_resolution(resolution: int) -> None:
    if resolution < 2 or resolution & (resolution - 1):
        raise ValueError(f"resolution must be a power of two >= 2, got {resolution}")


def rasterize_projected(verts2d: T.Tensor, faces: np.ndarray, resolution: int,
                        sigma: float) -> T.Tensor:
    """Soft-rasterize already-projected (V,2) NDC vertices."""
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    _check_resolution(resolution)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    v2d = np.ascontiguousarray(verts2d.data)
    sil, logsum = soft_forward(v2d, faces, resolution, resolution, sigma)
    out = T.Tensor(sil)

    def vjp(g):
        gv = soft_backward(np.ascontiguousarray(g.data), v2d, faces,
                           resolution, resolution, sigma, logsum)
        return (T.Tensor(gv),)

    return T.record(out, "soft_rasterize", (verts2d,), vjp, differentiable=False)


def soft_rasterize(mesh: Mesh, pose: PoseLike, resolution: int, sigma: float,
                   distance: Optional[float] = None,
                   fov_deg: float = DEFAULT_FOV_DEG,
                   scale: Optional[float] = None) -> T.Tensor:
    """Composable render path: view transform -> projection -> soft raster."""
    cam = transform_vertices(mesh.vertices, pose, distance)
    verts2d = project(cam, fov_deg=fov_deg, scale=scale)
    return rasterize_projected(verts2d, mesh.faces, resolution, sigma)


# ---------------------------------------------------------------------------
# fused render op (one graph node; used by the training loop)

_DRY_DSA = np.array([[0.0, 0, -1], [0, 0, 0], [1, 0, 0]])
_DRY_DCA = np.array([[1.0, 0, 0], [0, 0, 0], [0, 0, 1]])
_DRX_DSE = np.array([[0.0, 0, 0], [0, 0, 1], [0, -1, 0]])
_DRX_DCE = np.array([[0.0, 0, 0], [0, 1, 0], [0, 0, 1]])


def _rotation(sa: float, ca: float, se: float, ce: float) -> np.ndarray:
    ry = np.array([[ca, 0.0, -sa], [0.0, 1.0, 0.0], [sa, 0.0, ca]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ce, se], [0.0, -se, ce]])
    return rx @ ry


def render_silhouette(vertices: T.Tensor, faces: np.ndarray, pose: PoseLike,
                      resolution: int, sigma: float,
                      distance: Optional[float] = None,
                      fov_deg: float = DEFAULT_FOV_DEG,
                      scale: Optional[float] = None) -> T.Tensor:
    """Fused mesh+pose -> soft silhouette with analytic backward to both the
    3-D vertices and the pose embedding."""
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    _check_resolution(resolution)
    faces = np.ascontiguousarray(faces, dtype=np.int64)

    if isinstance(pose, CameraPose):
        emb_t: Optional[T.Tensor] = None
        emb = pose.embedding()
        d = pose.distance
    else:
        emb_t = pose
        emb = pose.data.reshape(-1)
        if emb.size != 4:
            raise ValueError(f"pose embedding must have 4 entries, got {pose.shape}")
        if distance is None:
            raise ValueError("distance is required with an embedding pose")
        d = float(distance)
    sa, ca, se, ce = (float(e) for e in emb)
    f_ndc = float(scale) if scale is not None else ndc_scale(fov_deg)

    v = vertices.data
    rot = _rotation(sa, ca, se, ce).astype(v.dtype)
    cam = v @ rot.T
    cam[:, 2] += d
    z = cam[:, 2]
    if np.any(z <= 0.0):
        bad = int(np.argmin(z))
        raise ValueError(f"vertex {bad} behind the camera (depth {z[bad]:.6g})")
    v2d = np.ascontiguousarray(np.column_stack((f_ndc * cam[:, 0] / z,
                                                f_ndc * cam[:, 1] / z)))
    sil, logsum = soft_forward(v2d, faces, resolution, resolution, sigma)
    out = T.Tensor(sil)

    inputs = (vertices,) if emb_t is None else (vertices, emb_t)

    def vjp(g):
        g2d = soft_backward(np.ascontiguousarray(g.data), v2d, faces,
                            resolution, resolution, sigma, logsum)
        gcam = np.empty_like(cam)
        gcam[:, 0] = g2d[:, 0] * f_ndc / z
        gcam[:, 1] = g2d[:, 1] * f_ndc / z
        gcam[:, 2] = -f_ndc * (cam[:, 0] * g2d[:, 0] + cam[:, 1] * g2d[:, 1]) / (z * z)
        gverts = gcam @ rot
        if emb_t is None:
            return (T.Tensor(gverts),)
        rx = np.array([[1.0, 0.0, 0.0], [0.0, ce, se], [0.0, -se, ce]])
        ry = np.array([[ca, 0.0, -sa], [0.0, 1.0, 0.0], [sa, 0.0, ca]])
        dr = (rx @ _DRY_DSA, rx @ _DRY_DCA, _DRX_DSE @ ry, _DRX_DCE @ ry)
        gpose = np.array([np.einsum("vi,ij,vj->", gcam, m.astype(v.dtype), v)
                          for m in dr], dtype=v.dtype)
        return (T.Tensor(gverts), T.Tensor(gpose.reshape(emb_t.shape)))

    return T.record(out, "render_silhouette", inputs, vjp, differentiable=False)


# ---------------------------------------------------------------------------
# hard reference rasterizer

def hard_rasterize(mesh: Mesh, pose: PoseLike, resolution: int,
                   distance: Optional[float] = None,
                   fov_deg: float = DEFAULT_FOV_DEG,
                   scale: Optional[float] = None) -> T.Tensor:
    """Binary mask: pixel center inside any projected triangle (edge-function
    test; ties on shared edges resolved exactly once)."""
    _check_resolution(resolution)
    if mesh.num_faces == 0:
        return T.Tensor(np.zeros((resolution, resolution)))
    with T.no_grad():
        cam = transform_vertices(mesh.vertices, pose, distance)
        verts2d = project(cam, fov_deg=fov_deg, scale=scale)
    mask = hard_forward(np.ascontiguousarray(verts2d.data),
                        np.ascontiguousarray(mesh.faces, dtype=np.int64),
                        resolution, resolution)
    return T.Tensor(mask.astype(np.float64))


# ---------------------------------------------------------------------------
# pyramids and image export

def silhouette_pyramid(s: T.Tensor, levels: int) -> list[T.Tensor]:
    """[s, avg2x(s), avg2x(avg2x(s)), ...] with ``levels`` entries."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    res = s.shape[-1]
    if res % (2 ** (levels - 1)):
        raise ValueError(f"resolution {res} not divisible by 2^{levels - 1}")
    pyr = [s]
    for _ in range(levels - 1):
        pyr.append(T.avg_pool2x(pyr[-1]))
    return pyr


def to_uint8(s: Union[T.Tensor, np.ndarray]) -> np.ndarray:
    """[0,1] silhouette to 8-bit grayscale, rounding half to even."""
    arr = s.data if isinstance(s, T.Tensor) else np.asarray(s)
    return np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(s: Union[T.Tensor, np.ndarray], path) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(s), mode="L").save(path, format="PNG")


def save_pgm(s: Union[T.Tensor, np.ndarray], path) -> None:
    arr = to_uint8(s)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def load_binary_png(path, threshold: float = 0.5) -> np.ndarray:
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
    return (arr >= threshold).astype(np.float64)
