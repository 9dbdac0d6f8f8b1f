"""Procedural dataset: watertight primitive-composite meshes, ground-truth
silhouettes rendered at known poses, and contour sketches derived from
them, laid out on disk under a digest-verified manifest.

Composite shapes separate their primitives by a hair-thin gap (far below
voxel and pixel sampling scales) so that parity-based voxelization stays
exact on the union.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .geometry import (
    DEFAULT_FOV_DEG,
    CameraPose,
    Mesh,
    PoseDistribution,
    is_watertight,
    merge_meshes,
    normalize_to_unit_sphere,
    read_obj,
    write_obj,
)
from .rasterizer import hard_rasterize, load_binary_png, save_png

CATEGORIES = ("box_stack", "ellipsoid_blend", "table_like", "chair_like")
MANIFEST_VERSION = 1
_GAP = 2e-3


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# primitive shapes

_BOX_FACES = np.array([
    [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
    [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
    [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
], dtype=np.int64)


def box(center, half_extents) -> Mesh:
    cx, cy, cz = center
    hx, hy, hz = half_extents
    verts = np.array([[x, y, z]
                      for x in (cx - hx, cx + hx)
                      for y in (cy - hy, cy + hy)
                      for z in (cz - hz, cz + hz)])
    return Mesh(T.Tensor(verts), _BOX_FACES.copy())


def ellipsoid(center, radii, subdivisions: int = 2) -> Mesh:
    from .geometry import icosphere

    sphere = icosphere(subdivisions)
    verts = sphere.vertices.data * np.asarray(radii) + np.asarray(center)
    return Mesh(T.Tensor(verts), sphere.faces)


def _jitter(rng: np.random.Generator, extents, amount: float = 0.3) -> np.ndarray:
    base = np.asarray(extents, dtype=np.float64)
    return base * (1.0 + rng.uniform(-amount, amount, base.shape))


def gen_shape(category: str, rng: np.random.Generator) -> Mesh:
    """Watertight composite mesh normalized to the unit bounding sphere,
    with per-category extent jitter of +/-30%."""
    if category == "box_stack":
        lower = _jitter(rng, (0.5, 0.32, 0.4))
        upper = _jitter(rng, (0.3, 0.26, 0.24))
        y0 = lower[1]
        parts = [box((0, 0, 0), lower),
                 box((0, y0 + upper[1] + _GAP, 0), upper)]
    elif category == "ellipsoid_blend":
        ra = _jitter(rng, (0.42, 0.3, 0.3))
        rb = _jitter(rng, (0.34, 0.24, 0.26))
        parts = [ellipsoid((-ra[0], 0, 0), ra),
                 ellipsoid((rb[0] + 2 * _GAP, 0, 0), rb)]
    elif category == "table_like":
        top = _jitter(rng, (0.52, 0.05, 0.38))
        leg = _jitter(rng, (0.055, 0.3, 0.055))
        y_top = 2 * leg[1] + _GAP
        parts = [box((0, y_top + top[1], 0), top)]
        for sx in (-1, 1):
            for sz in (-1, 1):
                parts.append(box((sx * (top[0] - leg[0]), leg[1],
                                  sz * (top[2] - leg[2])), leg))
    elif category == "chair_like":
        seat = _jitter(rng, (0.3, 0.05, 0.3))
        back = _jitter(rng, (0.3, 0.34, 0.05))
        leg = _jitter(rng, (0.05, 0.26, 0.05))
        y_seat = 2 * leg[1] + _GAP
        parts = [box((0, y_seat + seat[1], 0), seat),
                 box((0, y_seat + 2 * seat[1] + back[1] + _GAP,
                      -(seat[2] - back[2])), back)]
        for sx in (-1, 1):
            for sz in (-1, 1):
                parts.append(box((sx * (seat[0] - leg[0]), leg[1],
                                  sz * (seat[2] - leg[2])), leg))
    else:
        raise DatasetError(f"unknown category '{category}'; "
                           f"expected one of {CATEGORIES}")
    return normalize_to_unit_sphere(merge_meshes(parts))


# ---------------------------------------------------------------------------
# sketch proxy

def sketchify(silhouette: np.ndarray, rng: Optional[np.random.Generator] = None,
              noise_prob: float = 0.2) -> np.ndarray:
    """One-pixel boundary trace of a binary silhouette, optionally wobbled
    by +/-1 px displacement per contour pixel with the given probability."""
    sil = np.asarray(silhouette) > 0.5
    if not sil.any():
        raise DatasetError("sketchify: empty silhouette")
    h, w = sil.shape
    interior = sil.copy()
    interior[0, :] = interior[-1, :] = False
    interior[:, 0] = interior[:, -1] = False
    inner = interior.copy()
    inner[1:-1, 1:-1] = (sil[1:-1, 1:-1] & sil[:-2, 1:-1] & sil[2:, 1:-1]
                         & sil[1:-1, :-2] & sil[1:-1, 2:])
    boundary = sil & ~inner
    out = np.zeros((h, w), dtype=np.float64)
    ii, jj = np.nonzero(boundary)
    if noise_prob > 0.0:
        if rng is None:
            raise DatasetError("sketchify: rng required when noise_prob > 0")
        for i, j in zip(ii, jj):
            if rng.random() < noise_prob:
                di, dj = rng.integers(-1, 2, size=2)
                i = min(max(int(i) + int(di), 0), h - 1)
                j = min(max(int(j) + int(dj), 0), w - 1)
            out[i, j] = 1.0
    else:
        out[ii, jj] = 1.0
    return out


# ---------------------------------------------------------------------------
# manifest

@dataclass
class SampleRecord:
    sample_id: int
    shape_id: int
    category: str
    split: str
    mesh_path: str
    sketch_path: str
    silhouette_path: str
    pose: CameraPose

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "shape_id": self.shape_id,
            "category": self.category,
            "split": self.split,
            "mesh": self.mesh_path,
            "sketch": self.sketch_path,
            "silhouette": self.silhouette_path,
            "pose": {"elevation_deg": self.pose.elevation_deg,
                     "azimuth_deg": self.pose.azimuth_deg,
                     "distance": self.pose.distance},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        p = d["pose"]
        return cls(d["sample_id"], d["shape_id"], d["category"], d["split"],
                   d["mesh"], d["sketch"], d["silhouette"],
                   CameraPose(p["elevation_deg"], p["azimuth_deg"], p["distance"]))


@dataclass
class Manifest:
    version: int
    seed: int
    resolution: int
    categories: list[str]
    distance: float
    fov_deg: float
    noise_prob: float
    records: list[SampleRecord]
    digests: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "seed": self.seed,
            "resolution": self.resolution,
            "categories": list(self.categories),
            "distance": self.distance,
            "fov_deg": self.fov_deg,
            "noise_prob": self.noise_prob,
            "records": [r.to_dict() for r in self.records],
            "digests": dict(sorted(self.digests.items())),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def split(self, tag: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == tag]

    def save(self, root: Path) -> None:
        with open(Path(root) / "manifest.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, root) -> "Manifest":
        root = Path(root)
        path = root / "manifest.json"
        if not path.exists():
            raise DatasetError(f"no manifest.json under {root}")
        with open(path) as fh:
            d = json.load(fh)
        keys = {"version", "seed", "resolution", "categories", "distance",
                "fov_deg", "noise_prob", "records", "digests"}
        missing = keys - set(d)
        if missing:
            raise DatasetError(f"{path}: missing manifest keys {sorted(missing)}")
        return cls(d["version"], d["seed"], d["resolution"], d["categories"],
                   d["distance"], d["fov_deg"], d["noise_prob"],
                   [SampleRecord.from_dict(r) for r in d["records"]],
                   d["digests"])


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def verify_dataset(root, manifest: Optional[Manifest] = None) -> Manifest:
    """Re-hash every referenced file against the manifest digests."""
    root = Path(root)
    manifest = manifest or Manifest.load(root)
    for rel, want in manifest.digests.items():
        path = root / rel
        if not path.exists():
            raise DatasetError(f"dataset file missing: {rel}")
        got = _file_sha256(path)
        if got != want:
            raise DatasetError(f"digest mismatch for {rel}: {got} != {want}")
    return manifest


def _split_counts(per_category: dict[str, int], test_frac: float = 0.2) -> dict[str, int]:
    """Largest-remainder allocation of test shapes per category."""
    total = sum(per_category.values())
    want_test = int(round(total * test_frac))
    raw = {c: n * test_frac for c, n in per_category.items()}
    alloc = {c: int(math.floor(v)) for c, v in raw.items()}
    leftovers = sorted(per_category, key=lambda c: (raw[c] - alloc[c], c), reverse=True)
    i = 0
    while sum(alloc.values()) < want_test and i < len(leftovers):
        c = leftovers[i]
        if alloc[c] < per_category[c]:
            alloc[c] += 1
        i += 1
    return alloc


def build_dataset(out_dir, n_shapes: int = 50, poses_per_shape: int = 4,
                  resolution: int = 64, seed: int = 0,
                  noise_prob: float = 0.2,
                  pose_dist: Optional[PoseDistribution] = None,
                  fov_deg: float = DEFAULT_FOV_DEG,
                  categories: tuple[str, ...] = CATEGORIES) -> Manifest:
    """Generate shapes, render ground-truth silhouettes at sampled poses,
    derive sketches, and write the digest-verified on-disk layout."""
    root = Path(out_dir)
    (root / "meshes").mkdir(parents=True, exist_ok=True)
    (root / "sketches").mkdir(exist_ok=True)
    (root / "silhouettes").mkdir(exist_ok=True)
    pose_dist = pose_dist or PoseDistribution()

    shape_cats = [categories[i % len(categories)] for i in range(n_shapes)]
    per_cat: dict[str, int] = {}
    for c in shape_cats:
        per_cat[c] = per_cat.get(c, 0) + 1
    test_alloc = _split_counts(per_cat)
    seen: dict[str, int] = {c: 0 for c in per_cat}

    records: list[SampleRecord] = []
    digests: dict[str, str] = {}
    sample_id = 0
    for shape_id in range(n_shapes):
        cat = shape_cats[shape_id]
        rng = np.random.default_rng([seed, shape_id])
        mesh = gen_shape(cat, rng)
        if not is_watertight(mesh):
            raise DatasetError(f"generated shape {shape_id} is not watertight")
        # later shapes of each category become the test split
        seen[cat] += 1
        split = "test" if seen[cat] > per_cat[cat] - test_alloc[cat] else "train"
        mesh_rel = f"meshes/{shape_id:03d}.obj"
        write_obj(mesh, root / mesh_rel)
        digests[mesh_rel] = _file_sha256(root / mesh_rel)
        for pose_id in range(poses_per_shape):
            pose = pose_dist.sample(rng)
            sil = hard_rasterize(mesh, pose, resolution, fov_deg=fov_deg).data
            if sil.sum() < 8:
                raise DatasetError(
                    f"shape {shape_id} renders nearly empty at {pose}")
            sketch = sketchify(sil, rng, noise_prob)
            sil_rel = f"silhouettes/{shape_id:03d}_{pose_id}.png"
            sk_rel = f"sketches/{shape_id:03d}_{pose_id}.png"
            save_png(sil, root / sil_rel)
            save_png(sketch, root / sk_rel)
            digests[sil_rel] = _file_sha256(root / sil_rel)
            digests[sk_rel] = _file_sha256(root / sk_rel)
            records.append(SampleRecord(sample_id, shape_id, cat, split,
                                        mesh_rel, sk_rel, sil_rel, pose))
            sample_id += 1

    manifest = Manifest(MANIFEST_VERSION, seed, resolution, list(categories),
                        pose_dist.distance, fov_deg, noise_prob, records, digests)
    manifest.save(root)
    return verify_dataset(root, manifest)


# ---------------------------------------------------------------------------
# loading

@dataclass
class Sample:
    """One training/eval item loaded into memory."""

    record: SampleRecord
    sketch: np.ndarray      # (H,W) in {0,1}
    silhouette: np.ndarray  # (H,W) in {0,1}

    @property
    def pose(self) -> CameraPose:
        return self.record.pose


def load_sample(root, record: SampleRecord) -> Sample:
    root = Path(root)
    sketch = load_binary_png(root / record.sketch_path)
    sil = load_binary_png(root / record.silhouette_path)
    return Sample(record, sketch, sil)


def load_split(root, manifest: Manifest, split: str) -> list[Sample]:
    return [load_sample(root, r) for r in manifest.split(split)]


def load_mesh(root, record: SampleRecord) -> Mesh:
    return read_obj(Path(root) / record.mesh_path)
