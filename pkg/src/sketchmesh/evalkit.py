"""Voxel-IoU evaluation protocol: per-category scores under ground-truth
and predicted pose conditioning, plus the three-row ablation matrix
(baseline, +random pose sampling, +random pose sampling +conv critic).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .dataset import Manifest, load_mesh, load_sample
from .geometry import (
    Mesh,
    normalize_to_unit_sphere,
    pose_embedding,
    voxel_iou,
    voxelize,
)
from .pipeline import NetBundle, TrainConfig, build_nets, train

ABLATION_ROWS = (
    ("baseline", dict(rps_on=False, cd_on=False)),
    ("+RPS", dict(rps_on=True, cd_on=False)),
    ("+RPS+CD", dict(rps_on=True, cd_on=True)),
)


@dataclass
class EvalResult:
    mode: str
    voxel_res: int
    per_category: dict[str, float]
    mean: float
    per_sample: list[dict]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "voxel_res": self.voxel_res,
                "per_category": self.per_category, "mean": self.mean,
                "per_sample": self.per_sample}


def _predict_mesh(nets: NetBundle, sketch: np.ndarray, mode: str,
                  gt_pose) -> Mesh:
    gen = nets.generator
    with T.no_grad():
        enc = gen.encode(T.Tensor(sketch[None, None, :, :]))
        if mode == "pred":
            emb = gen.predict_view(enc.z_l).embedding()
        else:
            emb = T.reshape(pose_embedding(gt_pose), (1, 4))
        z_v = gen.view_embed(emb)
        mesh = gen.decode(enc.z_s, z_v)[0]
    return mesh.detached()


def evaluate(nets: NetBundle, data_dir, manifest: Optional[Manifest] = None,
             mode: str = "pred", voxel_res: int = 32,
             split: str = "test") -> EvalResult:
    """Voxelize predicted and ground-truth meshes on the canonical cube
    (after normalizing both to the unit bounding sphere) and report IoU per
    category; the overall mean is the unweighted mean of category means."""
    if mode not in ("pred", "gt"):
        raise ValueError(f"mode must be 'pred' or 'gt', got {mode}")
    manifest = manifest or Manifest.load(data_dir)
    records = manifest.split(split)
    if not records:
        raise ValueError(f"split '{split}' is empty")
    gt_cache: dict[int, object] = {}
    per_sample = []
    by_cat: dict[str, list[float]] = {}
    for rec in records:
        sample = load_sample(data_dir, rec)
        pred = _predict_mesh(nets, sample.sketch, mode, rec.pose)
        if rec.shape_id not in gt_cache:
            gt_mesh = normalize_to_unit_sphere(load_mesh(data_dir, rec))
            gt_cache[rec.shape_id] = voxelize(gt_mesh, voxel_res)
        grid_gt = gt_cache[rec.shape_id]
        grid_pred = voxelize(normalize_to_unit_sphere(pred), voxel_res)
        iou = voxel_iou(grid_pred, grid_gt)
        per_sample.append({"sample_id": rec.sample_id, "shape_id": rec.shape_id,
                           "category": rec.category, "iou": iou})
        by_cat.setdefault(rec.category, []).append(iou)
    per_category = {c: float(np.mean(v)) for c, v in sorted(by_cat.items())}
    mean = float(np.mean(list(per_category.values())))
    return EvalResult(mode, voxel_res, per_category, mean, per_sample)


def template_baseline(cfg: TrainConfig, data_dir, mode: str = "gt",
                      voxel_res: int = 32, split: str = "test") -> EvalResult:
    """Score of the untrained model: the zero-initialized decoder emits the
    undeformed template for every input."""
    return evaluate(build_nets(cfg), data_dir, mode=mode,
                    voxel_res=voxel_res, split=split)


@dataclass
class AblationRow:
    name: str
    rps_on: bool
    cd_on: bool
    gt: EvalResult
    pred: EvalResult

    def to_dict(self) -> dict:
        return {"name": self.name, "rps_on": self.rps_on, "cd_on": self.cd_on,
                "gt": self.gt.to_dict(), "pred": self.pred.to_dict()}


@dataclass
class AblationResult:
    rows: list[AblationRow]

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows]}

    def means(self, mode: str = "gt") -> list[float]:
        return [getattr(r, mode).mean for r in self.rows]


def ablation_matrix(base_cfg: TrainConfig, data_dir, out_dir,
                    voxel_res: int = 32) -> AblationResult:
    """Train the three flag configurations under one shared seed and
    evaluate each in both pose modes. Row order: baseline, +RPS, +RPS+CD."""
    out = Path(out_dir)
    rows = []
    for name, flags in ABLATION_ROWS:
        cfg = replace(base_cfg, **flags)
        run_dir = out / name.replace("+", "plus_").lower()
        result = train(cfg, data_dir, run_dir)
        from .pipeline import load_train_checkpoint

        nets, _ = load_train_checkpoint(result.checkpoint_path)
        gt = evaluate(nets, data_dir, mode="gt", voxel_res=voxel_res)
        pred = evaluate(nets, data_dir, mode="pred", voxel_res=voxel_res)
        rows.append(AblationRow(name, flags["rps_on"], flags["cd_on"], gt, pred))
    return AblationResult(rows)
