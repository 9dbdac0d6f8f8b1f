"""Training objectives: viewpoint MSE, (multi-scale) silhouette IoU loss,
non-saturating adversarial losses with the R1 gradient penalty, the mesh
regularizer bundle, and the weighted total.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import tensor as T
from .geometry import CameraPose, Mesh, flatten_loss, laplacian_loss, pose_embedding

IOU_EPS = 1e-8


class NonFiniteLossError(ArithmeticError):
    def __init__(self, term: str, value: float):
        super().__init__(f"loss term '{term}' is not finite: {value}")
        self.term = term


@dataclass
class LossWeights:
    """Scale factors of the total objective plus the R1 coefficient.

    ``dd`` multiplies the domain-adaptation term, which is fixed to zero
    here; ``vr`` is carried for config fidelity but multiplies nothing.
    """

    v: float = 10.0
    sd: float = 0.1
    dd: float = 0.1
    r: float = 0.1
    vr: float = 10.0
    gamma: float = 10.0
    levels: tuple[float, ...] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ("v", "sd", "dd", "r", "vr", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight '{name}' must be >= 0")
        self.levels = tuple(float(x) for x in self.levels)


@dataclass
class LossReport:
    """Per-term scalar values of one generator step."""

    sp: float
    r: float
    v: float
    sd: float
    dd: float
    total: float

    def to_dict(self) -> dict:
        return {"sp": self.sp, "r": self.r, "v": self.v, "sd": self.sd,
                "dd": self.dd, "total": self.total}

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


PoseArg = Union[CameraPose, T.Tensor]


def _as_embedding(pose: PoseArg) -> T.Tensor:
    if isinstance(pose, CameraPose):
        emb = pose_embedding(pose)
    else:
        emb = pose
    if emb.ndim == 1:
        emb = T.reshape(emb, (1, emb.size))
    return emb


def viewpoint_loss(pose_pred: PoseArg, pose_gt: PoseArg) -> T.Tensor:
    """MSE between pose embeddings (sin az, cos az, sin el, cos el); zero iff
    the poses coincide modulo a full azimuth turn."""
    a = _as_embedding(pose_pred)
    b = _as_embedding(pose_gt)
    if a.shape != b.shape:
        raise ValueError(f"pose embedding shapes differ: {a.shape} vs {b.shape}")
    return T.tmean(T.square(a - b))


def iou_loss(s1: T.Tensor, s2: T.Tensor) -> T.Tensor:
    """1 - |S1*S2| / |S1 + S2 - S1*S2| over occupancy maps in [0,1]."""
    if s1.shape != s2.shape:
        raise ValueError(f"silhouette resolutions differ: {s1.shape} vs {s2.shape}")
    prod = s1 * s2
    inter = T.tsum(prod)
    union = T.tsum(s1 + s2 - prod)
    return 1.0 - inter / (union + IOU_EPS)


def multiscale_iou(pyr1: Sequence[T.Tensor], pyr2: Sequence[T.Tensor],
                   level_weights: Sequence[float]) -> T.Tensor:
    """Weighted sum of per-level IoU losses over two silhouette pyramids."""
    if len(pyr1) != len(pyr2):
        raise ValueError(f"pyramid depths differ: {len(pyr1)} vs {len(pyr2)}")
    if len(level_weights) != len(pyr1):
        raise ValueError(f"{len(level_weights)} weights for {len(pyr1)} levels")
    total = None
    for w, a, b in zip(level_weights, pyr1, pyr2):
        term = iou_loss(a, b) * float(w)
        total = term if total is None else total + term
    return total


def gan_f(u: Union[T.Tensor, float]) -> T.Tensor:
    """f(u) = -log(1 + exp(-u)), computed without overflow."""
    u = T.as_tensor(u)
    return T.neg(T.softplus(T.neg(u)))


def discriminator_loss(score_real: T.Tensor, score_fake: T.Tensor,
                       grad_norm_sq_real: Union[T.Tensor, float],
                       gamma: float) -> T.Tensor:
    """-[f(real) + f(-fake)] + (gamma/2) * ||grad_x D(real)||^2.

    The critic drives the predicted-view renders ("real") up and the
    random-view renders ("fake") down; the penalty term must arrive from a
    double-backward-capable graph when the critic is being trained.
    """
    loss = T.softplus(T.neg(score_real)) + T.softplus(score_fake)
    loss = T.tmean(loss) if loss.size > 1 else T.reshape(loss, ())
    if gamma != 0.0:
        loss = loss + (gamma / 2.0) * T.as_tensor(grad_norm_sq_real)
    return loss


def generator_adv_loss(score_fake: T.Tensor) -> T.Tensor:
    """softplus(-score): pushes random-view renders toward the critic's
    "real" side without saturating when the critic wins."""
    loss = T.softplus(T.neg(score_fake))
    return T.tmean(loss) if loss.size > 1 else T.reshape(loss, ())


def regularizer_bundle(mesh: Mesh) -> T.Tensor:
    """Laplacian smoothness plus dihedral flatness, unit internal weights."""
    return laplacian_loss(mesh) + flatten_loss(mesh)


def binary_iou(a: np.ndarray, b: np.ndarray, threshold: float = 0.5) -> float:
    """Set IoU of two masks after thresholding; 1.0 when both are empty."""
    am = np.asarray(a) > threshold
    bm = np.asarray(b) > threshold
    union = np.logical_or(am, bm).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(am, bm).sum()) / float(union)


def total_loss(l_sp: T.Tensor, l_r: T.Tensor, l_v: T.Tensor,
               l_sd: Union[T.Tensor, float], weights: LossWeights,
               l_dd: Union[T.Tensor, float] = 0.0) -> tuple[T.Tensor, LossReport]:
    """L = L_sp + lam_r*L_r + lam_v*L_v + lam_sd*L_sd + lam_dd*L_dd.

    The domain-adaptation term defaults to zero. Raises on any non-finite
    component, naming the term.
    """
    l_sd = T.as_tensor(l_sd)
    l_dd = T.as_tensor(l_dd)
    parts = {"sp": l_sp, "r": l_r, "v": l_v, "sd": l_sd, "dd": l_dd}
    for name, t in parts.items():
        val = t.item()
        if not math.isfinite(val):
            raise NonFiniteLossError(name, val)
    total = (l_sp + weights.r * l_r + weights.v * l_v
             + weights.sd * l_sd + weights.dd * l_dd)
    report = LossReport(sp=l_sp.item(), r=l_r.item(), v=l_v.item(),
                        sd=l_sd.item(), dd=l_dd.item(), total=total.item())
    return total, report
