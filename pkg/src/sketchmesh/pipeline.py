"""Training orchestration: random pose sampling, the random-view synthesis
branch, alternating generator/critic updates, learning-rate and progressive
growth schedules, checkpointing, and inference.

All randomness of epoch e is drawn from generators seeded by (seed, e, k),
so a resumed run is bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .dataset import Manifest, Sample, load_split
from .geometry import (
    DEFAULT_DISTANCE,
    DEFAULT_FOV_DEG,
    CameraPose,
    Mesh,
    PoseDistribution,
    icosphere,
)
from .losses import (
    LossReport,
    LossWeights,
    NonFiniteLossError,
    binary_iou,
    discriminator_loss,
    generator_adv_loss,
    multiscale_iou,
    regularizer_bundle,
    total_loss,
    viewpoint_loss,
)
from .networks import (
    CheckpointError,
    DiscriminatorState,
    Generator,
    MLPDiscriminator,
    NetConfig,
    ProgressiveDiscriminator,
    load_checkpoint,
    load_params_from_arrays,
    save_checkpoint,
)
from .rasterizer import hard_rasterize, render_silhouette, silhouette_pyramid
from .tensor.optim import Adam


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Hyperparameters; the defaults follow the reference recipe (2000
    epochs, Adam at 1e-4 decaying by 0.3 every 800 epochs, N=3 views)."""

    epochs: int = 2000
    lr: float = 1e-4
    lr_decay_factor: float = 0.3
    lr_decay_every: int = 800
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 8
    n_views: int = 3
    resolution: int = 64
    sigma: float = 1e-4
    pyramid_levels: int = 3
    elevation_min: float = 0.0
    elevation_max: float = 30.0
    distance: float = DEFAULT_DISTANCE
    fov_deg: float = DEFAULT_FOV_DEG
    lambda_v: float = 10.0
    lambda_sd: float = 0.1
    lambda_dd: float = 0.1
    lambda_r: float = 0.1
    lambda_vr: float = 10.0
    gamma: float = 10.0
    level_weights: tuple[float, ...] = (1.0, 1.0, 1.0)
    code_dim: int = 512
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    template_subdivisions: int = 3
    max_offset: float = 1.0
    disc_base_res: int = 16
    disc_max_res: int = 64
    disc_base_channels: int = 32
    disc_fade_frac: float = 0.3
    stage_epochs: Optional[tuple[int, ...]] = None
    seed: int = 0
    supervision: str = "pred"       # "pred" | "gt"
    rps_on: bool = True
    cd_on: bool = True
    checkpoint_every: int = 50
    dtype: str = "float64"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.epochs <= 0:
            raise ConfigError("epochs must be positive")
        if self.n_views < 1:
            raise ConfigError("n_views must be >= 1")
        if self.resolution < 4 or self.resolution & (self.resolution - 1):
            raise ConfigError(f"resolution {self.resolution} is not a power of two")
        if self.resolution % (2 ** (self.pyramid_levels - 1)):
            raise ConfigError("resolution not divisible for the pyramid levels")
        if len(self.level_weights) != self.pyramid_levels:
            raise ConfigError("level_weights length must equal pyramid_levels")
        if self.supervision not in ("pred", "gt"):
            raise ConfigError(f"supervision must be 'pred' or 'gt', got {self.supervision}")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype}")
        if self.progressive_critic and self.disc_max_res > self.resolution:
            raise ConfigError("disc_max_res cannot exceed the image resolution")

    @property
    def progressive_critic(self) -> bool:
        """The convolutional critic is active only with the random-view
        branch on; rps_off makes the whole adversarial side inert."""
        return self.rps_on and self.cd_on

    def net_config(self) -> NetConfig:
        return NetConfig(resolution=self.resolution, code_dim=self.code_dim,
                         encoder_channels=tuple(self.encoder_channels),
                         template_subdivisions=self.template_subdivisions,
                         max_offset=self.max_offset,
                         disc_base_res=self.disc_base_res,
                         disc_max_res=self.disc_max_res,
                         disc_base_channels=self.disc_base_channels)

    def loss_weights(self) -> LossWeights:
        return LossWeights(v=self.lambda_v, sd=self.lambda_sd, dd=self.lambda_dd,
                           r=self.lambda_r, vr=self.lambda_vr, gamma=self.gamma,
                           levels=tuple(self.level_weights))

    def pose_distribution(self) -> PoseDistribution:
        return PoseDistribution(elevation_min=self.elevation_min,
                                elevation_max=self.elevation_max,
                                distance=self.distance)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("level_weights", "encoder_channels", "stage_epochs"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for key in ("level_weights", "encoder_channels", "stage_epochs"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def sample_pose(dist: PoseDistribution, rng: np.random.Generator) -> CameraPose:
    """Draw one camera pose; reproducible given the generator state."""
    return dist.sample(rng)


# ---------------------------------------------------------------------------
# network bundle

Critic = Union[ProgressiveDiscriminator, MLPDiscriminator, None]


@dataclass
class NetBundle:
    config: TrainConfig
    generator: Generator
    critic: Critic

    def generator_params(self):
        return self.generator.named_params()

    def critic_params(self):
        return [] if self.critic is None else self.critic.named_params()


def build_nets(cfg: TrainConfig) -> NetBundle:
    gen = Generator(cfg.net_config(), cfg.seed, cfg.distance)
    critic: Critic = None
    if cfg.rps_on:
        if cfg.cd_on:
            critic = ProgressiveDiscriminator(cfg.net_config(), cfg.seed)
        else:
            critic = MLPDiscriminator(cfg.net_config(), cfg.seed)
    return NetBundle(cfg, gen, critic)


def _is_progressive(cfg: TrainConfig) -> bool:
    return cfg.progressive_critic


# ---------------------------------------------------------------------------
# scheduling

def stage_boundaries(cfg: TrainConfig) -> list[int]:
    """First epoch of each critic stage."""
    n_stages = cfg.net_config().max_stage + 1 if cfg.progressive_critic else 1
    if cfg.stage_epochs is not None:
        bounds = list(cfg.stage_epochs)
        if len(bounds) != n_stages or bounds[0] != 0 or bounds != sorted(bounds):
            raise ConfigError("stage_epochs must be sorted, start at 0, and "
                              f"have {n_stages} entries")
        return bounds
    return [(k * cfg.epochs) // n_stages for k in range(n_stages)]


def stage_at(cfg: TrainConfig, epoch: int) -> int:
    stage = 0
    for k, start in enumerate(stage_boundaries(cfg)):
        if epoch >= start:
            stage = k
    return stage


def fade_alpha(cfg: TrainConfig, epoch: int, step_in_epoch: int,
               steps_per_epoch: int) -> float:
    """Linear fade-in over the first disc_fade_frac of each stage; the base
    stage never fades."""
    bounds = stage_boundaries(cfg)
    stage = stage_at(cfg, epoch)
    if stage == 0:
        return 1.0
    start = bounds[stage]
    end = bounds[stage + 1] if stage + 1 < len(bounds) else cfg.epochs
    total_steps = max(1, (end - start) * steps_per_epoch)
    done = (epoch - start) * steps_per_epoch + step_in_epoch
    fade_steps = max(1, int(cfg.disc_fade_frac * total_steps))
    return min(1.0, done / fade_steps)


def _critic_resolution(cfg: TrainConfig, state: Optional[DiscriminatorState]) -> int:
    if cfg.progressive_critic and state is not None:
        return cfg.disc_base_res * (2 ** state.stage)
    return cfg.resolution


def _render_sigma(cfg: TrainConfig, render_res: int) -> float:
    # keep the soft band a constant width in pixels across resolutions
    ratio = cfg.resolution / render_res
    return cfg.sigma * ratio * ratio


# ---------------------------------------------------------------------------
# steps

def _batch_images(batch: Sequence[Sample]) -> T.Tensor:
    arr = np.stack([s.sketch for s in batch])[:, None, :, :]
    return T.Tensor(arr)


def _gt_embeddings(batch: Sequence[Sample]) -> T.Tensor:
    return T.Tensor(np.stack([s.pose.embedding() for s in batch]))


def _emb_row(emb: T.Tensor, i: int) -> T.Tensor:
    return T.reshape(T.getitem(emb, (slice(i, i + 1), slice(None))), (4,))


def _fill_missing_grads(adam: Adam) -> None:
    """Layers outside the active progressive stage receive zero gradients."""
    for p in adam.params:
        if p.grad is None:
            p.grad = T.Tensor(np.zeros_like(p.data))


def generator_step(batch: Sequence[Sample], nets: NetBundle, adam: Adam,
                   rng: np.random.Generator,
                   state: Optional[DiscriminatorState]) -> LossReport:
    """One generator update: silhouette, viewpoint, regularizer, and (with
    the random-view branch on) adversarial terms."""
    cfg = nets.config
    gen = nets.generator
    weights = cfg.loss_weights()
    n = len(batch)

    enc = gen.encode(_batch_images(batch))
    pose_pred = gen.predict_view(enc.z_l)
    pred_emb = pose_pred.embedding()
    gt_emb = _gt_embeddings(batch)
    l_v = viewpoint_loss(pred_emb, gt_emb)

    cond_emb = pred_emb if cfg.supervision == "pred" else gt_emb
    z_v = gen.view_embed(cond_emb)
    meshes = gen.decode(enc.z_s, z_v)

    l_sp_sum = None
    l_r_sum = None
    for i, (sample, mesh) in enumerate(zip(batch, meshes)):
        sup_pose: Union[CameraPose, T.Tensor]
        if cfg.supervision == "pred":
            sup_pose = _emb_row(cond_emb, i)
        else:
            sup_pose = sample.pose
        sil = render_silhouette(mesh.vertices, mesh.faces, sup_pose,
                                cfg.resolution, cfg.sigma,
                                distance=cfg.distance, fov_deg=cfg.fov_deg)
        pyr = silhouette_pyramid(sil, cfg.pyramid_levels)
        gt_pyr = silhouette_pyramid(T.Tensor(sample.silhouette), cfg.pyramid_levels)
        l_sp_i = multiscale_iou(pyr, gt_pyr, weights.levels)
        l_r_i = regularizer_bundle(mesh)
        l_sp_sum = l_sp_i if l_sp_sum is None else l_sp_sum + l_sp_i
        l_r_sum = l_r_i if l_r_sum is None else l_r_sum + l_r_i
    l_sp = l_sp_sum * (1.0 / n)
    l_r = l_r_sum * (1.0 / n)

    l_sd: Union[T.Tensor, float] = 0.0
    if cfg.rps_on and nets.critic is not None:
        dist = cfg.pose_distribution()
        rand_poses = [sample_pose(dist, rng) for _ in range(n)]
        rand_emb = T.Tensor(np.stack([p.embedding() for p in rand_poses]))
        z_vr = gen.view_embed(rand_emb)
        meshes_r = gen.decode(enc.z_s, z_vr)
        res = _critic_resolution(cfg, state)
        sig = _render_sigma(cfg, res)
        views = []
        for mesh_r in meshes_r:
            for _ in range(cfg.n_views):
                pose = sample_pose(dist, rng)
                views.append(render_silhouette(mesh_r.vertices, mesh_r.faces,
                                               pose, res, sig,
                                               distance=cfg.distance,
                                               fov_deg=cfg.fov_deg))
        stack = T.concat([T.reshape(v, (1, 1, res, res)) for v in views], axis=0)
        scores = nets.critic(stack, state)
        l_sd = generator_adv_loss(scores)

    loss, report = total_loss(l_sp, l_r, l_v, l_sd, weights)
    adam.zero_grad()
    T.backward(loss)
    adam.step()
    T.ACTIVE_GRAPH.reset()
    return report


def discriminator_step(batch: Sequence[Sample], nets: NetBundle, adam: Adam,
                       rng: np.random.Generator,
                       state: Optional[DiscriminatorState]) -> float:
    """One critic update on predicted-view ("real") versus random-view
    ("fake") renders; both mesh branches are held constant, and the R1
    penalty is taken on the real branch."""
    cfg = nets.config
    gen = nets.generator
    if nets.critic is None:
        raise ConfigError("discriminator_step requires the random-view branch")
    n = len(batch)
    dist = cfg.pose_distribution()

    with T.no_grad():
        enc = gen.encode(_batch_images(batch))
        pose_pred = gen.predict_view(enc.z_l)
        cond_emb = pose_pred.embedding() if cfg.supervision == "pred" \
            else _gt_embeddings(batch)
        z_v = gen.view_embed(cond_emb)
        meshes = gen.decode(enc.z_s, z_v)
        rand_poses = [sample_pose(dist, rng) for _ in range(n)]
        rand_emb = T.Tensor(np.stack([p.embedding() for p in rand_poses]))
        z_vr = gen.view_embed(rand_emb)
        meshes_r = gen.decode(enc.z_s, z_vr)

        res = _critic_resolution(cfg, state)
        sig = _render_sigma(cfg, res)
        real, fake = [], []
        for mesh, mesh_r in zip(meshes, meshes_r):
            poses = [sample_pose(dist, rng) for _ in range(cfg.n_views)]
            for pose in poses:          # shared poses across the two branches
                real.append(render_silhouette(mesh.vertices, mesh.faces, pose,
                                              res, sig, distance=cfg.distance,
                                              fov_deg=cfg.fov_deg).data)
                fake.append(render_silhouette(mesh_r.vertices, mesh_r.faces, pose,
                                              res, sig, distance=cfg.distance,
                                              fov_deg=cfg.fov_deg).data)

    imgs_real = T.Tensor(np.stack(real)[:, None, :, :], requires_grad=True)
    imgs_fake = T.Tensor(np.stack(fake)[:, None, :, :])
    s_real = nets.critic(imgs_real, state)
    s_fake = nets.critic(imgs_fake, state)
    (g_img,) = T.grad(T.tsum(s_real), [imgs_real], create_graph=True)
    r1 = T.tsum(T.square(g_img)) * (1.0 / len(real))
    loss = discriminator_loss(s_real, s_fake, r1, cfg.gamma)

    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError("critic", value)
    adam.zero_grad()
    T.backward(loss)
    _fill_missing_grads(adam)
    adam.step()
    T.ACTIVE_GRAPH.reset()
    return value


# ---------------------------------------------------------------------------
# checkpoint plumbing

def _adam_arrays(tag: str, adam: Adam, names: list[str]) -> dict[str, np.ndarray]:
    out = {f"{tag}.t": np.array(float(adam.state.t))}
    for name, m, v in zip(names, adam.state.m, adam.state.v):
        out[f"{tag}.m.{name}"] = m.copy()
        out[f"{tag}.v.{name}"] = v.copy()
    return out


def _restore_adam(tag: str, adam: Adam, names: list[str],
                  arrays: dict[str, np.ndarray]) -> None:
    adam.state.t = int(arrays[f"{tag}.t"].item())
    for i, name in enumerate(names):
        adam.state.m[i] = arrays[f"{tag}.m.{name}"].copy()
        adam.state.v[i] = arrays[f"{tag}.v.{name}"].copy()


def save_train_checkpoint(path, nets: NetBundle, adam_g: Adam,
                          adam_d: Optional[Adam], epoch_done: int,
                          global_step: int) -> None:
    tensors: dict[str, np.ndarray] = {}
    gen_named = nets.generator_params()
    for name, p in gen_named:
        tensors[name] = p.data.copy()
    for name, p in nets.critic_params():
        tensors[name] = p.data.copy()
    tensors.update(_adam_arrays("adam_g", adam_g, [n for n, _ in gen_named]))
    if adam_d is not None:
        tensors.update(_adam_arrays("adam_d", adam_d,
                                    [n for n, _ in nets.critic_params()]))
    tensors["meta.epoch_done"] = np.array(float(epoch_done))
    tensors["meta.global_step"] = np.array(float(global_step))
    save_checkpoint(path, nets.config.to_dict(), tensors)


def load_train_checkpoint(path) -> tuple[NetBundle, dict[str, np.ndarray]]:
    config, tensors = load_checkpoint(path)
    try:
        cfg = TrainConfig.from_dict(config)
    except (TypeError, ConfigError) as e:
        raise CheckpointError(f"{path}: config does not describe a valid "
                              f"training setup: {e}") from e
    nets = build_nets(cfg)
    load_params_from_arrays(nets.generator_params(), tensors)
    if nets.critic is not None:
        load_params_from_arrays(nets.critic_params(), tensors)
    return nets, tensors


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Optional[Path]
    epochs_run: int
    final_report: Optional[LossReport]


def train(cfg: TrainConfig, data_dir, out_dir,
          resume: Optional[str] = None,
          log_cb: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Alternating critic/generator training over the train split; writes
    SKF1 checkpoints and a line-delimited JSON log under out_dir."""
    with T.using_dtype(cfg.dtype):
        return _train_impl(cfg, data_dir, out_dir, resume, log_cb)


def _train_impl(cfg: TrainConfig, data_dir, out_dir,
                resume: Optional[str],
                log_cb: Optional[Callable[[dict], None]]) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest.load(data_dir)
    if manifest.resolution != cfg.resolution:
        raise ConfigError(f"dataset resolution {manifest.resolution} != "
                          f"configured resolution {cfg.resolution}")
    samples = load_split(data_dir, manifest, "train")
    if not samples:
        raise ConfigError("train split is empty")

    start_epoch = 0
    global_step = 0
    if resume is not None:
        nets, tensors = load_train_checkpoint(resume)
        if nets.config.to_dict() != cfg.to_dict():
            raise CheckpointError("resume checkpoint was produced with a "
                                  "different configuration")
        start_epoch = int(tensors["meta.epoch_done"].item()) + 1
        global_step = int(tensors["meta.global_step"].item())
    else:
        nets = build_nets(cfg)

    adam_g = Adam([p for _, p in nets.generator_params()], cfg.lr,
                  (cfg.beta1, cfg.beta2))
    adam_d = Adam([p for _, p in nets.critic_params()], cfg.lr,
                  (cfg.beta1, cfg.beta2)) if nets.critic is not None else None
    if resume is not None:
        _restore_adam("adam_g", adam_g, [n for n, _ in nets.generator_params()], tensors)
        if adam_d is not None:
            _restore_adam("adam_d", adam_d, [n for n, _ in nets.critic_params()], tensors)

    steps_per_epoch = math.ceil(len(samples) / cfg.batch_size)
    log_path = out / "train_log.jsonl"
    ckpt_path = out / "checkpoint.skf1"
    report: Optional[LossReport] = None

    with open(log_path, "a") as log:
        for epoch in range(start_epoch, cfg.epochs):
            lr = cfg.lr_at(epoch)
            adam_g.lr = lr
            if adam_d is not None:
                adam_d.lr = lr
            stage = stage_at(cfg, epoch) if cfg.progressive_critic else 0
            rng_shuffle = np.random.default_rng([cfg.seed, epoch, 0])
            rng_g = np.random.default_rng([cfg.seed, epoch, 1])
            rng_d = np.random.default_rng([cfg.seed, epoch, 2])
            perm = rng_shuffle.permutation(len(samples))
            for bstart in range(0, len(samples), cfg.batch_size):
                idx = perm[bstart:bstart + cfg.batch_size]
                batch = [samples[i] for i in idx]
                step_in_epoch = bstart // cfg.batch_size
                state = None
                if cfg.progressive_critic:
                    alpha = fade_alpha(cfg, epoch, step_in_epoch, steps_per_epoch)
                    state = DiscriminatorState(stage=stage, alpha=alpha)
                d_loss = None
                if nets.critic is not None:
                    d_loss = discriminator_step(batch, nets, adam_d, rng_d, state)
                report = generator_step(batch, nets, adam_g, rng_g, state)
                entry = {"step": global_step, "epoch": epoch, "lr": lr,
                         "stage": stage,
                         "alpha": state.alpha if state else None,
                         "d_loss": d_loss, **report.to_dict()}
                log.write(json.dumps(entry, sort_keys=True) + "\n")
                if log_cb is not None:
                    log_cb(entry)
                global_step += 1
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1:
                save_train_checkpoint(ckpt_path, nets, adam_g, adam_d,
                                      epoch, global_step)
    if start_epoch >= cfg.epochs:
        save_train_checkpoint(ckpt_path, nets, adam_g, adam_d,
                              cfg.epochs - 1, global_step)
    return TrainResult(ckpt_path, log_path, cfg.epochs - start_epoch, report)


# ---------------------------------------------------------------------------
# inference

def infer(image: np.ndarray, nets: NetBundle) -> tuple[Mesh, CameraPose]:
    """Deterministic single forward pass: sketch -> (mesh, predicted pose)."""
    cfg = nets.config
    arr = np.asarray(image, dtype=np.float64)
    if arr.shape != (cfg.resolution, cfg.resolution):
        raise ValueError(f"expected a {cfg.resolution}x{cfg.resolution} sketch, "
                         f"got {arr.shape}")
    gen = nets.generator
    with T.no_grad():
        enc = gen.encode(T.Tensor(arr[None, None, :, :]))
        pose_pred = gen.predict_view(enc.z_l)
        z_v = gen.view_embed(pose_pred.embedding())
        mesh = gen.decode(enc.z_s, z_v)[0]
    return mesh.detached(), pose_pred.poses()[0]


def roundtrip_iou(sample: Sample, nets: NetBundle) -> float:
    """Hard-render the inferred mesh at its predicted pose and compare with
    the sample's stored silhouette."""
    mesh, pose = infer(sample.sketch, nets)
    rendered = hard_rasterize(mesh, pose, nets.config.resolution,
                              fov_deg=nets.config.fov_deg)
    return binary_iou(rendered.data, sample.silhouette)


# ---------------------------------------------------------------------------
# direct offset fitting (no networks)

def fit_offsets(target_sils: Sequence[np.ndarray], poses: Sequence[CameraPose],
                steps: int = 2000, lr: float = 1e-2, resolution: int = 64,
                sigma: float = 1e-4, lambda_r: float = 0.1,
                subdivisions: int = 3, fov_deg: float = DEFAULT_FOV_DEG,
                level_weights: tuple[float, ...] = (1.0, 1.0, 1.0),
                log_every: int = 0) -> tuple[Mesh, list[float]]:
    """Optimize per-vertex offsets of the template against fixed silhouettes
    with the multiscale IoU loss plus the weighted regularizer bundle."""
    template = icosphere(subdivisions)
    offsets = T.Tensor(np.zeros_like(template.vertices.data), requires_grad=True)
    adam = Adam([offsets], lr=lr)
    levels = len(level_weights)
    gt_pyrs = [silhouette_pyramid(T.Tensor(s), levels) for s in target_sils]
    history: list[float] = []
    for step in range(steps):
        mesh = Mesh(template.vertices + offsets, template.faces)
        l_sp = None
        for pose, gt_pyr in zip(poses, gt_pyrs):
            sil = render_silhouette(mesh.vertices, mesh.faces, pose, resolution,
                                    sigma, fov_deg=fov_deg)
            pyr = silhouette_pyramid(sil, levels)
            term = multiscale_iou(pyr, gt_pyr, level_weights)
            l_sp = term if l_sp is None else l_sp + term
        l_sp = l_sp * (1.0 / len(poses))
        loss = l_sp + lambda_r * regularizer_bundle(mesh)
        adam.zero_grad()
        T.backward(loss)
        adam.step()
        T.ACTIVE_GRAPH.reset()
        if log_every and (step + 1) % log_every == 0:
            history.append(loss.item())
    final = Mesh((template.vertices + offsets).detach(), template.faces)
    return final, history
