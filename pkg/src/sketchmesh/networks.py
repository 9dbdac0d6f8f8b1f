"""Learnable components: encoder, viewpoint predictor, view embedding,
mesh decoder, and the progressive convolutional silhouette critic (plus an
MLP critic variant for ablations), with SKF1 checkpoint serialization.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .geometry import CameraPose, Mesh, apply_offsets, icosphere


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# layers

class Linear:
    def __init__(self, rng: np.random.Generator, fan_in: int, fan_out: int,
                 name: str, zero_init: bool = False):
        if zero_init:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out))
        self.w = T.Tensor(w, requires_grad=True)
        self.b = T.Tensor(np.zeros(fan_out), requires_grad=True)
        self.name = name

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.linear(x, self.w, self.b)

    def named_params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class Conv:
    def __init__(self, rng: np.random.Generator, cin: int, cout: int, k: int,
                 name: str, stride: int = 1, pad: Optional[int] = None):
        std = math.sqrt(2.0 / (cin * k * k))
        self.w = T.Tensor(rng.normal(0.0, std, (cout, cin, k, k)), requires_grad=True)
        self.b = T.Tensor(np.zeros(cout), requires_grad=True)
        self.stride = stride
        self.pad = (k // 2) if pad is None else pad
        self.name = name

    def __call__(self, x: T.Tensor) -> T.Tensor:
        """Channel-first (C,B,H,W) convolution; the conv stacks keep this
        layout end to end to avoid large transposes."""
        return T.conv2d_cb(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def named_params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


def _collect(modules) -> list:
    out = []
    for m in modules:
        out.extend(m.named_params())
    return out


# ---------------------------------------------------------------------------
# config

@dataclass
class NetConfig:
    resolution: int = 64
    code_dim: int = 512
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    view_hidden: int = 64
    decoder_hidden: tuple[int, ...] = (512, 512)
    template_subdivisions: int = 3
    max_offset: float = 1.0
    disc_base_res: int = 16
    disc_max_res: int = 64
    disc_base_channels: int = 64
    disc_head_hidden: int = 64
    mlp_disc_hidden: tuple[int, ...] = (256, 64)
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.resolution % (2 ** len(self.encoder_channels)):
            raise ValueError(
                f"resolution {self.resolution} must be divisible by "
                f"2^{len(self.encoder_channels)} for the encoder strides")
        if self.disc_max_res % self.disc_base_res:
            raise ValueError("disc_max_res must be a multiple of disc_base_res")

    @property
    def max_stage(self) -> int:
        return int(round(math.log2(self.disc_max_res / self.disc_base_res)))

    def stage_resolution(self, stage: int) -> int:
        return self.disc_base_res * (2 ** stage)


@dataclass
class EncoderOutput:
    z_s: T.Tensor  # (B, code_dim), unit rows
    z_l: T.Tensor  # (B, code_dim), unit rows


# ---------------------------------------------------------------------------
# generator side

class Encoder:
    """Strided conv stack with two L2-normalized linear heads."""

    def __init__(self, rng: np.random.Generator, cfg: NetConfig):
        self.cfg = cfg
        chans = (1,) + cfg.encoder_channels
        self.convs = [Conv(rng, chans[i], chans[i + 1], 3, f"encoder.conv{i}")
                      for i in range(len(cfg.encoder_channels))]
        side = cfg.resolution // (2 ** len(cfg.encoder_channels))
        feat = cfg.encoder_channels[-1] * side * side
        self.head_s = Linear(rng, feat, cfg.code_dim, "encoder.head_s")
        self.head_l = Linear(rng, feat, cfg.code_dim, "encoder.head_l")
        self._feat = feat

    def __call__(self, images: T.Tensor) -> EncoderOutput:
        x = images
        if x.ndim == 2:
            x = T.reshape(x, (1, 1) + x.shape)
        elif x.ndim == 3:
            x = T.reshape(x, (1,) + x.shape)
        if x.shape[2] != self.cfg.resolution or x.shape[3] != self.cfg.resolution:
            raise ValueError(f"encoder expects {self.cfg.resolution}x"
                             f"{self.cfg.resolution} input, got {x.shape[2]}x{x.shape[3]}")
        batch = x.shape[0]
        x = T.reshape(x, (1, batch) + x.shape[2:])    # single gray channel
        for conv in self.convs:
            x = T.avg_pool2x(T.relu(conv(x)))
        x = T.reshape(T.transpose(x, (1, 0, 2, 3)), (batch, self._feat))
        z_s = T.l2_normalize(self.head_s(x))
        z_l = T.l2_normalize(self.head_l(x))
        return EncoderOutput(z_s=z_s, z_l=z_l)

    def named_params(self):
        return _collect(self.convs + [self.head_s, self.head_l])


@dataclass
class PosePrediction:
    """Differentiable viewpoint estimate for a batch of inputs."""

    elevation_deg: T.Tensor  # (B,1), in [-90, 90] by tanh scaling
    azimuth_sin: T.Tensor    # (B,1), unit circle pair
    azimuth_cos: T.Tensor
    distance: float

    def embedding(self) -> T.Tensor:
        """(B,4) rows of (sin az, cos az, sin el, cos el)."""
        rad = self.elevation_deg * (math.pi / 180.0)
        return T.concat([self.azimuth_sin, self.azimuth_cos,
                         T.tsin(rad), T.tcos(rad)], axis=1)

    def poses(self) -> list[CameraPose]:
        el = self.elevation_deg.data[:, 0]
        az = np.degrees(np.arctan2(self.azimuth_sin.data[:, 0],
                                   self.azimuth_cos.data[:, 0])) % 360.0
        return [CameraPose(float(np.clip(e, -90.0, 90.0)), float(a), self.distance)
                for e, a in zip(el, az)]


class ViewPredictor:
    """Two FC layers from the view-latent code to an Euler-angle viewpoint;
    azimuth is regressed as a (sin, cos) pair to avoid the wrap at 0/360."""

    def __init__(self, rng: np.random.Generator, cfg: NetConfig):
        self.fc1 = Linear(rng, cfg.code_dim, cfg.view_hidden, "view_head.fc1")
        self.fc2 = Linear(rng, cfg.view_hidden, 3, "view_head.fc2")

    def __call__(self, z_l: T.Tensor, distance: float) -> PosePrediction:
        h = T.relu(self.fc1(z_l))
        out = self.fc2(h)
        raw_el = T.getitem(out, (slice(None), slice(0, 1)))
        raw_s = T.getitem(out, (slice(None), slice(1, 2)))
        raw_c = T.getitem(out, (slice(None), slice(2, 3)))
        el = 90.0 * T.tanh(raw_el)
        norm = T.tsqrt(T.square(raw_s) + T.square(raw_c) + 1e-8)
        return PosePrediction(elevation_deg=el,
                              azimuth_sin=raw_s / norm,
                              azimuth_cos=raw_c / norm,
                              distance=distance)

    def named_params(self):
        return _collect([self.fc1, self.fc2])


class ViewEmbedder:
    """Two FC layers from the pose embedding to the view code z_v."""

    def __init__(self, rng: np.random.Generator, cfg: NetConfig):
        self.fc1 = Linear(rng, 4, cfg.view_hidden, "view_embed.fc1")
        self.fc2 = Linear(rng, cfg.view_hidden, cfg.code_dim, "view_embed.fc2")

    def __call__(self, pose_emb: T.Tensor) -> T.Tensor:
        if pose_emb.ndim == 1:
            pose_emb = T.reshape(pose_emb, (1, pose_emb.size))
        h = T.relu(self.fc1(pose_emb))
        return T.l2_normalize(self.fc2(h))

    def named_params(self):
        return _collect([self.fc1, self.fc2])


class Decoder:
    """MLP from concat(z_s, z_v) to tanh-bounded vertex offsets on the
    template; the final layer starts at zero so training begins from the
    undeformed template."""

    def __init__(self, rng: np.random.Generator, cfg: NetConfig, template: Mesh):
        self.cfg = cfg
        self.template = template
        dims = (2 * cfg.code_dim,) + cfg.decoder_hidden
        self.hidden = [Linear(rng, dims[i], dims[i + 1], f"decoder.fc{i}")
                       for i in range(len(cfg.decoder_hidden))]
        self.out = Linear(rng, dims[-1], template.num_vertices * 3,
                          "decoder.out", zero_init=True)

    def offsets(self, z_s: T.Tensor, z_v: T.Tensor) -> T.Tensor:
        x = T.concat([z_s, z_v], axis=1)
        for fc in self.hidden:
            x = T.relu(fc(x))
        return T.tanh(self.out(x)) * self.cfg.max_offset  # (B, V*3)

    def __call__(self, z_s: T.Tensor, z_v: T.Tensor) -> list[Mesh]:
        flat = self.offsets(z_s, z_v)
        batch = flat.shape[0]
        vshape = self.template.vertices.shape
        meshes = []
        for i in range(batch):
            row = T.getitem(flat, (slice(i, i + 1), slice(None)))
            meshes.append(apply_offsets(self.template, T.reshape(row, vshape)))
        return meshes

    def named_params(self):
        return _collect(self.hidden + [self.out])


class Generator:
    """Encoder, viewpoint heads, and decoder bundled with the template."""

    def __init__(self, cfg: NetConfig, seed: int, distance: float):
        rng = np.random.default_rng([seed, 101])
        self.cfg = cfg
        self.distance = distance
        self.template = icosphere(cfg.template_subdivisions)
        self.encoder = Encoder(rng, cfg)
        self.view_pred = ViewPredictor(rng, cfg)
        self.view_embed = ViewEmbedder(rng, cfg)
        self.decoder = Decoder(rng, cfg, self.template)

    def encode(self, images: T.Tensor) -> EncoderOutput:
        return self.encoder(images)

    def predict_view(self, z_l: T.Tensor) -> PosePrediction:
        return self.view_pred(z_l, self.distance)

    def decode(self, z_s: T.Tensor, z_v: T.Tensor) -> list[Mesh]:
        return self.decoder(z_s, z_v)

    def named_params(self):
        return (self.encoder.named_params() + self.view_pred.named_params()
                + self.view_embed.named_params() + self.decoder.named_params())


# ---------------------------------------------------------------------------
# critics

@dataclass
class DiscriminatorState:
    """Progressive-growth position: current stage and fade-in blend."""

    stage: int = 0
    alpha: float = 1.0

    def __post_init__(self):
        if self.stage < 0:
            raise ValueError("stage must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")


class ProgressiveDiscriminator:
    """Convolutional critic trained on increasing silhouette resolution.

    Stage k accepts base_res * 2^k inputs through its own from-gray layer;
    during fade-in the new stage blends with the previous stage applied to
    the 2x-downsampled input. All stages are allocated up front so growth
    preserves existing weights bit-exact.
    """

    def __init__(self, cfg: NetConfig, seed: int):
        rng = np.random.default_rng([seed, 202])
        self.cfg = cfg
        self.slope = cfg.leaky_slope
        n = cfg.max_stage + 1
        self.channels = [max(8, cfg.disc_base_channels >> k) for k in range(n)]
        self.from_gray = [Conv(rng, 1, self.channels[k], 1, f"disc.from_gray{k}", pad=0)
                          for k in range(n)]
        self.blocks = [None] + [Conv(rng, self.channels[k], self.channels[k - 1], 3,
                                     f"disc.block{k}") for k in range(1, n)]
        c0 = self.channels[0]
        self.final1 = Conv(rng, c0, c0, 3, "disc.final1")
        self.final2 = Conv(rng, c0, c0, 3, "disc.final2")
        flat = c0 * (cfg.disc_base_res // 4) ** 2
        self.fc1 = Linear(rng, flat, cfg.disc_head_hidden, "disc.fc1")
        self.fc2 = Linear(rng, cfg.disc_head_hidden, 1, "disc.fc2")
        self._flat = flat

    def grow(self, state: DiscriminatorState) -> DiscriminatorState:
        if state.stage >= self.cfg.max_stage:
            raise ValueError(f"cannot grow beyond stage {self.cfg.max_stage} "
                             f"({self.cfg.disc_max_res}x{self.cfg.disc_max_res})")
        return DiscriminatorState(stage=state.stage + 1, alpha=0.0)

    def __call__(self, s: T.Tensor, state: DiscriminatorState) -> T.Tensor:
        cfg = self.cfg
        if state.stage > cfg.max_stage:
            raise ValueError(f"stage {state.stage} exceeds max {cfg.max_stage}")
        x = s
        if x.ndim == 2:
            x = T.reshape(x, (1, 1) + x.shape)
        elif x.ndim == 3:
            x = T.reshape(x, (x.shape[0], 1, x.shape[1], x.shape[2]))
        res = cfg.stage_resolution(state.stage)
        if x.shape[2] != res or x.shape[3] != res:
            raise ValueError(f"stage {state.stage} expects {res}x{res} input, "
                             f"got {x.shape[2]}x{x.shape[3]}")
        batch = x.shape[0]
        x = T.reshape(x, (1, batch, res, res))        # single gray channel
        k = state.stage
        h = T.leaky_relu(self.from_gray[k](x), self.slope)
        if k > 0:
            h = T.avg_pool2x(T.leaky_relu(self.blocks[k](h), self.slope))
            if state.alpha < 1.0:
                old = T.leaky_relu(self.from_gray[k - 1](T.avg_pool2x(x)), self.slope)
                h = state.alpha * h + (1.0 - state.alpha) * old
            for j in range(k - 1, 0, -1):
                h = T.avg_pool2x(T.leaky_relu(self.blocks[j](h), self.slope))
        h = T.avg_pool2x(T.leaky_relu(self.final1(h), self.slope))
        h = T.avg_pool2x(T.leaky_relu(self.final2(h), self.slope))
        h = T.reshape(T.transpose(h, (1, 0, 2, 3)), (batch, self._flat))
        h = T.leaky_relu(self.fc1(h), self.slope)
        return self.fc2(h)  # (B,1) unbounded scores

    def named_params(self):
        mods = list(self.from_gray) + [b for b in self.blocks if b is not None]
        mods += [self.final1, self.final2, self.fc1, self.fc2]
        return _collect(mods)


class MLPDiscriminator:
    """Three fully-connected layers on the flattened silhouette."""

    def __init__(self, cfg: NetConfig, seed: int):
        rng = np.random.default_rng([seed, 203])
        self.cfg = cfg
        self.slope = cfg.leaky_slope
        dims = (cfg.resolution ** 2,) + cfg.mlp_disc_hidden + (1,)
        self.fcs = [Linear(rng, dims[i], dims[i + 1], f"disc.mlp{i}")
                    for i in range(len(dims) - 1)]

    def __call__(self, s: T.Tensor, state: Optional[DiscriminatorState] = None) -> T.Tensor:
        x = s
        if x.ndim == 2:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim == 4:
            x = T.reshape(x, (x.shape[0], x.shape[1] * x.shape[2] * x.shape[3]))
        else:
            x = T.reshape(x, (x.shape[0], x.shape[1] * x.shape[2]))
        if x.shape[1] != self.cfg.resolution ** 2:
            raise ValueError(f"mlp critic expects {self.cfg.resolution}x"
                             f"{self.cfg.resolution} input")
        for fc in self.fcs[:-1]:
            x = T.leaky_relu(fc(x), self.slope)
        return self.fcs[-1](x)

    def named_params(self):
        return _collect(self.fcs)


# ---------------------------------------------------------------------------
# serialization (SKF1)

_MAGIC = b"SKF1"
_VERSION = 1


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write magic, version, config JSON, its digest, then named float64
    blocks (name length, name, rank, extents, raw little-endian data)."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    digest = hashlib.sha256(blob).hexdigest().encode("ascii")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(digest)))
    buf.write(digest)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        for extent in arr.shape:
            buf.write(struct.pack("<Q", extent))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != _MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an SKF1 checkpoint")
    version = struct.unpack("<I", take(4))[0]
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported SKF1 version {version}")
    jlen = struct.unpack("<I", take(4))[0]
    blob = bytes(take(jlen))
    dlen = struct.unpack("<I", take(4))[0]
    digest = bytes(take(dlen)).decode("ascii")
    if hashlib.sha256(blob).hexdigest() != digest:
        raise CheckpointError(f"{path}: config digest mismatch")
    try:
        config = json.loads(blob)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: unreadable config block: {e}") from e
    count = struct.unpack("<I", take(4))[0]
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        nlen = struct.unpack("<I", take(4))[0]
        name = bytes(take(nlen)).decode("utf-8")
        rank = struct.unpack("<I", take(4))[0]
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(rank))
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).copy()
        tensors[name] = arr
    if pos != len(view):
        raise CheckpointError(f"{path}: {len(view) - pos} trailing bytes")
    return config, tensors


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def params_to_arrays(named: Sequence[tuple[str, T.Tensor]]) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in named}


def load_params_from_arrays(named: Sequence[tuple[str, T.Tensor]],
                            arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    for name, p in named:
        key = prefix + name
        if key not in arrays:
            raise CheckpointError(f"missing tensor block '{key}'")
        arr = arrays[key]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"block '{key}' has shape {arr.shape}, "
                                  f"expected {p.data.shape}")
        p.data = arr.astype(T.default_dtype()).copy()


def params_checksum(named: Sequence[tuple[str, T.Tensor]]) -> str:
    h = hashlib.sha256()
    for name, p in named:
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()
