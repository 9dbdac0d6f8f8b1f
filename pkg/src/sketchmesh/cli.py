"""Command-line entry point: dataset generation, training, inference,
evaluation, ablation, diagnostic rendering, and the inference server.

Exit codes: 0 success, 2 usage or configuration, 3 data or checkpoint
integrity, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INTEGRITY = 3
EXIT_NUMERICAL = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchmesh",
        description="Single-sketch 3D mesh modeling: data generation, "
                    "training, inference, evaluation, and diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a procedural dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--shapes", type=int, default=50)
    p.add_argument("--poses", type=int, default=4, help="poses per shape")
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.2,
                   help="sketch contour wobble probability")

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--views", type=int, default=3,
                   help="random poses per sample fed to the critic")
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--sigma", type=float, default=1e-4)
    p.add_argument("--supervision", choices=("pred", "gt"), default="pred")
    p.add_argument("--no-rps", action="store_true",
                   help="disable the random-view branch (supervised baseline)")
    p.add_argument("--no-cd", action="store_true",
                   help="use the MLP critic instead of the progressive one")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--decay-every", type=int, default=800)
    p.add_argument("--disc-base", type=int, default=16)
    p.add_argument("--disc-max", type=int, default=64)
    p.add_argument("--checkpoint-every", type=int, default=50)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("infer", help="sketch PNG in, OBJ + pose JSON out")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help="sketch PNG")
    p.add_argument("--out-mesh", required=True)
    p.add_argument("--out-pose", required=True)

    p = sub.add_parser("eval", help="voxel-IoU evaluation on the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("gt", "pred", "both"), default="both")
    p.add_argument("--voxel-res", type=int, default=32)
    p.add_argument("--out", default=None, help="report directory")

    p = sub.add_parser("ablate", help="train and evaluate the three-row "
                                      "flag matrix under one seed")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--decay-every", type=int, default=800)
    p.add_argument("--disc-base", type=int, default=16)
    p.add_argument("--disc-max", type=int, default=64)
    p.add_argument("--voxel-res", type=int, default=32)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")

    p = sub.add_parser("render", help="diagnostic soft/hard silhouettes of an OBJ")
    p.add_argument("--mesh", required=True)
    p.add_argument("--elev", type=float, default=0.0)
    p.add_argument("--az", type=float, default=0.0)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--sigma", type=float, default=1e-4)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sweep", default=None,
                   help="comma-separated sigmas for a contact sheet")

    p = sub.add_parser("serve", help="HTTP inference service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--port", type=int, default=8472)
    p.add_argument("--host", default="127.0.0.1")

    return parser


def _cmd_gen(args) -> int:
    from .dataset import build_dataset

    manifest = build_dataset(args.out, n_shapes=args.shapes,
                             poses_per_shape=args.poses, resolution=args.res,
                             seed=args.seed, noise_prob=args.noise)
    print(f"wrote {len(manifest.records)} samples "
          f"({len(manifest.split('train'))} train / "
          f"{len(manifest.split('test'))} test) to {args.out}")
    print(f"manifest digest: {manifest.digest()}")
    return EXIT_OK


def _train_config(args):
    from .pipeline import TrainConfig

    return TrainConfig(epochs=args.epochs, lr=args.lr, n_views=args.views,
                       resolution=args.res, seed=args.seed,
                       batch_size=args.batch, sigma=args.sigma,
                       supervision=args.supervision,
                       rps_on=not args.no_rps, cd_on=not args.no_cd,
                       lr_decay_every=args.decay_every,
                       disc_base_res=args.disc_base, disc_max_res=args.disc_max,
                       checkpoint_every=args.checkpoint_every,
                       dtype=args.dtype)


def _cmd_train(args) -> int:
    from .pipeline import train
    from .reporting import write_training_curves

    cfg = _train_config(args)
    last_epoch = [-1]

    def progress(entry):
        if not args.quiet and entry["epoch"] != last_epoch[0]:
            last_epoch[0] = entry["epoch"]
            print(f"epoch {entry['epoch']:5d}  lr {entry['lr']:.2e}  "
                  f"stage {entry['stage']}  total {entry['total']:.4f}")

    result = train(cfg, args.data, args.out, resume=args.resume,
                   log_cb=progress)
    write_training_curves(result.log_path, Path(args.out) / "train_curves.png")
    print(f"checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def _cmd_infer(args) -> int:
    from .geometry import write_obj
    from .pipeline import infer, load_train_checkpoint
    from .rasterizer import load_binary_png

    nets, _ = load_train_checkpoint(args.ckpt)
    sketch = load_binary_png(args.input)
    mesh, pose = infer(sketch, nets)
    write_obj(mesh, args.out_mesh)
    with open(args.out_pose, "w") as fh:
        json.dump({"elevation_deg": pose.elevation_deg,
                   "azimuth_deg": pose.azimuth_deg,
                   "distance": pose.distance}, fh, indent=1)
    print(f"mesh: {args.out_mesh}\npose: {args.out_pose}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .evalkit import evaluate
    from .pipeline import load_train_checkpoint
    from .reporting import eval_table_text, write_eval_report

    nets, _ = load_train_checkpoint(args.ckpt)
    modes = ("gt", "pred") if args.mode == "both" else (args.mode,)
    results = [evaluate(nets, args.data, mode=m, voxel_res=args.voxel_res)
               for m in modes]
    print(eval_table_text(results))
    if args.out:
        paths = write_eval_report(args.out, results)
        print(f"report: {paths['json']} (+ csv/txt/png)")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    from .evalkit import ablation_matrix
    from .pipeline import TrainConfig
    from .reporting import ablation_table_text, write_ablation_report

    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, n_views=args.views,
                      resolution=args.res, seed=args.seed,
                      batch_size=args.batch, lr_decay_every=args.decay_every,
                      disc_base_res=args.disc_base, disc_max_res=args.disc_max,
                      dtype=args.dtype)
    result = ablation_matrix(cfg, args.data, args.out, voxel_res=args.voxel_res)
    print(ablation_table_text(result))
    paths = write_ablation_report(args.out, result)
    print(f"report: {paths['json']} (+ csv/txt/png)")
    return EXIT_OK


def _cmd_render(args) -> int:
    from .geometry import CameraPose, read_obj
    from .rasterizer import hard_rasterize, save_png, soft_rasterize
    from .reporting import write_sigma_sweep

    mesh = read_obj(args.mesh)
    pose = CameraPose.wrapped(args.elev, args.az)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    soft = soft_rasterize(mesh, pose, args.res, args.sigma)
    hard = hard_rasterize(mesh, pose, args.res)
    save_png(soft, out / "soft.png")
    save_png(hard, out / "hard.png")
    print(f"soft: {out / 'soft.png'}\nhard: {out / 'hard.png'}")
    if args.sweep:
        sigmas = [float(s) for s in args.sweep.split(",") if s.strip()]
        paths = write_sigma_sweep(mesh, pose, args.res, sigmas, out)
        print(f"sweep: {paths['png']} and {paths['csv']}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(args.ckpt)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


_HANDLERS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "render": _cmd_render,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)

    from .dataset import DatasetError
    from .geometry import MeshError, ProjectionError
    from .losses import NonFiniteLossError
    from .networks import CheckpointError
    from .pipeline import ConfigError

    try:
        return _HANDLERS[args.command](args)
    except (NonFiniteLossError, MeshError, ProjectionError,
            FloatingPointError, ZeroDivisionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DatasetError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (ConfigError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
