"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

A5 and A6 train real (toy-scale) models and take the bulk of the runtime;
everything else completes in seconds to a few minutes.
"""

import math
import time

import numpy as np

from conftest import box_mesh
from sketchmesh import tensor as T
from sketchmesh.dataset import build_dataset, load_split
from sketchmesh.evalkit import ablation_matrix, evaluate, template_baseline
from sketchmesh.geometry import (
    CameraPose,
    Mesh,
    flatten_loss,
    icosphere,
    laplacian_loss,
    voxel_iou,
    voxelize,
)
from sketchmesh.losses import (
    LossWeights,
    binary_iou,
    gan_f,
    iou_loss,
    total_loss,
    viewpoint_loss,
)
from sketchmesh.networks import NetConfig, ProgressiveDiscriminator, DiscriminatorState
from sketchmesh.pipeline import (
    TrainConfig,
    build_nets,
    fit_offsets,
    load_train_checkpoint,
    roundtrip_iou,
    train,
)
from sketchmesh.rasterizer import hard_rasterize, soft_rasterize
from sketchmesh.tensor.gradcheck import check_gradients, max_rel_error


def report(criterion: str, ok: bool, detail: str):
    print(f"\n[{criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{criterion} failed: {detail}"


# ---------------------------------------------------------------------------
# A1: gradient integrity


def _tensor_op_cases():
    rng_mk = np.random.default_rng
    unary = [
        ("neg", T.neg, (-2, 2)), ("exp", T.texp, (-2, 2)),
        ("log", T.tlog, (0.1, 2)), ("sigmoid", T.sigmoid, (-2, 2)),
        ("square", T.square, (-2, 2)), ("sqrt", T.tsqrt, (0.1, 2)),
        ("tanh", T.tanh, (-2, 2)), ("sin", T.tsin, (-2, 2)),
        ("cos", T.tcos, (-2, 2)), ("softplus", T.softplus, (-2, 2)),
        ("relu", T.relu, (0.05, 2)),      # away from the kink
        ("leaky_relu", lambda x: T.leaky_relu(x, 0.2), (0.05, 2)),
    ]
    cases = []
    for seed in range(3):
        for name, fn, (lo, hi) in unary:
            rng = rng_mk([seed, hash(name) % (2 ** 31)])
            x = T.Tensor(rng.uniform(lo, hi, 6), requires_grad=True)
            cases.append((f"{name}/s{seed}",
                          (lambda fn=fn, x=x: T.tsum(T.square(fn(x)))), [x]))
        for name, fn in [("add", T.add), ("sub", T.sub), ("mul", T.mul),
                         ("div", T.div)]:
            rng = rng_mk([seed, 1000 + hash(name) % (2 ** 31)])
            a = T.Tensor(rng.uniform(0.2, 2, 5), requires_grad=True)
            b = T.Tensor(rng.uniform(0.2, 2, 5), requires_grad=True)
            cases.append((f"{name}/s{seed}",
                          (lambda fn=fn, a=a, b=b: T.tsum(T.square(fn(a, b)))),
                          [a, b]))
        rng = rng_mk([seed, 77])
        a = T.Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
        b = T.Tensor(rng.uniform(-1, 1, (4, 2)), requires_grad=True)
        cases.append((f"matmul/s{seed}",
                      (lambda a=a, b=b: T.tsum(T.square(T.matmul(a, b)))), [a, b]))
        x = T.Tensor(rng.uniform(-1, 1, (2, 6, 6)), requires_grad=True)
        k = T.Tensor(rng.normal(0, 0.4, (2, 2, 3, 3)), requires_grad=True)
        cases.append((f"conv2d/s{seed}",
                      (lambda x=x, k=k: T.tsum(T.square(T.conv2d(x, k, pad=1)))),
                      [x, k]))
        p = T.Tensor(rng.uniform(-1, 1, (4, 4)), requires_grad=True)
        cases.append((f"avg_pool2x/s{seed}",
                      (lambda p=p: T.tsum(T.square(T.avg_pool2x(p)))), [p]))
    return cases


def test_a1_gradient_integrity():
    t0 = time.time()
    count = 0
    worst_tensor = 0.0
    for name, fn, params in _tensor_op_cases():
        err = check_gradients(fn, params)
        worst_tensor = max(worst_tensor, err)
        assert err < 1e-4, f"tensor op {name}: rel err {err:.2e}"
        count += 1

    worst_other = 0.0
    for seed in range(6):
        rng = np.random.default_rng([seed, 11])
        base = icosphere(0)
        v = T.Tensor(base.vertices.data + rng.normal(0, 0.05, base.vertices.shape),
                     requires_grad=True)
        err = check_gradients(lambda: laplacian_loss(Mesh(v, base.faces)), [v])
        worst_other = max(worst_other, err)
        count += 1
        err2 = check_gradients(lambda: flatten_loss(Mesh(v, base.faces)), [v])
        worst_other = max(worst_other, err2)
        count += 1
        assert max(err, err2) < 1e-3, f"regularizers seed {seed}"

    pose = CameraPose(0.0, 0.0, 2.732)
    for seed in range(7):
        rng = np.random.default_rng([seed, 13])
        base = icosphere(0)  # 20 faces
        v = T.Tensor(base.vertices.data * 0.8
                     + rng.normal(0, 0.04, base.vertices.shape),
                     requires_grad=True)

        def render_loss():
            s = soft_rasterize(Mesh(v, base.faces), pose, 32, 1e-2)
            return T.tsum(T.square(s))

        err = check_gradients(render_loss, [v], h=1e-6)
        worst_other = max(worst_other, err)
        count += 1
        assert err < 1e-3, f"soft rasterizer seed {seed}: rel err {err:.2e}"

    # full encoder -> pose/view codes -> mesh -> rendered silhouette loss,
    # finite differences over sampled encoder weights
    chain_cfg = NetConfig(resolution=16, code_dim=16,
                          encoder_channels=(4, 4), view_hidden=8,
                          decoder_hidden=(16,), template_subdivisions=0,
                          disc_base_res=16, disc_max_res=16)
    for seed in range(3):
        from sketchmesh.networks import Generator

        gen = Generator(chain_cfg, seed, 2.732)
        rng = np.random.default_rng([seed, 17])
        gen.decoder.out.w.data = rng.normal(0, 0.02, gen.decoder.out.w.shape)
        img = T.Tensor(rng.uniform(0, 1, (1, 1, 16, 16)))
        target = T.Tensor((rng.uniform(size=(16, 16)) > 0.6).astype(float))

        def chain_loss():
            enc = gen.encode(img)
            pred = gen.predict_view(enc.z_l)
            z_v = gen.view_embed(pred.embedding())
            mesh = gen.decode(enc.z_s, z_v)[0]
            sil = soft_rasterize(mesh, CameraPose(10.0, 30.0, 2.732), 16, 1e-2)
            return iou_loss(sil, target) + viewpoint_loss(
                pred.embedding(), CameraPose(5.0, 60.0, 2.732))

        w = gen.encoder.convs[0].w  # sampled set of encoder weights
        (analytic,) = T.grad(chain_loss(), [w])
        flat_idx = rng.choice(w.size, size=8, replace=False)
        num = np.zeros(len(flat_idx))
        h = 1e-5
        for j, fi in enumerate(flat_idx):
            orig = w.data.reshape(-1)[fi]
            w.data.reshape(-1)[fi] = orig + h
            hi = chain_loss().item()
            w.data.reshape(-1)[fi] = orig - h
            lo = chain_loss().item()
            w.data.reshape(-1)[fi] = orig
            num[j] = (hi - lo) / (2 * h)
        ana = analytic.data.reshape(-1)[flat_idx]
        err = max_rel_error(ana, num, floor=1e-5)
        worst_other = max(worst_other, err)
        count += 8
        assert err < 1e-3, f"encoder chain seed {seed}: rel err {err:.2e}"

    elapsed = time.time() - t0
    ok = elapsed < 300 and count >= 100
    report("A1", ok, f"{count} gradient cases; tensor ops worst {worst_tensor:.2e} "
                     f"(<1e-4), others worst {worst_other:.2e} (<1e-3); "
                     f"{elapsed:.0f}s (<300s)")


def test_a2_rasterizer_limit():
    from scipy import ndimage

    t0 = time.time()
    diffs = []
    for seed in range(20):
        rng = np.random.default_rng([seed, 23])
        base = icosphere(2)
        radial = 1.0 + rng.uniform(-0.3, 0.3, (base.num_vertices, 1))
        mesh = Mesh(T.Tensor(base.vertices.data * radial * 0.85), base.faces)
        pose = CameraPose(rng.uniform(0, 30), rng.uniform(0, 360), 2.732)
        hard = hard_rasterize(mesh, pose, 64).data
        soft = soft_rasterize(mesh, pose, 64, 1e-5).data
        m = hard > 0.5
        band = ndimage.binary_dilation(m) & ~ndimage.binary_erosion(m)
        diffs.append(np.abs(soft - hard)[~band].mean())
    elapsed = time.time() - t0
    worst = max(diffs)
    ok = worst < 0.02 and elapsed < 30
    report("A2", ok, f"worst mean |soft-hard| excluding 1px band over 20 "
                     f"meshes: {worst:.5f} (<0.02); {elapsed:.1f}s (<30s)")


def test_a3_loss_oracles():
    rng = np.random.default_rng(31)
    exact = True
    for _ in range(20):
        a = (rng.uniform(size=(16, 16)) > 0.55).astype(float)
        b = (rng.uniform(size=(16, 16)) > 0.55).astype(float)
        union = np.logical_or(a > 0, b > 0).sum()
        want = np.logical_and(a > 0, b > 0).sum() / union if union else 1.0
        got = 1.0 - iou_loss(T.Tensor(a), T.Tensor(b)).item()
        # the 1e-8 denominator guard perturbs the exact ratio below 1e-9
        exact &= abs(got - want) < 1e-9

    f0 = gan_f(0.0).item()
    f_ok = abs(f0 - (-math.log(2.0))) < 1e-12

    w = LossWeights()  # v=10, sd=r=dd=0.1
    total, _ = total_loss(T.Tensor(0.5), T.Tensor(0.2), T.Tensor(0.01),
                          T.Tensor(0.7), w)
    t_ok = abs(total.item() - 0.69) < 1e-12

    ok = exact and f_ok and t_ok
    report("A3", ok, f"binary-mask IoU exact on 20 masks: {exact}; "
                     f"f(0)+log2={f0 + math.log(2.0):.2e} (<1e-12); "
                     f"weighted sum residual={abs(total.item() - 0.69):.2e} (<1e-12)")


def test_a4_direct_fit_overfit():
    t0 = time.time()
    target = box_mesh(half=(0.5, 0.5, 0.5))
    poses = [CameraPose(15.0, a, 2.732) for a in (20.0, 140.0, 260.0)]
    sils = [hard_rasterize(target, p, 64).data for p in poses]
    mesh, _ = fit_offsets(sils, poses, steps=2000, lr=1e-2, resolution=64,
                          sigma=1e-4, lambda_r=0.1, subdivisions=3)
    ious = [binary_iou(hard_rasterize(mesh, p, 64).data, s)
            for p, s in zip(poses, sils)]
    elapsed = time.time() - t0
    mean_iou = float(np.mean(ious))
    ok = mean_iou >= 0.9 and elapsed < 300
    report("A4", ok, f"cube overfit mean silhouette IoU {mean_iou:.4f} "
                     f"(>=0.9) after 2000 steps; {elapsed:.0f}s (<300s)")


A5_CFG = dict(epochs=200, lr=4e-4, lr_decay_every=80, resolution=64,
              disc_max_res=64, batch_size=8, n_views=3, seed=0,
              dtype="float32", checkpoint_every=100)


def test_a5_toy_end_to_end(tmp_path_factory):
    data = tmp_path_factory.mktemp("a5_data")
    build_dataset(data, n_shapes=50, poses_per_shape=4, resolution=64, seed=0)
    cfg = TrainConfig(**A5_CFG)
    t0 = time.time()
    result = train(cfg, data, tmp_path_factory.mktemp("a5_run"))
    train_minutes = (time.time() - t0) / 60.0
    nets, _ = load_train_checkpoint(result.checkpoint_path)

    baseline = template_baseline(cfg, data, mode="gt").mean
    ev_gt = evaluate(nets, data, mode="gt")
    ev_pred = evaluate(nets, data, mode="pred")
    gain = ev_gt.mean - baseline

    from sketchmesh.dataset import Manifest

    manifest = Manifest.load(data)
    train_samples = load_split(data, manifest, "train")
    rts = [roundtrip_iou(s, nets) for s in train_samples]
    rt_mean = float(np.mean(rts))

    ok = gain >= 0.15 and rt_mean >= 0.7 and train_minutes <= 120.0
    report("A5", ok,
           f"voxel IoU baseline {baseline:.3f} -> GT {ev_gt.mean:.3f} "
           f"(gain {gain:.3f} >= 0.15), pred {ev_pred.mean:.3f}; "
           f"roundtrip IoU {rt_mean:.3f} (>=0.7); "
           f"{train_minutes:.0f} min (<=120)")


A6_CFG = dict(epochs=120, lr=4e-4, lr_decay_every=48, resolution=32,
              disc_max_res=32, batch_size=8, n_views=3, seed=0,
              dtype="float32", checkpoint_every=200)


def test_a6_ablation_ordering(tmp_path_factory):
    data = tmp_path_factory.mktemp("a6_data")
    build_dataset(data, n_shapes=20, poses_per_shape=4, resolution=32, seed=0)
    cfg = TrainConfig(**A6_CFG)
    result = ablation_matrix(cfg, data, tmp_path_factory.mktemp("a6_out"))
    means = result.means("gt")
    baseline, rps, full = means
    ok = full >= rps >= baseline and (full - baseline) >= 0.03
    report("A6", ok, f"GT-pose voxel IoU ordering baseline {baseline:.3f} "
                     f"<= +RPS {rps:.3f} <= +RPS+CD {full:.3f}; "
                     f"gain {full - baseline:.3f} (>=0.03); "
                     f"pred-pose row means: "
                     + ", ".join(f"{m:.3f}" for m in result.means("pred")))


def test_a7_r1_double_backward():
    cfg = NetConfig(resolution=16, code_dim=16, encoder_channels=(4, 4),
                    disc_base_res=16, disc_max_res=16, disc_base_channels=8,
                    disc_head_hidden=16, template_subdivisions=0)
    disc = ProgressiveDiscriminator(cfg, 3)
    state = DiscriminatorState(0, 1.0)
    rng = np.random.default_rng(41)
    img0 = rng.uniform(0.1, 0.9, (1, 1, 16, 16))

    def penalty():
        img = T.Tensor(img0, requires_grad=True)
        score = T.tsum(disc(img, state))
        (g,) = T.grad(score, [img], create_graph=True)
        return T.tsum(T.square(g))

    params = [disc.from_gray[0].w, disc.final1.w, disc.fc1.w, disc.fc2.w,
              disc.final2.b]
    worst = 0.0
    out = penalty()
    analytic = T.grad(out, params)
    h = 1e-5
    for p, ana in zip(params, analytic):
        rng_idx = np.random.default_rng([43, p.size])
        idx = rng_idx.choice(p.size, size=min(6, p.size), replace=False)
        num = np.zeros(len(idx))
        for j, fi in enumerate(idx):
            orig = p.data.reshape(-1)[fi]
            p.data.reshape(-1)[fi] = orig + h
            hi = penalty().item()
            p.data.reshape(-1)[fi] = orig - h
            lo = penalty().item()
            p.data.reshape(-1)[fi] = orig
            num[j] = (hi - lo) / (2 * h)
        ana_sel = (np.zeros(p.size) if ana is None
                   else ana.data.reshape(-1))[idx]
        worst = max(worst, max_rel_error(ana_sel, num, floor=1e-5))
    ok = worst < 1e-3
    report("A7", ok, f"R1 parameter gradients vs finite differences: "
                     f"worst rel err {worst:.2e} (<1e-3)")


def test_a8_determinism(tmp_path_factory):
    from sketchmesh.cli import main

    data = tmp_path_factory.mktemp("a8_data")
    assert main(["gen", "--out", str(data), "--shapes", "4", "--poses", "2",
                 "--res", "32", "--seed", "9"]) == 0
    runs = []
    for tag in ("r1", "r2"):
        out = tmp_path_factory.mktemp(f"a8_{tag}")
        code = main(["train", "--data", str(data), "--out", str(out),
                     "--epochs", "2", "--lr", "1e-3", "--res", "32",
                     "--disc-max", "32", "--batch", "4", "--views", "2",
                     "--seed", "5", "--quiet"])
        assert code == 0
        runs.append((out / "checkpoint.skf1").read_bytes())
    identical = runs[0] == runs[1]

    out = tmp_path_factory.mktemp("a8_eval")
    (out / "c.skf1").write_bytes(runs[0])
    nets, _ = load_train_checkpoint(out / "c.skf1")
    e1 = evaluate(nets, data, mode="gt", voxel_res=16).to_dict()
    e2 = evaluate(nets, data, mode="gt", voxel_res=16).to_dict()
    ok = identical and e1 == e2
    report("A8", ok, f"bit-identical checkpoints across reruns: {identical}; "
                     f"evaluate deterministic: {e1 == e2}")


def test_a9_viewpoint_head_and_voxel_oracle(tmp_path_factory):
    data = tmp_path_factory.mktemp("a9_data")
    manifest = build_dataset(data, n_shapes=10, poses_per_shape=1,
                             resolution=64, seed=21)
    samples = (load_split(data, manifest, "train")
               + load_split(data, manifest, "test"))[:10]
    cfg = TrainConfig(epochs=1, resolution=64, seed=0)
    gen = build_nets(cfg).generator
    skip = (gen.encoder.head_s.w, gen.encoder.head_s.b)
    params = ([p for _, p in gen.encoder.named_params() if p not in skip]
              + [p for _, p in gen.view_pred.named_params()])
    imgs = T.Tensor(np.stack([s.sketch for s in samples])[:, None])
    gt = T.Tensor(np.stack([s.pose.embedding() for s in samples]))
    adam = T.Adam(params, lr=1e-3)
    steps = 300  # well inside the 2000-step budget
    for _ in range(steps):
        pred = gen.predict_view(gen.encode(imgs).z_l)
        adam.zero_grad()
        T.backward(viewpoint_loss(pred.embedding(), gt))
        adam.step()
        T.ACTIVE_GRAPH.reset()
    with T.no_grad():
        pred = gen.predict_view(gen.encode(imgs).z_l)
    errs = []
    for p, s in zip(pred.poses(), samples):
        de = abs(p.elevation_deg - s.pose.elevation_deg)
        da = abs(p.azimuth_deg - s.pose.azimuth_deg) % 360.0
        errs += [de, min(da, 360.0 - da)]
    ang = float(np.mean(errs))

    a = voxelize(box_mesh(), 32)
    b = voxelize(box_mesh(center=(0.5, 0.0, 0.0)), 32)
    iou = voxel_iou(a, b)
    vox_ok = abs(iou - 1.0 / 3.0) <= 2.0 / 32.0
    ok = ang < 2.0 and vox_ok
    report("A9", ok, f"pose overfit mean angular error {ang:.3f} deg (<2) "
                     f"after {steps} steps (budget 2000); shifted-cube voxel "
                     f"IoU {iou:.4f} vs 1/3 within 2/32")
