"""Command-line entry point: ``poseflow <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import (
    DEFAULT_CAMERA,
    DEFAULT_GT,
    ConfigError,
    ExperimentConfig,
    fit_real_image,
    load_experiment,
    load_mesh,
    perturbed_start,
    resolve_seed,
)
from .errors import PoseFlowError
from .flowfield import backward_warp, flow_from_poses, forward_warp
from .frequency import AugmentConfig, augment
from .geometry import CameraIntrinsics, rotation_error_deg, translation_error
from .metrics import format_table, pose_errors, summary_table
from .raster import make_cube, rasterize, shaded_render
from .selfsup import (
    DampedOracle,
    Estimator,
    Observation,
    OracleEstimator,
    ToyEstimator,
    make_sample,
    refine,
    self_train_step,
)

log = logging.getLogger("poseflow")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _add_camera(p):
    p.add_argument("--camera", help="JSON file with fx, fy, cx, cy")
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)


def _camera(args) -> CameraIntrinsics:
    if args.camera:
        return CameraIntrinsics.from_dict(json.loads(Path(args.camera).read_text()))
    return CameraIntrinsics.from_dict(DEFAULT_CAMERA)


def _jobs(args):
    return args.jobs if args.jobs and args.jobs > 0 else (os.cpu_count() or 1)


def _list_pngs(d):
    d = Path(d)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")


def cmd_augment(args):
    seed = resolve_seed(args.seed)
    cfg = AugmentConfig(beta=args.beta, delta0=args.delta0, seed=seed)
    sources = _list_pngs(args.src_dir)
    styles = _list_pngs(args.style_dir)
    if not styles:
        raise FileNotFoundError(f"no PNG style images in {args.style_dir}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def work(item):
        i, src = item
        rng = np.random.default_rng([seed, i])
        style = styles[int(rng.integers(len(styles)))]
        img = augment(io.load_png(src), io.load_png(style), cfg, rng)
        io.save_png(out / src.name, img)
        return src.name, style.name

    with ThreadPoolExecutor(max_workers=_jobs(args)) as pool:
        pairs = list(pool.map(work, enumerate(sources)))
    for name, style in pairs:
        print(f"{name} <- {style}")
    return 0


def cmd_render(args):
    mesh = load_mesh(args.mesh)
    K = _camera(args)
    pose = io.load_pose(args.pose)
    maps = rasterize(mesh, pose, K, args.width, args.height)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_mask(out / "mask.png", maps.mask)
    io.save_png(out / "shaded.png", shaded_render(maps))
    io.write_pfh(out / "depth.pfh", maps.depth)
    print(f"rendered {maps.area} pixels to {out}")
    return 0


def cmd_flow_synth(args):
    mesh = load_mesh(args.mesh)
    K = _camera(args)
    pa, pb = io.load_pose(args.pose_a), io.load_pose(args.pose_b)
    maps = rasterize(mesh, pa, K, args.width, args.height)
    field = flow_from_poses(maps, pa, pb, K)
    io.save_flow(args.out, field)
    print(f"wrote {args.out} ({int(field.valid.sum())} valid pixels)")
    return 0


def cmd_warp(args):
    img = io.load_png(args.image)
    field = io.load_flow(args.flow)
    if args.mode == "backward":
        out, ok = backward_warp(img, field)
        io.save_mask(Path(args.out).with_name(Path(args.out).stem + "_valid.png"), ok)
    else:
        out = forward_warp(img, field)
    io.save_png(args.out, out)
    return 0


def _estimator(name, cfg: ExperimentConfig):
    if name == "oracle":
        return OracleEstimator()
    if name == "damped":
        return DampedOracle(0.5)
    if name == "toy":
        return ToyEstimator(cfg.toy_params)
    if name == "zero":
        return Estimator()
    raise ConfigError(f"unknown estimator {name!r}")


def _scene(cfg: ExperimentConfig, index=0):
    rng = np.random.default_rng([cfg.seed, index])
    P0 = perturbed_start(cfg, rng)
    real, K = fit_real_image(cfg, P0)
    return make_sample(cfg.mesh, K, cfg.width, cfg.height, cfg.pose_gt, P0, cfg.selfsup, real)


def cmd_eval_loss(args):
    cfg = load_experiment(args.config, args.seed)
    lines = []
    for k in range(cfg.samples):
        sample = _scene(cfg, k)
        rec = self_train_step(_estimator(cfg.teacher, cfg), _estimator(cfg.student, cfg), sample,
                              _no_update(cfg), step=k)
        lines.append(json.dumps(rec.to_dict()))
    _emit(lines, args.out)
    return 0


def _no_update(cfg):
    return replace(cfg.selfsup, lr=0.0)


def _emit(lines, out):
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_selfsup_sim(args):
    cfg = load_experiment(args.config, args.seed)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sample = _scene(cfg, 0)
    teacher, student = _estimator(cfg.teacher, cfg), _estimator(cfg.student, cfg)
    lines = []
    for step in range(cfg.steps):
        rec = self_train_step(teacher, student, sample, cfg.selfsup, step)
        lines.append(json.dumps({"step": step, **rec.to_dict()}))
    (out / "losses.jsonl").write_text("\n".join(lines) + "\n")

    tr = refine(student, sample.obs, sample.P0, sample.mesh, sample.K, cfg.selfsup.S_student, views=sample.views)
    final = tr.poses[-1]
    summary = {
        "steps": cfg.steps,
        "initial_total": json.loads(lines[0])["total"] if lines else None,
        "final_total": json.loads(lines[-1])["total"] if lines else None,
        "student_params": student.parameters().tolist(),
        "teacher_params": teacher.parameters().tolist(),
        "initial_rot_err_deg": rotation_error_deg(sample.P0.R, cfg.pose_gt.R),
        "initial_trans_err_m": translation_error(sample.P0.t, cfg.pose_gt.t),
        "final_rot_err_deg": rotation_error_deg(final.R, cfg.pose_gt.R),
        "final_trans_err_m": translation_error(final.t, cfg.pose_gt.t),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_eval_pose(args):
    mesh = load_mesh(args.mesh)
    pred, gt = io.load_poses(args.pred), io.load_poses(args.gt)
    if len(pred) != len(gt):
        raise PoseFlowError(f"{len(pred)} predicted poses vs {len(gt)} ground-truth poses")
    records = [pose_errors(p, g, mesh.vertices) for p, g in zip(pred, gt)]
    cols = summary_table(records, mesh.diameter, symmetric=not args.asymmetric)
    text = json.dumps({"n": len(records), "diameter": mesh.diameter, "columns": cols,
                       "mean_is": "arithmetic mean of the four accuracy columns"}, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(format_table(cols))
    return 0


def run_demo(seed, n=10, S=8, width=256, height=256):
    """Damped-oracle refinement of a cube from perturbed starts; returns (records, columns)."""
    mesh = make_cube()
    K = CameraIntrinsics.from_dict(DEFAULT_CAMERA)
    cfg = ExperimentConfig(mesh=mesh, K=K, width=width, height=height, seed=seed,
                           pose_gt=io.pose_from_json(DEFAULT_GT))
    records = []
    for k in range(n):
        P0 = perturbed_start(cfg, np.random.default_rng([seed, k]))
        tr = refine(DampedOracle(0.5), Observation(None, cfg.pose_gt), P0, mesh, K, S,
                    width=width, height=height, seed=seed + k)
        records.append(pose_errors(tr.poses[-1], cfg.pose_gt, mesh.vertices))
    return records, summary_table(records, mesh.diameter, symmetric=True)


def cmd_demo(args):
    seed = resolve_seed(args.seed, 0)
    records, cols = run_demo(seed, n=args.n)
    worst_rot = max(r.rot_err for r in records)
    worst_t = max(r.trans_err for r in records)
    print(f"damped-oracle refinement, {len(records)} starts, S=8")
    print(f"worst rotation error {worst_rot:.4f} deg, worst translation error {1000 * worst_t:.4f} mm")
    print(format_table(cols))
    return 0


def build_parser():
    p = _Parser(prog="poseflow", description="Flow-aided pose self-supervision toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=0)

    a = sub.add_parser("augment", help="Fourier amplitude mix / dropout on a directory of PNGs")
    common(a)
    a.add_argument("--src-dir", required=True)
    a.add_argument("--style-dir", required=True)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--beta", type=float, default=1.0)
    a.add_argument("--delta0", type=float, default=0.5)
    a.set_defaults(func=cmd_augment)

    r = sub.add_parser("render", help="rasterize a mesh at a pose")
    common(r)
    _add_camera(r)
    r.add_argument("--mesh", required=True)
    r.add_argument("--pose", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    f = sub.add_parser("flow-synth", help="shape-constraint flow between two poses")
    common(f)
    _add_camera(f)
    f.add_argument("--mesh", required=True)
    f.add_argument("--pose-a", required=True)
    f.add_argument("--pose-b", required=True)
    f.add_argument("--out", default="flow.flo")
    f.set_defaults(func=cmd_flow_synth)

    w = sub.add_parser("warp", help="backward or forward warp an image by a .flo field")
    common(w)
    w.add_argument("--image", required=True)
    w.add_argument("--flow", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--mode", choices=["backward", "forward"], default="backward")
    w.set_defaults(func=cmd_warp)

    e = sub.add_parser("eval-loss", help="evaluate all self-supervision losses on configured scenes")
    common(e)
    e.add_argument("--config", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_loss)

    ep = sub.add_parser("eval-pose", help="ADD(-S) and n-degree / n-cm accuracies")
    common(ep)
    ep.add_argument("--pred", required=True)
    ep.add_argument("--gt", required=True)
    ep.add_argument("--mesh", required=True)
    ep.add_argument("--asymmetric", action="store_true", help="report ADD instead of ADD-S")
    ep.add_argument("--out")
    ep.set_defaults(func=cmd_eval_pose)

    s = sub.add_parser("selfsup-sim", help="teacher-student simulation from a JSON config")
    common(s)
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_selfsup_sim)

    d = sub.add_parser("demo", help="cube scene refined by the damped oracle")
    common(d)
    d.add_argument("--n", type=int, default=10)
    d.set_defaults(func=cmd_demo)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (PoseFlowError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
