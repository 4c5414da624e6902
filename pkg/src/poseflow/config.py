"""Experiment configuration and scene construction for the CLI harnesses."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .frequency import AugmentConfig
from .flowfield import sample_bilinear
from .geometry import CameraIntrinsics, Pose, axis_angle_to_matrix, project_points
from .io import load_obj, load_png, pose_from_json
from .losses import LossWeights
from .raster import TriangleMesh, make_cube
from .selfsup import NoiseConfig, SelfSupConfig

SEED_ENV = "POSEFLOW_SEED"
DEFAULT_CAMERA = {"fx": 300.0, "fy": 300.0, "cx": 128.0, "cy": 128.0}
DEFAULT_GT = {"R": axis_angle_to_matrix([0.4, 0.5, 0.2]).tolist(), "t": [0.0, 0.0, 3.0]}


class ConfigError(ValueError):
    pass


def _subset(cls, d):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return d


def selfsup_config_from_dict(d, seed) -> SelfSupConfig:
    d = dict(d or {})
    noise = NoiseConfig(**_subset(NoiseConfig, d.pop("noise", {}) or {}))
    weights = LossWeights(**_subset(LossWeights, d.pop("weights", {}) or {}))
    d = _subset(SelfSupConfig, d)
    d.pop("seed", None)
    return SelfSupConfig(noise=noise, weights=weights, seed=seed, **d)


def resolve_seed(cli_seed=None, config_seed=None):
    for s in (cli_seed, config_seed, os.environ.get(SEED_ENV)):
        if s is not None and s != "":
            return int(s)
    raise ConfigError(f"a seed is required: pass --seed, set 'seed' in the config or {SEED_ENV}")


def load_mesh(source, base=None) -> TriangleMesh:
    if source in (None, "cube"):
        return make_cube()
    p = Path(source)
    if base is not None and not p.is_absolute():
        p = Path(base) / p
    if not p.exists():
        raise FileNotFoundError(f"mesh not found: {p}")
    return load_obj(p)


@dataclass
class ExperimentConfig:
    mesh: TriangleMesh
    K: CameraIntrinsics
    width: int
    height: int
    seed: int
    pose_gt: Pose
    rot_deg: float = 8.0
    trans_frac: float = 0.05
    rot_axis: str = "random"
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    selfsup: SelfSupConfig = field(default_factory=SelfSupConfig)
    teacher: str = "toy"
    student: str = "toy"
    toy_params: tuple = (0.5, 0.6, 0.6, 0.6)
    steps: int = 50
    samples: int = 1
    real_image: np.ndarray | None = None
    output_dir: str = "out"


_TOP_KEYS = {
    "mesh", "camera", "image_size", "seed", "pose_gt", "perturbation", "augment", "selfsup",
    "teacher", "student", "toy_params", "steps", "samples", "real_image", "output_dir",
}


def load_experiment(path, cli_seed=None) -> ExperimentConfig:
    path = Path(path)
    raw = json.loads(path.read_text())
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    seed = resolve_seed(cli_seed, raw.get("seed"))
    width, height = (int(x) for x in raw.get("image_size", [256, 256]))
    pert = raw.get("perturbation", {}) or {}
    aug = raw.get("augment", {}) or {}
    cfg = ExperimentConfig(
        mesh=load_mesh(raw.get("mesh", "cube"), path.parent),
        K=CameraIntrinsics.from_dict(raw.get("camera", DEFAULT_CAMERA)),
        width=width,
        height=height,
        seed=seed,
        pose_gt=pose_from_json(raw.get("pose_gt", DEFAULT_GT)),
        rot_deg=float(pert.get("rot_deg", 8.0)),
        trans_frac=float(pert.get("trans_frac", 0.05)),
        rot_axis=str(pert.get("axis", "random")),
        augment=AugmentConfig(beta=float(aug.get("beta", 1.0)), delta0=float(aug.get("delta0", 0.5)), seed=seed),
        selfsup=selfsup_config_from_dict(raw.get("selfsup"), seed),
        teacher=raw.get("teacher", "toy"),
        student=raw.get("student", "toy"),
        toy_params=tuple(raw.get("toy_params", (0.5, 0.6, 0.6, 0.6))),
        steps=int(raw.get("steps", 50)),
        samples=int(raw.get("samples", 1)),
        output_dir=raw.get("output_dir", "out"),
    )
    if cfg.rot_axis not in ("random", "optical"):
        raise ConfigError(f"perturbation axis must be 'random' or 'optical', got {cfg.rot_axis!r}")
    if raw.get("real_image"):
        p = Path(raw["real_image"])
        p = p if p.is_absolute() else path.parent / p
        cfg.real_image = load_png(p)
    return cfg


def perturbed_start(cfg: ExperimentConfig, rng) -> Pose:
    """Initial pose: rotation of exactly ``rot_deg`` and translation offset of ``trans_frac * |t|``."""
    gt = cfg.pose_gt
    if cfg.rot_axis == "optical":
        axis = np.array([0.0, 0.0, rng.choice([-1.0, 1.0])])
    else:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
    R = axis_angle_to_matrix(axis * np.radians(cfg.rot_deg)) @ gt.R
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return Pose(R, gt.t + d * cfg.trans_frac * np.linalg.norm(gt.t))


def crop_to_object(image, mesh: TriangleMesh, pose: Pose, K: CameraIntrinsics, size=256, pad=1.5):
    """Crop the square around the mesh projection at ``pose`` (padded by ``pad``) and resize to ``size``.

    Returns ``(crop, K_crop)`` with intrinsics expressed in the crop.
    """
    uv, _ = project_points(mesh.vertices, pose, K)
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    center = 0.5 * (lo + hi)
    side = pad * float(max(hi - lo))
    x0, y0 = center - 0.5 * side
    scale = size / side
    img = np.asarray(image, dtype=np.float64)
    H, W = img.shape[:2]
    # sample crop pixel centers back in the full frame
    gx, gy = np.meshgrid((np.arange(size) + 0.5) / scale + x0 - 0.5, (np.arange(size) + 0.5) / scale + y0 - 0.5)
    inside = np.ones((H, W), bool)
    crop, _ = sample_bilinear(img, gx, gy, support=inside, renormalize=True)
    Kc = CameraIntrinsics(K.fx * scale, K.fy * scale, (K.cx - x0) * scale, (K.cy - y0) * scale)
    return crop, Kc


def fit_real_image(cfg: ExperimentConfig, P0: Pose):
    """Working-size real image and intrinsics; full frames are cropped around ``P0``."""
    img = cfg.real_image
    if img is None:
        return None, cfg.K
    if img.shape[:2] == (cfg.height, cfg.width):
        return img, cfg.K
    if cfg.height != cfg.width:
        raise ConfigError("cropping full-frame inputs needs a square working size")
    return crop_to_object(img, cfg.mesh, P0, cfg.K, size=cfg.width, pad=1.5)
