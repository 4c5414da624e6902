"""Teacher-student refinement loop with pluggable flow/pose estimators.

No neural networks live here. Estimators are small objects with an
``estimate_flow`` / ``estimate_relative_pose`` / ``parameters`` contract;
the shipped ones read the ground-truth pose from the observation, which
stands in for what a trained regressor would infer from pixels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, DivergedPose, InsufficientViews, LengthMismatch
from .flowfield import FlowField, consistency_filter, flow_from_poses
from .geometry import (
    CameraIntrinsics,
    Pose,
    RelativePose,
    apply_relative_pose,
    axis_angle_to_matrix,
    matrix_to_rot6d,
    perturb_pose,
    project_points,
    relative_pose_between,
    scale_relative_pose,
)
from .losses import (
    LossRecord,
    LossWeights,
    extract_features,
    farthest_point_sample,
    feature_level_loss,
    flow_loss,
    image_level_loss,
    photometric_loss,
    point_matching_loss,
    total_selfsup_loss,
    warp_mask_loss,
)
from .raster import RenderMaps, TriangleMesh, rasterize, shaded_render

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseConfig:
    gaussian_sigma: float = 0.02
    brightness_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_sigma < 0 or self.brightness_jitter < 0:
            raise ValueError("noise magnitudes must be non-negative")


@dataclass(frozen=True)
class SelfSupConfig:
    N: int = 4
    S_teacher: int = 8
    S_student: int = 4
    ema_m: float = 0.999
    eps_px: float = 2.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    consistency_rule: str = "any"
    lr: float = 0.02
    fd_step: float = 1e-3
    grad_clip: float = 1.0
    view_rot_deg: float = 15.0
    view_trans_frac: float = 0.05
    symmetric: bool = False
    pose_gate: float | None = None

    def __post_init__(self):
        if self.N < 2:
            raise InsufficientViews(f"N must be at least 2, got {self.N}")
        if self.S_teacher < 1 or self.S_student < 1:
            raise ValueError("S_teacher and S_student must be at least 1")
        if not 0 < self.ema_m < 1:
            raise ValueError(f"ema_m must lie in (0, 1), got {self.ema_m}")


@dataclass(frozen=True, eq=False)
class View:
    pose: Pose
    maps: RenderMaps
    image: np.ndarray


@dataclass(frozen=True, eq=False)
class Observation:
    """A real image plus, for simulated scenes, the pose that produced it."""

    image: np.ndarray
    truth: Pose | None = None


@dataclass(frozen=True, eq=False)
class RefineContext:
    K: CameraIntrinsics
    views: list
    prior_pose: Pose
    prior_flows: list
    iteration: int
    obs: Observation | None = None


def make_views(mesh, P0, K, width, height, n, rng, max_rot_deg=15.0, max_trans_frac=0.05):
    """Render ``n`` synthetic views: one at ``P0`` and ``n - 1`` seeded perturbations of it."""
    poses = [P0] + [perturb_pose(P0, rng, max_rot_deg, max_trans_frac) for _ in range(n - 1)]
    views = []
    for p in poses:
        maps = rasterize(mesh, p, K, width, height)
        views.append(View(p, maps, shaded_render(maps)))
    return views


def pose_guided_flows(views, pose, K):
    return [flow_from_poses(v.maps, v.pose, pose, K) for v in views]


def cross_view_flows(views, K):
    return {
        (i, j): flow_from_poses(vi.maps, vi.pose, vj.pose, K)
        for i, vi in enumerate(views)
        for j, vj in enumerate(views)
        if i != j
    }


class Estimator:
    """Base estimator: no parameters, passes the prior through unchanged."""

    def parameters(self):
        return np.zeros(0)

    def set_parameters(self, params):
        if len(params):
            raise LengthMismatch(f"{type(self).__name__} has no parameters, got {len(params)}")

    def estimate_flow(self, obs: Observation, ctx: RefineContext):
        return list(ctx.prior_flows)

    def estimate_relative_pose(self, flows, ctx: RefineContext) -> RelativePose:
        return RelativePose.identity()


ZeroEstimator = Estimator


def _truth(obs):
    if obs.truth is None:
        raise ValueError("this estimator needs an observation with a ground-truth pose")
    return obs.truth


class OracleEstimator(Estimator):
    """Moves ``gain`` of the way to the ground truth each iteration (1.0 = exact)."""

    def __init__(self, gain=1.0):
        self.gain = float(gain)

    def estimate_flow(self, obs, ctx):
        truth = _truth(obs)
        true_flows = pose_guided_flows(ctx.views, truth, ctx.K)
        if self.gain == 1.0:
            return true_flows
        return [FlowField(p.flow + self.gain * (t.flow - p.flow), p.valid & t.valid)
                for p, t in zip(ctx.prior_flows, true_flows)]

    def estimate_relative_pose(self, flows, ctx):
        delta = relative_pose_between(ctx.prior_pose, _truth(ctx.obs), ctx.K)
        if self.gain == 1.0:
            return delta
        return scale_relative_pose(delta, self.gain)


def DampedOracle(gain=0.5):
    return OracleEstimator(gain)


class ToyEstimator(Estimator):
    """Parameterized estimator: a flow blend plus a linear map on pooled flow statistics.

    Parameters ``[k_flow, a_xy, a_z, a_rot]``. The flow is
    ``prior + k_flow * (observed - prior)``. The pose update reads three
    statistics of ``flow - prior`` pooled over views: mean shift (pixels),
    radial expansion and in-plane curl about the projected object origin,
    scaled by ``a_xy``, ``a_z`` and ``a_rot``. It only corrects image-plane
    motion, depth and rotation about the optical axis.
    """

    def __init__(self, params=(0.5, 0.6, 0.6, 0.6)):
        self.params = np.array(params, dtype=np.float64)
        self._cache = {}

    def parameters(self):
        return self.params.copy()

    def set_parameters(self, params):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != self.params.shape:
            raise LengthMismatch(f"expected {self.params.shape[0]} parameters, got {params.shape}")
        self.params = params.copy()

    def _observed(self, obs, ctx):
        truth = _truth(obs)
        key = (id(ctx.views), truth.R.tobytes(), truth.t.tobytes())
        if key not in self._cache:
            self._cache = {key: pose_guided_flows(ctx.views, truth, ctx.K)}
        return self._cache[key]

    def estimate_flow(self, obs, ctx):
        k = self.params[0]
        return [FlowField(p.flow + k * (o.flow - p.flow), p.valid & o.valid)
                for p, o in zip(ctx.prior_flows, self._observed(obs, ctx))]

    def estimate_relative_pose(self, flows, ctx):
        _, a_xy, a_z, a_rot = self.params
        K, prior = ctx.K, ctx.prior_pose
        center, _ = project_points(np.zeros((1, 3)), prior, K)
        center = center[0]
        shift = []
        dpos = []
        for f, p in zip(flows, ctx.prior_flows):
            ok = f.valid & p.valid
            if not ok.any():
                continue
            vs, us = np.nonzero(ok)
            r = f.flow[ok] - p.flow[ok]
            pos = np.stack([us + 0.5, vs + 0.5], 1) + p.flow[ok]
            shift.append(r)
            dpos.append(pos - center)
        if not shift:
            return RelativePose.identity()
        r = np.concatenate(shift)
        d = np.concatenate(dpos)
        mean = r.mean(axis=0)
        rc = r - mean
        norm2 = (d * d).sum()
        radial = (d * rc).sum() / norm2
        curl = (d[:, 0] * rc[:, 1] - d[:, 1] * rc[:, 0]).sum() / norm2
        rot = axis_angle_to_matrix([0.0, 0.0, a_rot * curl])
        v = np.array([a_xy * mean[0], a_xy * mean[1], a_z * np.log1p(max(radial, -0.5))])
        return RelativePose(matrix_to_rot6d(rot), v)


class CorruptedViewEstimator(Estimator):
    """Wraps an estimator and adds a constant offset to one view's flow."""

    def __init__(self, inner, view, offset=(10.0, 0.0)):
        self.inner = inner
        self.view = int(view)
        self.offset = np.asarray(offset, dtype=np.float64)

    def parameters(self):
        return self.inner.parameters()

    def set_parameters(self, params):
        self.inner.set_parameters(params)

    def estimate_flow(self, obs, ctx):
        flows = list(self.inner.estimate_flow(obs, ctx))
        flows[self.view] = flows[self.view] + self.offset
        return flows

    def estimate_relative_pose(self, flows, ctx):
        return self.inner.estimate_relative_pose(flows, ctx)


@dataclass
class RefineResult:
    poses: list  # P_0 .. P_S
    flows: list  # per iteration, one FlowField per view


def refine(estimator, obs, P0: Pose, mesh: TriangleMesh, K: CameraIntrinsics, S: int,
           views=None, n_views=4, width=256, height=256, seed=0):
    """Iteratively update flow and pose ``S`` times starting from ``P0``.

    Synthetic views are rendered once around ``P0`` unless supplied. At each
    iteration the pose-guided flow of the current pose is handed to the
    estimator, whose relative pose updates the current pose.
    """
    if S < 1:
        raise ValueError(f"S must be at least 1, got {S}")
    if views is None:
        views = make_views(mesh, P0, K, width, height, n_views, np.random.default_rng(seed))
    poses = [P0]
    flow_trace = []
    prior_flows = pose_guided_flows(views, P0, K)
    for j in range(1, S + 1):
        ctx = RefineContext(K, views, poses[-1], prior_flows, j, obs)
        flows = estimator.estimate_flow(obs, ctx)
        delta = estimator.estimate_relative_pose(flows, ctx)
        try:
            P = apply_relative_pose(poses[-1], delta, K)
        except DegenerateInput as exc:
            raise DivergedPose(f"iteration {j}: {exc}") from exc
        if not P.t[2] > 0:
            raise DivergedPose(f"iteration {j}: depth {P.t[2]} is not positive")
        poses.append(P)
        flow_trace.append(flows)
        prior_flows = pose_guided_flows(views, P, K)
    return RefineResult(poses, flow_trace)


@dataclass
class PseudoLabels:
    flows: list
    kept: list
    pose: Pose | None
    trace: RefineResult


def generate_pseudo_labels(teacher, obs, P0, mesh, K, cfg: SelfSupConfig, views, cross=None):
    if cfg.N < 2 or len(views) < 2:
        raise InsufficientViews(f"pseudo-labels need at least 2 views, got N={cfg.N}, {len(views)} views")
    trace = refine(teacher, obs, P0, mesh, K, cfg.S_teacher, views=views)
    flows = trace.flows[-1]
    cross = cross_view_flows(views, K) if cross is None else cross
    kept = consistency_filter(flows, cross, cfg.eps_px, cfg.consistency_rule)
    kept = [k & v.maps.mask for k, v in zip(kept, views)]
    pose = trace.poses[-1]
    if cfg.pose_gate is not None:
        frac = sum(k.sum() for k in kept) / max(1, sum(v.maps.area for v in views))
        if frac < cfg.pose_gate:
            pose = None
    return PseudoLabels(flows, kept, pose, trace)


def noisy_augment(img, nc: NoiseConfig, rng):
    img = np.asarray(img, dtype=np.float64)
    noise = rng.normal(0.0, 1.0, size=img.shape) * nc.gaussian_sigma
    offset = rng.uniform(-nc.brightness_jitter, nc.brightness_jitter)
    if nc.gaussian_sigma == 0 and nc.brightness_jitter == 0:
        return img.copy()
    return np.clip(img + noise + offset, 0.0, 1.0)


def ema_update(teacher_params, student_params, m):
    t = np.asarray(teacher_params, dtype=np.float64)
    s = np.asarray(student_params, dtype=np.float64)
    if t.shape != s.shape:
        raise LengthMismatch(f"parameter vectors differ: {t.shape} vs {s.shape}")
    if not 0 < m < 1:
        raise ValueError(f"EMA factor must lie in (0, 1), got {m}")
    return m * t + (1.0 - m) * s


@dataclass(eq=False)
class Sample:
    """A fixed simulated scene shared by teacher and student."""

    mesh: TriangleMesh
    K: CameraIntrinsics
    width: int
    height: int
    P0: Pose
    obs: Observation
    views: list
    cross: dict
    points: np.ndarray
    real_features: np.ndarray | None = None


def make_sample(mesh, K, width, height, P_gt, P0, cfg: SelfSupConfig, real_image=None):
    rng = np.random.default_rng(cfg.seed)
    if real_image is None:
        real_image = shaded_render(rasterize(mesh, P_gt, K, width, height))
    views = make_views(mesh, P0, K, width, height, cfg.N, rng, cfg.view_rot_deg, cfg.view_trans_frac)
    return Sample(
        mesh, K, width, height, P0, Observation(real_image, P_gt), views,
        cross_view_flows(views, K) if len(views) > 1 else {},
        farthest_point_sample(mesh.vertices, 1024, cfg.seed),
    )


def selfsup_losses(sample: Sample, labels: PseudoLabels, f_stu, P_stu, noisy_image, cfg: SelfSupConfig):
    w = cfg.weights
    masks = [v.maps.mask for v in sample.views]
    rec = LossRecord()
    rec.flow = flow_loss(f_stu, labels.flows, labels.kept)
    rec.photo = photometric_loss(sample.obs.image, f_stu, labels.flows, masks)
    rec.warp_mask = warp_mask_loss(masks, f_stu, labels.flows)
    F_r = extract_features(noisy_image)
    rec.feat = float(np.mean([
        feature_level_loss(F_r, extract_features(v.image), f, v.maps.mask) for v, f in zip(sample.views, f_stu)
    ]))
    rec.pose = point_matching_loss(P_stu, labels.pose, sample.points, cfg.symmetric) if labels.pose is not None else 0.0
    rec.img_level = image_level_loss(rec.flow, rec.photo, rec.warp_mask, w)
    rec.total = total_selfsup_loss(rec.pose, rec.img_level, rec.feat, w)
    return rec


def self_train_step(teacher, student, sample: Sample, cfg: SelfSupConfig, step=0):
    """One teacher-student round; returns the loss record before the update.

    The teacher refines on the clean image; the student refines on a noisy
    copy with ``S_student`` iterations. Parameterized students take one
    central finite-difference gradient step (norm clipped to ``grad_clip``)
    on the total loss, then the
    teacher parameters move toward the student's by EMA.
    """
    if len(teacher.parameters()) != len(student.parameters()):
        raise LengthMismatch("teacher and student parameter layouts differ")
    labels = generate_pseudo_labels(teacher, sample.obs, sample.P0, sample.mesh, sample.K, cfg,
                                    sample.views, sample.cross)
    rng = np.random.default_rng([cfg.noise.seed, cfg.seed, step])
    noisy = noisy_augment(sample.obs.image, cfg.noise, rng)
    noisy_obs = Observation(noisy, sample.obs.truth)

    def evaluate():
        tr = refine(student, noisy_obs, sample.P0, sample.mesh, sample.K, cfg.S_student, views=sample.views)
        return selfsup_losses(sample, labels, tr.flows[-1], tr.poses[-1], noisy, cfg)

    record = evaluate()
    theta = student.parameters()
    if len(theta):
        grad = np.zeros_like(theta)
        h = cfg.fd_step
        for i in range(len(theta)):
            for sign in (1.0, -1.0):
                probe = theta.copy()
                probe[i] += sign * h
                student.set_parameters(probe)
                grad[i] += sign * evaluate().total
            grad[i] /= 2 * h
        gnorm = np.linalg.norm(grad)
        if cfg.grad_clip and gnorm > cfg.grad_clip:
            grad *= cfg.grad_clip / gnorm
        student.set_parameters(theta - cfg.lr * grad)
        teacher.set_parameters(ema_update(teacher.parameters(), student.parameters(), cfg.ema_m))
        log.debug("step %d total %.6f grad %s", step, record.total, grad)
    return record
