"""Self-supervision loss terms.

Image-level: census photometric, forward-warped mask L1, flow L1.
Feature-level: cosine dissimilarity of backward-warped features.
Pose: point matching. Totals combine them with :class:`LossWeights`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import ChannelMismatch, DimensionMismatch
from .flowfield import FlowField, backward_warp, forward_warp
from .geometry import Pose

CENSUS_RADIUS = 3  # 7x7 window
_CHARB_EPS = 0.001
_CHARB_EXP = 0.4


@dataclass(frozen=True)
class LossWeights:
    gamma1: float = 0.1  # flow
    gamma2: float = 0.1  # photometric
    gamma3: float = 10.0  # pose
    gamma4: float = 10.0  # image level

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")


@dataclass
class LossRecord:
    flow: float = 0.0
    photo: float = 0.0
    warp_mask: float = 0.0
    feat: float = 0.0
    pose: float = 0.0
    img_level: float = 0.0
    total: float = 0.0

    def to_dict(self):
        return {k: float(v) for k, v in asdict(self).items()}


def to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[..., 0]
    return img[..., :3] @ np.array([0.2989, 0.5870, 0.1140])


def _census_offsets(radius=CENSUS_RADIUS):
    return [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1) if (dy, dx) != (0, 0)]


def census_transform(img, radius=CENSUS_RADIUS):
    """Soft census descriptor ``(H, W, (2r+1)^2 - 1)``.

    Each entry is a saturated sign of the neighbour-minus-center difference,
    scaled by the local window contrast, so positive affine intensity
    changes leave the descriptor unchanged. Out-of-image neighbours read as
    edge-replicated values; callers drop border pixels.
    """
    g = to_gray(img)
    size = 2 * radius + 1
    mean = ndimage.uniform_filter(g, size, mode="nearest")
    var = np.maximum(ndimage.uniform_filter(g * g, size, mode="nearest") - mean * mean, 0.0)
    soft2 = 0.01 * var + 1e-12  # (0.1 * local std)^2
    pad = np.pad(g, radius, mode="edge")
    H, W = g.shape
    out = np.empty((H, W, size * size - 1))
    for k, (dy, dx) in enumerate(_census_offsets(radius)):
        d = pad[radius + dy:radius + dy + H, radius + dx:radius + dx + W] - g
        out[..., k] = d / np.sqrt(d * d + soft2)
    return out


def _interior(shape, radius=CENSUS_RADIUS):
    m = np.zeros(shape, dtype=bool)
    if shape[0] > 2 * radius and shape[1] > 2 * radius:
        m[radius:-radius, radius:-radius] = True
    return m


def census_loss(a, b, mask=None, with_count=False):
    """Census photometric distance between two images averaged over ``mask``.

    Per pixel: soft Hamming distance of the census descriptors, then the
    generalized Charbonnier ``(d^2 + 0.001)^0.4`` shifted so identical
    descriptors score exactly 0. Only pixels whose full window lies inside
    the image count. An empty mask yields 0 (count 0 with ``with_count``).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    m = _interior(a.shape[:2])
    if mask is not None:
        m &= np.asarray(mask, dtype=bool)
    n = int(m.sum())
    if n == 0:
        return (0.0, 0) if with_count else 0.0
    ta = census_transform(a)[m]
    tb = census_transform(b)[m]
    sq = (ta - tb) ** 2
    dist = (sq / (0.1 + sq)).sum(axis=1)
    rho = (dist * dist + _CHARB_EPS) ** _CHARB_EXP - _CHARB_EPS ** _CHARB_EXP
    value = float(rho.mean())
    return (value, n) if with_count else value


def photometric_loss(I_r, f_stu, f_tea, masks):
    """Sum over views of census distance between the real image warped by student and teacher flows."""
    if not (len(f_stu) == len(f_tea) == len(masks)):
        raise DimensionMismatch("need one student flow, teacher flow and mask per view")
    total = 0.0
    for fs, ft, m in zip(f_stu, f_tea, masks):
        ws, oks = backward_warp(I_r, fs)
        wt, okt = backward_warp(I_r, ft)
        total += census_loss(ws, wt, np.asarray(m, bool) & oks & okt)
    return total


def warp_mask_loss(masks_s, f_stu, f_tea):
    """Sum over views of the L1 gap between splatted masks, each normalized by mask area."""
    total = 0.0
    for m, fs, ft in zip(masks_s, f_stu, f_tea):
        m = np.asarray(m, dtype=np.float64)
        area = m.sum()
        if area == 0:
            continue
        total += np.abs(forward_warp(m, fs) - forward_warp(m, ft)).sum() / area
    return float(total)


def flow_loss(f_stu, f_tea, kept, with_count=False):
    """Mean L1 endpoint error over kept pixels.

    Accepts single fields or per-view lists (pixels are pooled across views).
    """
    if isinstance(f_stu, FlowField):
        f_stu, f_tea, kept = [f_stu], [f_tea], [kept]
    s, n = 0.0, 0
    for fs, ft, k in zip(f_stu, f_tea, kept):
        k = np.asarray(k, dtype=bool)
        s += np.abs(fs.flow - ft.flow)[k].sum()
        n += int(k.sum())
    value = s / n if n else 0.0
    return (float(value), n) if with_count else float(value)


def image_level_loss(flow, photo, warp_mask, w: LossWeights = LossWeights()):
    return w.gamma1 * flow + w.gamma2 * photo + warp_mask


def total_selfsup_loss(pose, img_level, feat, w: LossWeights = LossWeights()):
    return w.gamma3 * pose + w.gamma4 * img_level + feat


FEATURE_STRIDE = 4


def extract_features(img, stride=FEATURE_STRIDE):
    """Fixed filter bank: gray, two Sobel gradients, three oriented difference-of-box responses.

    Returns an ``(H // stride, W // stride, 6)`` map, block-averaged.
    """
    g = to_gray(img)
    box = ndimage.uniform_filter(g, 5, mode="nearest")
    chans = [g, ndimage.sobel(g, axis=1, mode="nearest") / 8.0, ndimage.sobel(g, axis=0, mode="nearest") / 8.0]
    for dy, dx in ((0, 2), (2, 0), (2, 2)):
        fwd = ndimage.shift(box, (-dy, -dx), order=0, mode="nearest")
        bwd = ndimage.shift(box, (dy, dx), order=0, mode="nearest")
        chans.append(fwd - bwd)
    feats = np.stack(chans, axis=-1)
    s = int(stride)
    H, W = (g.shape[0] // s) * s, (g.shape[1] // s) * s
    feats = feats[:H, :W].reshape(H // s, s, W // s, s, -1).mean(axis=(1, 3))
    return feats


def _downscale_mask(mask, stride):
    s = int(stride)
    return np.asarray(mask, dtype=bool)[s // 2::s, s // 2::s]


def feature_level_loss(F_r, F_s, f_stu: FlowField, mask=None, weights=None, stride=FEATURE_STRIDE):
    """Weighted mean cosine dissimilarity between ``F_r`` warped by the student flow and ``F_s``.

    The flow and mask may be given at image resolution; they are then
    subsampled by ``stride`` to match the feature grid.
    """
    F_r = np.asarray(F_r, dtype=np.float64)
    F_s = np.asarray(F_s, dtype=np.float64)
    if F_r.shape[-1] != F_s.shape[-1]:
        raise ChannelMismatch(f"channel counts differ: {F_r.shape[-1]} vs {F_s.shape[-1]}")
    if F_r.shape != F_s.shape:
        raise DimensionMismatch(f"feature maps differ: {F_r.shape} vs {F_s.shape}")
    h, w = F_s.shape[:2]
    if f_stu.flow.shape[:2] != (h, w):
        f_stu = f_stu.downscale(stride)
    f_stu = FlowField(f_stu.flow[:h, :w], f_stu.valid[:h, :w])
    m = np.ones((h, w), bool) if mask is None else np.asarray(mask, bool)
    if m.shape != (h, w):
        m = _downscale_mask(m, stride)[:h, :w]
    wts = np.ones((h, w)) if weights is None else np.asarray(weights, dtype=np.float64)
    if wts.shape != (h, w):
        wts = wts[int(stride) // 2::int(stride), int(stride) // 2::int(stride)][:h, :w]

    warped, ok = backward_warp(F_r, f_stu)
    sel = m & ok & (wts > 0)
    if not sel.any():
        return 0.0
    a, b = warped[sel], F_s[sel]
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    good = (na >= 1e-8) & (nb >= 1e-8)
    cos = np.zeros(len(a))
    cos[good] = np.einsum("ij,ij->i", a[good], b[good]) / (na[good] * nb[good])
    dis = np.where(good, 1.0 - cos, 0.0)
    ws = wts[sel]
    return float((ws * dis).sum() / ws.sum())


def point_matching_loss(P_pred: Pose, P_pseudo: Pose, points, symmetric=False):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("point matching needs at least one point")
    a = P_pred.transform(pts)
    b = P_pseudo.transform(pts)
    if not symmetric:
        return float(np.linalg.norm(a - b, axis=1).mean())
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return float(d.min(axis=1).mean())


def farthest_point_sample(points, k=1024, seed=0):
    """Greedy farthest-point subset of at most ``k`` points, starting from a seeded random point."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) <= k:
        return pts.copy()
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(len(pts)))]
    dist = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return pts[chosen]
