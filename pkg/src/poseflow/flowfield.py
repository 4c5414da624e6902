"""Pose-induced flow fields, warping and multi-view consistency filtering.

A flow maps a pixel ``u`` of the source view to ``u + f(u)`` in the target
view (``x_t = x_s + f``). Pixel centers sit at ``(u + 0.5, v + 0.5)``; in
array-index coordinates a displacement is applied as-is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InsufficientViews
from .geometry import CameraIntrinsics, Pose, project_points
from .raster import RenderMaps


@dataclass(frozen=True, eq=False)
class FlowField:
    flow: np.ndarray  # (H, W, 2) displacement in pixels, (dx, dy)
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        flow = np.asarray(self.flow, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if flow.ndim != 3 or flow.shape[2] != 2 or valid.shape != flow.shape[:2]:
            raise DimensionMismatch(f"flow {flow.shape} and validity {valid.shape} disagree")
        flow = np.where(valid[..., None], flow, 0.0)
        object.__setattr__(self, "flow", flow)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self):
        return self.flow.shape[0]

    @property
    def width(self):
        return self.flow.shape[1]

    @classmethod
    def zeros(cls, height, width, valid=None):
        valid = np.ones((height, width), bool) if valid is None else valid
        return cls(np.zeros((height, width, 2)), valid)

    def __add__(self, other):
        if isinstance(other, FlowField):
            return FlowField(self.flow + other.flow, self.valid & other.valid)
        return FlowField(self.flow + np.asarray(other, dtype=np.float64), self.valid)

    def downscale(self, stride):
        """Subsample at ``stride`` and express displacements in the coarse grid."""
        s = int(stride)
        return FlowField(self.flow[s // 2::s, s // 2::s] / s, self.valid[s // 2::s, s // 2::s])


def flow_from_poses(src: RenderMaps, src_pose: Pose, tgt_pose: Pose, K: CameraIntrinsics) -> FlowField:
    """Dense flow of every visible surface point of ``src`` when the object moves to ``tgt_pose``.

    ``src_pose`` must be the pose ``src`` was rendered at; model points come
    from the object-coordinate map so only ``tgt_pose`` is projected.
    """
    del src_pose  # objcoord already encodes the source geometry
    vs, us = np.nonzero(src.mask)
    flow = np.zeros((src.height, src.width, 2))
    valid = np.zeros((src.height, src.width), dtype=bool)
    if len(vs):
        uv, z = project_points(src.objcoord[vs, us], tgt_pose, K, strict=False)
        ok = z > 1e-9
        flow[vs, us, 0] = np.where(ok, uv[:, 0] - (us + 0.5), 0.0)
        flow[vs, us, 1] = np.where(ok, uv[:, 1] - (vs + 0.5), 0.0)
        valid[vs, us] = ok
    return FlowField(flow, valid)


def sample_bilinear(values, x, y, support=None, renormalize=False):
    """Bilinearly sample ``values`` (H, W[, C]) at index coordinates ``(x, y)``.

    Returns ``(samples, ok)``. A sample is ok when its whole 2x2 footprint
    lies inside the raster (and inside ``support`` if given). With
    ``renormalize`` the footprint only needs one supported neighbour and
    weights are renormalized over supported neighbours.
    """
    values = np.asarray(values, dtype=np.float64)
    H, W = values.shape[:2]
    squeeze = values.ndim == 2
    if squeeze:
        values = values[..., None]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    finite = np.isfinite(x) & np.isfinite(y)
    x = np.where(finite, x, -10.0)
    y = np.where(finite, y, -10.0)
    # snap float dust at the borders onto the grid
    x = np.where(np.abs(x - np.round(x)) < 1e-9, np.round(x), x)
    y = np.where(np.abs(y - np.round(y)) < 1e-9, np.round(y), y)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    corners = [(0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)), (0, 1, (1 - fx) * fy), (1, 1, fx * fy)]
    acc = np.zeros(x.shape + (values.shape[2],))
    wsum = np.zeros(x.shape)
    all_ok = finite.copy()
    for dx, dy, w in corners:
        xi, yi = x0 + dx, y0 + dy
        needed = w > 0
        inside = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        xc, yc = np.clip(xi, 0, W - 1), np.clip(yi, 0, H - 1)
        good = inside
        if support is not None:
            good = good & support[yc, xc]
        all_ok &= good | ~needed
        use = good & needed if renormalize else needed & inside
        acc += np.where(use, w, 0.0)[..., None] * values[yc, xc]
        wsum += np.where(use, w, 0.0)
    if renormalize:
        ok = finite & (wsum > 1e-12)
        acc = acc / np.where(ok, wsum, 1.0)[..., None]
    else:
        ok = all_ok
    acc[~ok] = 0.0
    return (acc[..., 0] if squeeze else acc), ok


def _grid(height, width):
    return np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))


def backward_warp(img, flow: FlowField, support=None):
    """``out(u) = img(u + f(u))`` with bilinear sampling.

    Returns ``(warped, valid)``; invalid pixels are 0. ``support`` optionally
    marks the pixels of ``img`` that may be sampled.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] != flow.flow.shape[:2]:
        raise DimensionMismatch(f"image {img.shape[:2]} vs flow {flow.flow.shape[:2]}")
    gx, gy = _grid(flow.height, flow.width)
    out, ok = sample_bilinear(img, gx + flow.flow[..., 0], gy + flow.flow[..., 1], support=support)
    ok &= flow.valid
    out[~ok] = 0.0
    return out, ok


def forward_warp(img, flow: FlowField, normalize=True):
    """Bilinear splatting of valid source pixels to ``u + f(u)``.

    With ``normalize`` the accumulated values are divided by the
    accumulated weight wherever it exceeds 1e-6 (0 elsewhere); otherwise
    the raw accumulation is returned.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] != flow.flow.shape[:2]:
        raise DimensionMismatch(f"image {img.shape[:2]} vs flow {flow.flow.shape[:2]}")
    H, W = img.shape[:2]
    squeeze = img.ndim == 2
    vals = img[..., None] if squeeze else img
    C = vals.shape[2]
    vs, us = np.nonzero(flow.valid)
    x = us + flow.flow[vs, us, 0]
    y = vs + flow.flow[vs, us, 1]
    x = np.where(np.abs(x - np.round(x)) < 1e-9, np.round(x), x)
    y = np.where(np.abs(y - np.round(y)) < 1e-9, np.round(y), y)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx, fy = x - x0, y - y0
    src = vals[vs, us]
    acc = np.zeros((H * W, C))
    wacc = np.zeros(H * W)
    for dx, dy, w in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)), (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        keep = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H) & (w > 0)
        lin = yi[keep] * W + xi[keep]
        wacc += np.bincount(lin, weights=w[keep], minlength=H * W)
        for c in range(C):
            acc[:, c] += np.bincount(lin, weights=w[keep] * src[keep, c], minlength=H * W)
    acc = acc.reshape(H, W, C)
    wacc = wacc.reshape(H, W)
    if normalize:
        hit = wacc > 1e-6
        acc = np.where(hit[..., None], acc / np.where(hit, wacc, 1.0)[..., None], 0.0)
    return acc[..., 0] if squeeze else acc


def compose_flows(f_ab: FlowField, f_bc: FlowField) -> FlowField:
    """Chain ``a -> b -> c`` by sampling ``f_bc`` where ``f_ab`` lands.

    The whole bilinear footprint must be valid in ``f_bc``; partial
    footprints at silhouettes would extrapolate across the boundary.
    """
    gx, gy = _grid(f_ab.height, f_ab.width)
    second, ok = sample_bilinear(f_bc.flow, gx + f_ab.flow[..., 0], gy + f_ab.flow[..., 1], support=f_bc.valid)
    return FlowField(f_ab.flow + second, f_ab.valid & ok)


def consistency_filter(flows, cross_view_flows, eps_px=2.0, rule="any"):
    """Keep pixels whose flow agrees with another view's flow at the corresponding pixel.

    ``flows[i]`` maps view ``i`` to the shared target image;
    ``cross_view_flows[(i, j)]`` maps view ``i`` to view ``j``. Pixel ``u`` of
    view ``i`` lands at ``u + flows[i](u)``; going through view ``j`` it lands
    at ``u' + flows[j](u')`` with ``u' = u + cross(u)``. The pixel is kept when
    the two landing points are within ``eps_px`` for at least one other view
    (``rule='any'``) or for a strict majority of the other views
    (``rule='majority'``).
    """
    n = len(flows)
    if n < 2:
        raise InsufficientViews(f"consistency filtering needs at least 2 views, got {n}")
    if rule not in ("any", "majority"):
        raise ValueError(f"unknown rule {rule!r}")
    shape = flows[0].flow.shape
    for f in flows:
        if f.flow.shape != shape:
            raise DimensionMismatch("all flow fields must share dimensions")
    gx, gy = _grid(shape[0], shape[1])
    kept = []
    for i in range(n):
        fi = flows[i]
        votes = np.zeros(shape[:2], dtype=np.int64)
        for j in range(n):
            if j == i or (i, j) not in cross_view_flows:
                continue
            cross = cross_view_flows[(i, j)]
            if cross.flow.shape != shape:
                raise DimensionMismatch("cross-view flow dimensions differ")
            xj = gx + cross.flow[..., 0]
            yj = gy + cross.flow[..., 1]
            fj, ok = sample_bilinear(flows[j].flow, xj, yj, support=flows[j].valid, renormalize=True)
            land_i = np.stack([gx, gy], -1) + fi.flow
            land_j = np.stack([xj, yj], -1) + fj
            err = np.linalg.norm(land_i - land_j, axis=-1)
            votes += (fi.valid & cross.valid & ok & (err < eps_px)).astype(np.int64)
        if rule == "any":
            keep = votes >= 1
        else:
            keep = 2 * votes > (n - 1)
        kept.append(keep & fi.valid)
    return kept
