"""Z-buffer triangle rasterizer producing depth, mask and object-coordinate maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .errors import EmptyRender, MalformedFile
from .geometry import CameraIntrinsics, Pose

NEAR = 1e-6


def _max_pairwise_distance(vertices):
    if len(vertices) < 2:
        return 0.0
    pts = vertices
    if len(pts) > 2000:
        from scipy.spatial import ConvexHull

        try:
            pts = pts[ConvexHull(pts).vertices]
        except Exception:  # flat or otherwise degenerate point cloud
            pass
    if len(pts) > 6000:
        # chunked brute force keeps memory bounded
        best = 0.0
        for i in range(0, len(pts), 1000):
            d = np.linalg.norm(pts[i:i + 1000, None, :] - pts[None, :, :], axis=-1)
            best = max(best, float(d.max()))
        return best
    return float(pdist(pts).max())


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    diameter: float = field(init=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(v) == 0 or len(f) == 0:
            raise MalformedFile("mesh needs at least one vertex and one triangle")
        if f.min() < 0 or f.max() >= len(v):
            raise MalformedFile(f"triangle index out of range [0, {len(v)})")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        d = _max_pairwise_distance(v)
        if not d > 0:
            raise MalformedFile("mesh diameter must be positive")
        object.__setattr__(self, "diameter", d)

    def face_normals(self):
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)


def make_box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with outward-facing counter-clockwise triangles."""
    sx, sy, sz = (0.5 * s for s in size)
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)]) + center
    # vertex index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, tris)


def make_cube(side=1.0) -> TriangleMesh:
    return make_box((side, side, side))


def make_plane(width=1.0, height=1.0) -> TriangleMesh:
    """Rectangle in the model z = 0 plane."""
    w, h = 0.5 * width, 0.5 * height
    v = [[-w, -h, 0.0], [w, -h, 0.0], [w, h, 0.0], [-w, h, 0.0]]
    return TriangleMesh(v, [(0, 1, 2), (0, 2, 3)])


@dataclass(frozen=True, eq=False)
class RenderMaps:
    """Rasterization output.

    ``depth`` is 0 on background, ``objcoord`` holds the model-frame point
    seen at each pixel and ``normals`` its model-frame face normal, flipped
    toward the camera. ``tri_id`` is -1 on background.
    """

    width: int
    height: int
    depth: np.ndarray
    mask: np.ndarray
    objcoord: np.ndarray
    normals: np.ndarray
    tri_id: np.ndarray
    pose: Pose
    K: CameraIntrinsics
    scale: float

    @property
    def area(self):
        return int(self.mask.sum())


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _owns_edge(ax, ay, bx, by):
    # Antisymmetric tie rule: a shared edge, traversed in opposite directions
    # by its two (positively oriented) triangles, belongs to exactly one.
    dy, dx = by - ay, bx - ax
    return dy < 0 or (dy == 0 and dx > 0)


def rasterize(mesh: TriangleMesh, pose: Pose, K: CameraIntrinsics, width: int, height: int) -> RenderMaps:
    """Render ``mesh`` at ``pose`` with a z-buffer.

    Pixel centers are at ``(u + 0.5, v + 0.5)``. No back-face culling.
    Triangles with any vertex closer than ``NEAR`` to the camera plane are
    skipped (no near-plane clipping).
    """
    width, height = int(width), int(height)
    cam = pose.transform(mesh.vertices)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = K.fx * cam[:, 0] / z + K.cx
        sy = K.fy * cam[:, 1] / z + K.cy

    zbuf = np.full((height, width), np.inf)
    tri_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))

    for ti, (i0, i1, i2) in enumerate(mesh.triangles):
        if min(z[i0], z[i1], z[i2]) <= NEAR:
            continue
        idx = [i0, i1, i2]
        swapped = False
        area = _edge(sx[i0], sy[i0], sx[i1], sy[i1], sx[i2], sy[i2])
        if area == 0 or not np.isfinite(area):
            continue
        if area < 0:
            idx = [i0, i2, i1]
            swapped = True
            area = -area
        xs, ys, zs = sx[idx], sy[idx], z[idx]
        u0 = max(int(np.floor(xs.min() - 0.5)), 0)
        u1 = min(int(np.ceil(xs.max() - 0.5)), width - 1)
        v0 = max(int(np.floor(ys.min() - 0.5)), 0)
        v1 = min(int(np.ceil(ys.max() - 0.5)), height - 1)
        if u0 > u1 or v0 > v1:
            continue
        px, py = np.meshgrid(np.arange(u0, u1 + 1) + 0.5, np.arange(v0, v1 + 1) + 0.5)
        inside = np.ones(px.shape, dtype=bool)
        ws = []
        for k in range(3):
            a, b = (k + 1) % 3, (k + 2) % 3
            w = _edge(xs[a], ys[a], xs[b], ys[b], px, py)
            if _owns_edge(xs[a], ys[a], xs[b], ys[b]):
                inside &= w >= 0
            else:
                inside &= w > 0
            ws.append(w)
        if not inside.any():
            continue
        b = np.stack(ws, axis=-1) / area
        q = b / zs
        zinv = q.sum(axis=-1)
        d = 1.0 / zinv
        win = zbuf[v0:v1 + 1, u0:u1 + 1]
        upd = inside & (d < win)
        if not upd.any():
            continue
        win[upd] = d[upd]
        tri_id[v0:v1 + 1, u0:u1 + 1][upd] = ti
        # perspective-correct barycentrics in the original vertex order
        pc = q / zinv[..., None]
        if swapped:
            pc = pc[..., [0, 2, 1]]
        bary[v0:v1 + 1, u0:u1 + 1][upd] = pc[upd]

    mask = tri_id >= 0
    if not mask.any():
        raise EmptyRender("no triangle covers a pixel inside the viewport")

    depth = np.where(mask, zbuf, 0.0)
    objcoord = np.zeros((height, width, 3))
    normals = np.zeros((height, width, 3))
    ids = tri_id[mask]
    tri_v = mesh.vertices[mesh.triangles[ids]]  # (M, 3, 3)
    pts = np.einsum("mk,mkc->mc", bary[mask], tri_v)
    objcoord[mask] = pts
    fn = mesh.face_normals()[ids]
    cam_center = -pose.R.T @ pose.t
    flip = np.sign(np.einsum("mc,mc->m", fn, cam_center - pts))
    flip[flip == 0] = 1.0
    normals[mask] = fn * flip[:, None]
    return RenderMaps(width, height, depth, mask, objcoord, normals, tri_id, pose, K, mesh.diameter)


DEFAULT_LIGHT = np.array([0.3, -0.5, -0.8])


def _albedo(objcoord, scale):
    # Smooth, injective-looking color code of the surface point; two cycles per diameter.
    k = 2.0 * np.pi * 2.0 / scale
    dirs = np.array([[1.0, 0.3, 0.5], [-0.4, 1.0, 0.2], [0.3, -0.6, 1.0]])
    phases = np.array([0.3, 1.7, 2.9])
    return 0.5 + 0.4 * np.sin(k * objcoord @ dirs.T + phases)


def shaded_render(maps: RenderMaps, pose: Pose | None = None, light=None, light_frame="object"):
    """Lambertian RGB image of a render in ``[0, 1]``; background is exactly 0.

    ``light`` is a direction (towards the light). With ``light_frame='object'``
    the light is attached to the model frame so appearance moves rigidly with
    the object; with ``'camera'`` it is fixed in the camera frame and rotated
    into the model frame using ``pose`` (defaults to the render pose).
    """
    pose = maps.pose if pose is None else pose
    light = DEFAULT_LIGHT if light is None else np.asarray(light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    if light_frame == "camera":
        light = pose.R.T @ light
    elif light_frame != "object":
        raise ValueError(f"unknown light frame {light_frame!r}")
    img = np.zeros((maps.height, maps.width, 3))
    m = maps.mask
    lambert = np.clip(maps.normals[m] @ light, 0.0, None)
    shade = 0.35 + 0.65 * lambert
    img[m] = np.clip(_albedo(maps.objcoord[m], maps.scale) * shade[:, None], 0.0, 1.0)
    return img


def visible_correspondences(maps: RenderMaps):
    """Pixel centers ``(M, 2)`` and model points ``(M, 3)`` for every mask pixel."""
    vs, us = np.nonzero(maps.mask)
    pix = np.stack([us + 0.5, vs + 0.5], axis=1).astype(np.float64)
    return pix, maps.objcoord[vs, us]
