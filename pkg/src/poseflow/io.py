"""File formats: PNG images, Middlebury .flo, OBJ meshes, pose JSON-lines, PFH depth rasters."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MalformedFile
from .flowfield import FlowField
from .geometry import CameraIntrinsics, Pose, orthonormalize
from .raster import TriangleMesh

FLO_MAGIC = b"PIEH"


def save_png(path, img):
    """Write a float image in [0, 1] (or a uint8 array verbatim) as 8-bit PNG."""
    a = np.asarray(img)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    elif a.dtype != np.uint8:
        a = np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    Image.fromarray(a).save(path, format="PNG")


def load_png(path, as_float=True):
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            a = np.array(im)
    except (OSError, SyntaxError) as exc:
        raise MalformedFile(f"{path}: not a readable image ({exc})") from exc
    return a.astype(np.float64) / 255.0 if as_float else a


def save_mask(path, mask):
    save_png(path, np.asarray(mask, dtype=bool))


def load_mask(path):
    return load_png(path, as_float=False) > 127


def flo_bytes(flow):
    flow = np.asarray(flow, dtype="<f4")
    h, w = flow.shape[:2]
    return FLO_MAGIC + struct.pack("<ii", w, h) + flow.reshape(h, w, 2).tobytes(order="C")


def write_flo(path, flow):
    Path(path).write_bytes(flo_bytes(flow))


def read_flo(path):
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise MalformedFile(f"{path}: truncated header", offset=len(data))
    if data[:4] != FLO_MAGIC:
        raise MalformedFile(f"{path}: bad magic {data[:4]!r}", offset=0)
    w, h = struct.unpack("<ii", data[4:12])
    if w <= 0 or h <= 0:
        raise MalformedFile(f"{path}: invalid size {w}x{h}", offset=4)
    expected = 12 + 8 * w * h
    if len(data) != expected:
        raise MalformedFile(f"{path}: expected {expected} bytes, found {len(data)}", offset=min(len(data), expected))
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2).astype(np.float32)


def _valid_path(path):
    p = Path(path)
    return p.with_name(p.stem + "_valid.png")


def save_flow(path, field: FlowField):
    """Write the displacement as .flo and validity as a companion ``<stem>_valid.png``."""
    write_flo(path, field.flow)
    save_mask(_valid_path(path), field.valid)


def load_flow(path) -> FlowField:
    flow = read_flo(path).astype(np.float64)
    vp = _valid_path(path)
    valid = load_mask(vp) if vp.exists() else np.ones(flow.shape[:2], dtype=bool)
    if valid.shape != flow.shape[:2]:
        raise MalformedFile(f"{vp}: mask size {valid.shape} does not match flow {flow.shape[:2]}")
    return FlowField(flow, valid)


def load_obj(path) -> TriangleMesh:
    """Read the ``v x y z`` / triangular ``f i j k`` subset of OBJ (1-based, slash forms allowed)."""
    vertices, faces = [], []
    offset = 0
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.decode("utf-8", errors="replace").strip()
            here = offset
            offset += len(raw)
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MalformedFile(f"{path}:{lineno}: vertex needs 3 coordinates", offset=here)
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError as exc:
                    raise MalformedFile(f"{path}:{lineno}: {exc}", offset=here) from exc
            elif tag == "f":
                if len(parts) != 4:
                    raise MalformedFile(f"{path}:{lineno}: only triangular faces are supported", offset=here)
                idx = []
                for tok in parts[1:]:
                    try:
                        i = int(tok.split("/")[0])
                    except ValueError as exc:
                        raise MalformedFile(f"{path}:{lineno}: bad index {tok!r}", offset=here) from exc
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                faces.append(idx)
            elif tag in ("vn", "vt", "o", "g", "s"):
                continue
            else:
                raise MalformedFile(f"{path}:{lineno}: unsupported OBJ statement {tag!r}", offset=here)
    return TriangleMesh(np.array(vertices).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(path, mesh: TriangleMesh):
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def pose_from_json(d) -> Pose:
    try:
        R = np.asarray(d["R"], dtype=np.float64).reshape(3, 3)
        t = np.asarray(d["t"], dtype=np.float64).reshape(3)
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedFile(f"pose object needs 'R' (3x3) and 't' (3): {exc}") from exc
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-12 or abs(np.linalg.det(R) - 1) > 1e-12:
        R = orthonormalize(R)
    return Pose(R, t)


def load_pose(path) -> Pose:
    try:
        return pose_from_json(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: {exc.msg}", offset=exc.pos) from exc


def save_pose(path, pose: Pose):
    Path(path).write_text(json.dumps(pose.to_dict()) + "\n")


def load_poses(path):
    poses = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("utf-8").strip()
            if line:
                try:
                    poses.append(pose_from_json(json.loads(line)))
                except json.JSONDecodeError as exc:
                    raise MalformedFile(f"{path}: {exc.msg}", offset=offset + exc.pos) from exc
            offset += len(raw)
    return poses


def save_poses(path, poses):
    with open(path, "w") as fh:
        for p in poses:
            fh.write(json.dumps(p.to_dict()) + "\n")


def write_pfh(path, depth):
    depth = np.asarray(depth, dtype="<f4")
    h, w = depth.shape
    Path(path).write_bytes(f"PFH {w} {h}\n".encode("ascii") + depth.tobytes(order="C"))


def read_pfh(path):
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise MalformedFile(f"{path}: missing header line", offset=len(data))
    parts = data[:nl].split()
    if len(parts) != 3 or parts[0] != b"PFH":
        raise MalformedFile(f"{path}: bad header {data[:nl]!r}", offset=0)
    w, h = int(parts[1]), int(parts[2])
    body = data[nl + 1:]
    if len(body) != 4 * w * h:
        raise MalformedFile(f"{path}: expected {4 * w * h} data bytes, found {len(body)}", offset=nl + 1 + len(body))
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float32)


def load_intrinsics(d) -> CameraIntrinsics:
    return CameraIntrinsics.from_dict(d)
