import struct

import numpy as np
import pytest

from conftest import random_rotation
from poseflow.errors import MalformedFile
from poseflow.flowfield import FlowField
from poseflow.geometry import Pose
from poseflow.io import (
    flo_bytes,
    load_flow,
    load_mask,
    load_obj,
    load_png,
    load_pose,
    load_poses,
    read_flo,
    read_pfh,
    save_flow,
    save_mask,
    save_obj,
    save_png,
    save_pose,
    save_poses,
    write_flo,
    write_pfh,
)
from poseflow.raster import make_cube

FLOW_3x2 = np.array([
    [[0.5, -1.0], [2.25, 0.0], [-3.5, 1.125]],
    [[1e-3, 7.0], [-0.25, -0.5], [100.0, -100.0]],
], dtype=np.float32)


def golden_flo():
    out = b"PIEH" + struct.pack("<i", 3) + struct.pack("<i", 2)
    for row in FLOW_3x2:
        for u, v in row:
            out += struct.pack("<f", u) + struct.pack("<f", v)
    return out


def test_flo_golden_bytes(tmp_path):
    assert flo_bytes(FLOW_3x2) == golden_flo()
    p = tmp_path / "a.flo"
    write_flo(p, FLOW_3x2)
    assert p.read_bytes() == golden_flo()
    np.testing.assert_array_equal(read_flo(p), FLOW_3x2)


def test_flo_malformed(tmp_path):
    p = tmp_path / "bad.flo"
    p.write_bytes(b"XXXX" + golden_flo()[4:])
    with pytest.raises(MalformedFile, match="offset 0"):
        read_flo(p)
    p.write_bytes(golden_flo()[:-3])
    with pytest.raises(MalformedFile):
        read_flo(p)
    p.write_bytes(b"PIE")
    with pytest.raises(MalformedFile):
        read_flo(p)


def test_flow_field_round_trip(tmp_path, rng):
    valid = rng.uniform(size=(5, 7)) > 0.3
    f = FlowField(rng.normal(size=(5, 7, 2)).astype(np.float32).astype(np.float64), valid)
    save_flow(tmp_path / "f.flo", f)
    g = load_flow(tmp_path / "f.flo")
    np.testing.assert_array_equal(g.valid, valid)
    np.testing.assert_array_equal(g.flow, f.flow)


def test_obj_round_trip(tmp_path):
    mesh = make_cube(0.37)
    save_obj(tmp_path / "c.obj", mesh)
    back = load_obj(tmp_path / "c.obj")
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)


def test_obj_quad_rejected(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MalformedFile):
        load_obj(p)


def test_obj_slash_and_negative_indices(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 -1//1\n")
    mesh = load_obj(p)
    np.testing.assert_array_equal(mesh.triangles, [[0, 1, 2]])


def test_pose_round_trip(tmp_path, rng):
    poses = [Pose(random_rotation(rng), rng.normal(size=3) + [0, 0, 3]) for _ in range(5)]
    save_pose(tmp_path / "p.json", poses[0])
    assert load_pose(tmp_path / "p.json").allclose(poses[0], atol=1e-12)
    save_poses(tmp_path / "p.jsonl", poses)
    for a, b in zip(load_poses(tmp_path / "p.jsonl"), poses):
        assert np.abs(a.R - b.R).max() < 1e-9 and np.abs(a.t - b.t).max() < 1e-9


def test_pose_reorthonormalized(tmp_path, rng):
    R = random_rotation(rng) + rng.normal(size=(3, 3)) * 1e-4
    (tmp_path / "p.json").write_text(f'{{"R": {R.tolist()}, "t": [0, 0, 2]}}')
    P = load_pose(tmp_path / "p.json")
    assert np.abs(P.R.T @ P.R - np.eye(3)).max() < 1e-9


def test_pose_bad_json(tmp_path):
    (tmp_path / "p.jsonl").write_text('{"R": [[1,0,0],[0,1,0],[0,0,1]], "t": [0,0,1]}\n{oops\n')
    with pytest.raises(MalformedFile, match="offset"):
        load_poses(tmp_path / "p.jsonl")


def test_pfh_round_trip(tmp_path, rng):
    d = rng.uniform(1, 5, size=(4, 6)).astype(np.float32)
    write_pfh(tmp_path / "d.pfh", d)
    assert (tmp_path / "d.pfh").read_bytes().startswith(b"PFH 6 4\n")
    np.testing.assert_array_equal(read_pfh(tmp_path / "d.pfh"), d)
    (tmp_path / "bad.pfh").write_bytes(b"PFH 6 4\n" + b"\0" * 5)
    with pytest.raises(MalformedFile):
        read_pfh(tmp_path / "bad.pfh")


def test_png_exact_for_uint8(tmp_path, rng):
    a = rng.integers(0, 256, size=(9, 11, 3), dtype=np.uint8)
    save_png(tmp_path / "a.png", a)
    np.testing.assert_array_equal(load_png(tmp_path / "a.png", as_float=False), a)
    np.testing.assert_array_equal(load_png(tmp_path / "a.png"), a / 255.0)
    m = rng.uniform(size=(9, 11)) > 0.5
    save_mask(tmp_path / "m.png", m)
    np.testing.assert_array_equal(load_mask(tmp_path / "m.png"), m)


def test_png_unreadable(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not a png")
    with pytest.raises(MalformedFile):
        load_png(tmp_path / "x.png")
