import json

import numpy as np
import pytest

from artikit.core.config import Config
from artikit.core.io import load_clip_bundle, read_depth, write_clip_bundle, write_depth
from artikit.core.types import (
    Articulation, CameraPose, ClipBundle, DepthMap, FingertipObservation, FrameRecord,
    Intrinsics, LineSegment2D, Mask, NormalSampleSet, PointCloud, canonical_sign,
)
from artikit.errors import BundleError, InvariantError, SchemaError

from conftest import random_rotation

INTR = Intrinsics(100.0, 100.0, 31.5, 23.5, 64, 48)


def tiny_bundle(n=10, with_cloud=True):
    rng = np.random.default_rng(0)
    frames = [FrameRecord(i, i / 30, DepthMap(rng.uniform(0.5, 2, (48, 64)).astype(np.float32)),
                          Mask(rng.integers(0, 2, (48, 64)).astype(np.uint8)))
              for i in range(n)]
    poses = [CameraPose(random_rotation(rng), rng.normal(size=3)) for _ in range(n)]
    tips = [FingertipObservation(i / 30, rng.normal(size=3), rng.normal(size=3),
                                 rng.normal(size=3), i % 3 != 0) for i in range(n - 2)]
    lines = [LineSegment2D((1.0, 2.0), (40.0, 30.0), 2, 7), LineSegment2D((5, 5), (5, 40), 3, None)]
    nv = rng.normal(size=(20, 3))
    normals = NormalSampleSet(nv / np.linalg.norm(nv, axis=1)[:, None], rng.integers(0, n, 20))
    cloud = PointCloud(rng.normal(size=(30, 3)), rng.integers(0, n, 30)) if with_cloud else None
    return ClipBundle("c1", INTR, frames, poses, tips, lines, normals, cloud,
                      {"clip_id": "c1", "votes": []}, "s1", "z")


def test_config_published_defaults():
    cfg = Config()
    assert cfg.voxel_size == 0.05
    assert cfg.max_radius == 1.0
    assert cfg.axis_angle_thresh == 15.0
    assert cfg.origin_dist_thresh == 0.25
    assert cfg.length_scale == 10.0 and cfg.process_noise == 0.01 and cfg.obs_noise == 0.05
    assert cfg.ransac_tol == pytest.approx(0.025)


def test_config_round_trip_and_unknown_fields(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"n_cand": 6, "seed": 3}))
    cfg = Config.from_json(p)
    assert cfg.n_cand == 6 and cfg.seed == 3 and cfg.voxel_size == 0.05
    with pytest.raises(SchemaError):
        Config.from_dict({"voxel": 1})
    with pytest.raises(SchemaError):
        Config(voxel_size=0)


def test_bundle_round_trip(tmp_path):
    b = tiny_bundle()
    write_clip_bundle(b, tmp_path / "c1")
    r = load_clip_bundle(tmp_path / "c1")
    assert r.n_frames == 10 and len(r.poses) == 10 and len(r.fingertips) <= 10
    for p, q in zip(b.poses, r.poses):
        np.testing.assert_array_equal(p.matrix(), q.matrix())
    for f, g in zip(b.frames, r.frames):
        np.testing.assert_array_equal(f.depth.values, g.depth.values)
        np.testing.assert_array_equal(f.mask.values, g.mask.values)
    np.testing.assert_array_equal(b.cloud.points, r.cloud.points)
    np.testing.assert_array_equal(b.normals.normals, r.normals.normals)
    assert [s.corr_id for s in r.lines] == [7, None]
    assert r.scene_id == "s1" and r.up_axis == "z" and r.reasoner == b.reasoner
    assert [o.contact for o in r.fingertips] == [o.contact for o in b.fingertips]


def test_missing_depth_file(tmp_path):
    write_clip_bundle(tiny_bundle(), tmp_path / "c1")
    (tmp_path / "c1" / "depth" / "000003.bin").unlink()
    with pytest.raises(BundleError, match="missing file"):
        load_clip_bundle(tmp_path / "c1")


def test_missing_manifest(tmp_path):
    with pytest.raises(BundleError, match="missing file"):
        load_clip_bundle(tmp_path)


def test_reflection_pose_rejected(tmp_path):
    write_clip_bundle(tiny_bundle(), tmp_path / "c1")
    doc = json.loads((tmp_path / "c1" / "poses.json").read_text())
    m = np.array(doc["poses"][4]).reshape(4, 4)
    m[:3, 0] *= -1
    doc["poses"][4] = m.ravel().tolist()
    (tmp_path / "c1" / "poses.json").write_text(json.dumps(doc))
    with pytest.raises(InvariantError, match="invariant violation: rotation"):
        load_clip_bundle(tmp_path / "c1")


def test_pose_validation_and_repair():
    with pytest.raises(InvariantError, match="rotation"):
        CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(InvariantError):
        CameraPose(2 * np.eye(3), np.zeros(3))
    R = np.eye(3) + 1e-4 * np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0]])
    p = CameraPose(R, np.zeros(3))
    np.testing.assert_allclose(p.rotation.T @ p.rotation, np.eye(3), atol=1e-12)


def test_pose_algebra(rng):
    a = CameraPose(random_rotation(rng), rng.normal(size=3))
    b = CameraPose(random_rotation(rng), rng.normal(size=3))
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(a.compose(b).to_world(x), a.to_world(b.to_world(x)), atol=1e-12)
    np.testing.assert_allclose(a.inverse().to_world(a.to_world(x)), x, atol=1e-12)
    np.testing.assert_allclose(a.to_camera(a.to_world(x)), x, atol=1e-12)


def test_unprojection_examples():
    intr = Intrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    pose = CameraPose.identity()
    np.testing.assert_allclose(pose.to_world(intr.unproject([[320, 240]], [2.0]))[0], [0, 0, 2])
    cam = intr.unproject([[820, 240]], [1.0])
    np.testing.assert_allclose(pose.to_world(cam)[0], [1, 0, 1])
    shifted = CameraPose(np.eye(3), [0.0, 0.0, -1.0])
    np.testing.assert_allclose(shifted.to_world(cam)[0], [1, 0, 0])


def test_invariants():
    with pytest.raises(InvariantError):
        Articulation("revolute", [1.0, 1.0, 0.0], [0, 0, 0])
    with pytest.raises(ValueError):
        Articulation("twist", [1.0, 0.0, 0.0], [0, 0, 0])
    with pytest.raises(InvariantError):
        FingertipObservation(0.0, (np.nan, 0, 0), (0, 0, 0), (0, 0, 0), True)
    with pytest.raises(InvariantError):
        PointCloud(np.zeros((3, 3)), [0, 1])
    with pytest.raises(InvariantError):
        Intrinsics(100, 100, 70, 10, 64, 48)
    b = tiny_bundle()
    with pytest.raises(InvariantError):
        ClipBundle("x", INTR, b.frames, b.poses[:-1], b.fingertips)
    with pytest.raises(InvariantError):
        ClipBundle("x", INTR, b.frames, b.poses, b.fingertips,
                   [LineSegment2D((0, 0), (5, 5), 10, None)])


def test_depth_io_round_trip(tmp_path):
    d = DepthMap(np.array([[0.0, 1.5], [np.nan, 2.25]], dtype=np.float32))
    write_depth(tmp_path / "d.bin", d)
    r = read_depth(tmp_path / "d.bin")
    np.testing.assert_array_equal(r.values, d.values)


def test_canonical_sign():
    np.testing.assert_array_equal(canonical_sign([0.0, -1.0, 2.0]), [0.0, 1.0, -2.0])
    np.testing.assert_array_equal(canonical_sign([1.0, -1.0, 0.0]), [1.0, -1.0, 0.0])


def test_articulation_dict_round_trip():
    a = Articulation("prismatic", [0.0, 0.6, 0.8], [1, 2, 3])
    b = Articulation.from_dict(json.loads(json.dumps(a.to_dict())))
    assert b.motion_type is a.motion_type
    np.testing.assert_array_equal(b.axis, a.axis)
