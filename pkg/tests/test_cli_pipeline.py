import dataclasses
import filecmp
import json
import shutil

import numpy as np
import pytest
from click.testing import CliRunner

from artikit import pipeline
from artikit.cli import main
from artikit.core.config import Config
from artikit.core.io import write_clip_bundle
from artikit.core.types import FingertipObservation
from artikit.evaluation import axis_error, axis_threshold, origin_error, score_pair
from artikit.synth import gen_clip

STAGES = [["smooth"], ["localize"], ["lines"], ["manhattan"], ["prompts"], ["infer"],
          ["aggregate"], ["eval"]]


def invoke(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env, catch_exceptions=False)


def tree_equal(a, b, sub):
    cmp = filecmp.dircmp(a / sub, b / sub)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a / sub, b / sub, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(tree_equal(a, b, f"{sub}/{d}") for d in cmp.common_dirs)


def test_run_happy_path(mixed_dir, tmp_path):
    r = invoke("run", mixed_dir, "--out", tmp_path / "o")
    assert r.exit_code == 0, r.output
    assert len(list((tmp_path / "o" / "estimates").glob("*.json"))) == 6
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["overall"]["n_clips"] == 6
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert set(man["clips"].values()) == {"ok"}


def test_jobs_and_stages_byte_identical(mixed_dir, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert invoke("run", mixed_dir, "--out", a).exit_code == 0
    assert invoke("run", mixed_dir, "--out", b, "--jobs", 3).exit_code == 0
    for stage in STAGES:
        assert invoke(*stage, mixed_dir, "--out", c).exit_code == 0, stage
    for other in (b, c):
        for sub in ("estimates", "artifacts"):
            assert tree_equal(a, other, sub), (other, sub)
        for name in ("report.json", "report.txt", "scene.json"):
            assert filecmp.cmp(a / name, other / name, shallow=False), (other, name)


def test_stage_needs_previous_outputs(mixed_dir, tmp_path):
    r = invoke("infer", mixed_dir, "--out", tmp_path / "o")
    assert r.exit_code == 1
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert all(v.startswith("error:stage infer needs") for v in man["clips"].values())


def test_dry_run(mixed_dir, tmp_path):
    r = invoke("run", mixed_dir, "--out", tmp_path / "o", "--dry-run")
    assert r.exit_code == 0
    assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["manifest.json"]
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["dry_run"] and set(man["clips"].values()) == {"pending"}


def _dataset_with(tmp_path, mixed_dir, extra):
    data = tmp_path / "data"
    shutil.copytree(mixed_dir, data)
    write_clip_bundle(extra, data / extra.clip_id)
    return data


def test_no_contact_clip_isolated(mixed_dir, mixed_data, tmp_path):
    b = mixed_data[0][0]
    tips = [FingertipObservation(o.timestamp, o.thumb, o.index, o.middle, False) for o in b.fingertips]
    extra = dataclasses.replace(b, clip_id="zz_nocontact", fingertips=tips, scene_id="scene999")
    data = _dataset_with(tmp_path, mixed_dir, extra)
    r = invoke("run", data, "--out", tmp_path / "o", "--gt", mixed_dir / "gt.json")
    assert r.exit_code == 0, r.output
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["clips"]["zz_nocontact"] == "rejected:no-interaction"
    assert sum(v == "ok" for v in man["clips"].values()) == 6
    ref = tmp_path / "ref"
    invoke("run", mixed_dir, "--out", ref)
    for est in (ref / "estimates").iterdir():
        assert filecmp.cmp(est, tmp_path / "o" / "estimates" / est.name, shallow=False)


def test_corrupt_clip_errors_exit_1(mixed_dir, mixed_data, tmp_path):
    data = _dataset_with(tmp_path, mixed_dir, dataclasses.replace(mixed_data[1][0], clip_id="zz_bad"))
    (data / "zz_bad" / "poses.json").write_text("{not json")
    r = invoke("run", data, "--out", tmp_path / "o", "--gt", mixed_dir / "gt.json")
    assert r.exit_code == 1
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["clips"]["zz_bad"].startswith("error:")
    assert sum(v == "ok" for v in man["clips"].values()) == 6


def test_invalid_inputs_exit_2(mixed_dir, tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"voxel": 1}))
    assert invoke("run", mixed_dir, "--out", tmp_path / "o", "--config", bad).exit_code == 2
    assert invoke("run", "--out", tmp_path / "o").exit_code == 2
    assert invoke("run", mixed_dir, "--out", tmp_path / "o",
                  env={"ARTIKIT_SEED": "x"}).exit_code == 2
    rs = tmp_path / "r.json"
    rs.write_text(json.dumps({"clip_id": "c", "votes": [{"frame": 0, "motion": "spin"}]}))
    assert invoke("infer", mixed_dir, "--out", tmp_path / "o", "--reasoner", rs).exit_code == 2


def test_bundle_alias_and_seed_env(mixed_dir, tmp_path):
    r = invoke("smooth", "--bundle", mixed_dir / "clip0000", "--out", tmp_path / "o",
               env={"ARTIKIT_SEED": "7"})
    assert r.exit_code == 0, r.output
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert list(man["clips"]) == ["clip0000"] and man["config"]["seed"] == 7


def test_injected_reasoner_overrides_heuristic(mixed_dir, tmp_path):
    rs = tmp_path / "r.json"
    rs.write_text(json.dumps([{"clip_id": "clip0000", "votes": [{"frame": 0, "motion": "unknown"}]}]))
    r = invoke("run", mixed_dir, "--out", tmp_path / "o", "--reasoner", rs)
    assert r.exit_code == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["clips"]["clip0000"] == "rejected:motion-type-unresolved"


def test_synth_command(tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"n_clips": 2, "kind": "prismatic", "seed": 5, "extent_range": [0.2, 0.3]}))
    r = invoke("synth", "--spec", spec, "--out", tmp_path / "d", "--jobs", 2)
    assert r.exit_code == 0, r.output
    assert (tmp_path / "d" / "clip0001" / "manifest.json").is_file()
    spec.write_text(json.dumps({"n_clips": 2, "wobble": 1}))
    assert invoke("synth", "--spec", spec, "--out", tmp_path / "e").exit_code == 2


@pytest.mark.parametrize("kind", ["revolute", "prismatic"])
def test_in_memory_clip_estimates(kind):
    cfg = Config()
    data = [gen_clip(i, kind, seed=21) for i in range(2)]
    arts = pipeline.run_clips([b for b, _ in data], cfg)
    for art, (_, gt) in zip(arts, data):
        assert art.status == "ok"
        pred = art.estimate.articulation
        assert axis_error(pred.axis, gt.axis) <= axis_threshold(15)
        assert score_pair(pred, gt, cfg)["mao"]
        if kind == "revolute":
            assert origin_error(pred.origin, gt) <= 0.25


def test_scope_scene_shares_frames_clip_does_not(mixed_data, mixed_dir, tmp_path):
    scene_of = {b.clip_id: b.scene_id for b, _ in mixed_data}
    out = {}
    for scope in ("scene", "clip"):
        r = invoke("run", mixed_dir, "--out", tmp_path / scope, "--scope", scope)
        assert r.exit_code == 0, r.output
        out[scope] = {d.name: (d / "frame.json").read_bytes()
                      for d in sorted((tmp_path / scope / "artifacts").iterdir())}
    pairs = {}
    for cid, sid in scene_of.items():
        pairs.setdefault(sid, []).append(cid)
    for members in pairs.values():
        assert len({out["scene"][c] for c in members}) == 1
    assert any(len({out["clip"][c] for c in members}) > 1 for members in pairs.values())


def test_plot_writes_obj_polylines(mixed_dir, tmp_path):
    r = invoke("run", mixed_dir, "--out", tmp_path / "o", "--plot")
    assert r.exit_code == 0, r.output
    objs = sorted((tmp_path / "o" / "plots").glob("*.obj"))
    assert len(objs) == 6
    lines = objs[0].read_text().splitlines()
    verts = [l for l in lines if l.startswith("v ")]
    polys = [l for l in lines if l.startswith("l ")]
    assert len(polys) == 2
    # the last polyline is the two-vertex axis segment
    assert polys[-1] == f"l {len(verts) - 1} {len(verts)}"
