import math

import numpy as np
import pytest

from artikit.core.types import Articulation
from artikit.errors import ArtikitError, SchemaError
from artikit.evaluation import (
    GroundTruthRecord, axis_threshold, dump_ground_truth, load_ground_truth, score_pair, score_run,
)
from artikit.core.io import dump_json

E = np.eye(3)


def _rot_z_tilt(deg):
    a = math.radians(deg)
    return np.array([math.sin(a), 0.0, math.cos(a)])


def gt(cid, mt="revolute", scene="s", axis=(0, 0, 1), origin=(0, 0, 0)):
    return GroundTruthRecord(cid, mt, np.asarray(axis, float), np.asarray(origin, float), scene)


def test_threshold_constant():
    assert axis_threshold(15) == pytest.approx(0.034074, abs=1e-6)
    assert axis_threshold(15) == pytest.approx(1 - math.cos(math.pi / 12), abs=1e-15)


def test_identical_pair():
    assert score_pair(Articulation("revolute", E[2], [0, 0, 0]), gt("a")) == \
        {"m": True, "ma": True, "mao": True}


@pytest.mark.parametrize("deg,ok", [(15.0, True), (15.1, False), (14.9, True), (165.0, True)])
def test_axis_boundary(deg, ok):
    s = score_pair(Articulation("revolute", _rot_z_tilt(deg), [0, 0, 0]), gt("a"))
    assert s["ma"] is ok


def test_origin_displacement():
    s = score_pair(Articulation("revolute", E[2], [0.3, 0, 0]), gt("a"))
    assert s == {"m": True, "ma": True, "mao": False}
    # displacement along the axis does not count
    assert score_pair(Articulation("revolute", E[2], [0, 0, 5.0]), gt("a"))["mao"]
    # prismatic origins are not scored
    assert score_pair(Articulation("prismatic", E[2], [3, 0, 0]), gt("a", "prismatic"))["mao"]


def test_nested_failure():
    s = score_pair(Articulation("revolute", E[0], [0, 0, 0]), gt("a"))
    assert s == {"m": True, "ma": False, "mao": False}
    assert score_pair(Articulation("prismatic", E[2], [0, 0, 0]), gt("a"))["m"] is False


def test_two_correct_scenes():
    gts = {"a": gt("a", scene="s1"), "b": gt("b", scene="s2")}
    preds = {k: Articulation("revolute", E[2], [0, 0, 0]) for k in gts}
    for micro in (False, True):
        r = score_run(preds, gts, micro=micro)
        assert all(r.overall[k] == 1.0 for k in ("m", "ma", "mao", "match"))


def test_partial_detection():
    gts = {"a": gt("a"), "b": gt("b")}
    r = score_run({"a": Articulation("revolute", E[2], [0, 0, 0]), "b": None}, gts)
    assert r.overall["match"] == 0.5
    assert r.overall["m_cond"] == 1.0 and r.overall["m"] == 0.5


def test_macro_vs_micro():
    gts = {"a": gt("a", scene="s1"), "b": gt("b", scene="s2"), "c": gt("c", scene="s2"),
           "d": gt("d", scene="s2")}
    good = Articulation("revolute", E[2], [0, 0, 0])
    preds = {"a": good, "b": None, "c": None, "d": None}
    assert score_run(preds, gts).overall["m"] == pytest.approx(0.5)
    assert score_run(preds, gts, micro=True).overall["m"] == pytest.approx(0.25)


def test_unknown_prediction_id():
    with pytest.raises(ArtikitError):
        score_run({"zz": None}, {"a": gt("a")})


def test_nesting_randomized():
    rng = np.random.default_rng(0)
    gts, preds = {}, {}
    for i in range(1000):
        a = rng.normal(size=3)
        g = gt(f"c{i}", rng.choice(["revolute", "prismatic"]), f"s{i % 7}", a / np.linalg.norm(a),
               rng.normal(size=3))
        b = g.axis + rng.normal(0, 0.3, 3)
        gts[g.clip_id] = g
        preds[g.clip_id] = None if rng.random() < 0.1 else Articulation(
            rng.choice(["revolute", "prismatic"]), b / np.linalg.norm(b),
            g.origin + rng.normal(0, 0.2, 3))
        if preds[g.clip_id] is not None:
            s = score_pair(preds[g.clip_id], g)
            assert s["mao"] <= s["ma"] <= s["m"]
    for micro in (False, True):
        o = score_run(preds, gts, micro=micro).overall
        assert o["mao"] <= o["ma"] <= o["m"]
        assert o["mao_cond"] <= o["ma_cond"] <= o["m_cond"]


def test_ground_truth_io(tmp_path):
    recs = [gt("b", origin=(1, 2, 3)), gt("a", "prismatic", axis=(1, 0, 0))]
    dump_json(dump_ground_truth(recs), tmp_path / "gt.json")
    back = load_ground_truth(tmp_path / "gt.json")
    assert sorted(back) == ["a", "b"]
    np.testing.assert_array_equal(back["b"].origin, [1, 2, 3])
    with pytest.raises(SchemaError):
        GroundTruthRecord.from_dict({"clip_id": "x"})
    with pytest.raises(ArtikitError):
        gt("x", axis=(1, 1, 0))


def test_report_table():
    r = score_run({"a": None}, {"a": gt("a")})
    text = r.table()
    assert "overall" in text and "MAO" in text
