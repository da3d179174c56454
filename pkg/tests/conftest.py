import numpy as np
import pytest

from artikit.core.io import dump_json, write_clip_bundle
from artikit.evaluation import dump_ground_truth
from artikit.synth import gen_dataset


def write_dataset(root, data):
    for bundle, _ in data:
        write_clip_bundle(bundle, root / bundle.clip_id)
    dump_json(dump_ground_truth([g for _, g in data]), root / "gt.json")
    return root


@pytest.fixture(scope="session")
def mixed_data():
    """Six clips, three scenes of two clips, alternating revolute and prismatic."""
    return gen_dataset(6, "mixed", seed=11, clips_per_scene=2)


@pytest.fixture(scope="session")
def mixed_dir(tmp_path_factory, mixed_data):
    return write_dataset(tmp_path_factory.mktemp("mixed"), mixed_data)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def jitter(dirs, deg, rng):
    """Perturb unit vectors by tangent Gaussian noise with RMS angle ``deg``."""
    dirs = np.asarray(dirs, float)
    g = rng.normal(0, np.radians(deg) / np.sqrt(2), dirs.shape)
    g -= np.sum(g * dirs, axis=1)[:, None] * dirs
    out = dirs + g
    return out / np.linalg.norm(out, axis=1)[:, None]


def manhattan_scene(rng, n_frames=30, per_frame=60, jitter_deg=5.0, outlier_frac=0.2):
    """Camera-frame normals of a random world frame seen from random cameras.

    Returns ``(truth, poses, normals, frame_ids)`` with ``truth`` holding the
    world axes as rows.
    """
    from artikit.core.types import CameraPose

    truth = random_rotation(rng)
    poses, normals, frames = [], [], []
    for f in range(n_frames):
        pose = CameraPose(random_rotation(rng), rng.normal(size=3))
        n_out = int(round(outlier_frac * per_frame))
        labels = rng.integers(0, 3, per_frame - n_out)
        world = truth[labels] * rng.choice([-1.0, 1.0], (labels.size, 1))
        world = jitter(world, jitter_deg, rng)
        out = rng.normal(size=(n_out, 3))
        world = np.concatenate([world, out / np.linalg.norm(out, axis=1)[:, None]])
        normals.append(world @ pose.rotation)
        frames += [f] * per_frame
        poses.append(pose)
    return truth, poses, np.concatenate(normals), np.array(frames)


ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one acceptance criterion's outcome for the end-of-run summary."""

    def record(number, title, passed, detail):
        ACCEPTANCE[number] = (title, bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}: {title}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")
