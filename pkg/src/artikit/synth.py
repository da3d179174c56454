"""Synthetic interaction clips with exact ground truth.

A clip lives in a box-shaped room (room frame: z up, floor at z = 0).  The
articulated fixture sits on the wall ``x = width``: a door leaf hinged about
a vertical edge (revolute) or a drawer pulled out along the wall normal
(prismatic).  The whole room is then placed in the world by a random rigid
motion, so nothing downstream can rely on axis-aligned geometry.

Depth maps are rendered analytically by ray/box intersection and show the
static scene with the fixture closed, which is what a reconstruction of the
room would give.  2D line segments are exact projections of fixture and room
edges carrying correspondence ids; masks are the projected fixture face
dilated by two pixels.

Seeds: clip ``i`` of a dataset with seed ``s`` draws its scene from
``SeedSequence([s, scene, 0])`` and its own noise from
``SeedSequence([s, scene, 1, i])``, so clips are reproducible one by one.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from . import kernels
from .core.types import (CameraPose, ClipBundle, DepthMap, FingertipObservation, FrameRecord,
                         Intrinsics, LineSegment2D, Mask, MotionType, NormalSampleSet, PointCloud)
from .errors import ArtikitError
from .evaluation import GroundTruthRecord
from .lines3d import Line3D

ROOM = (4.0, 5.0, 2.6)
HAND_OFFSET = 0.03
REVOLUTE_SPEED = 0.1
PRISMATIC_SPEED = 0.15
# correspondence ids: fixture edges first, then room edges
HINGE_ID, FREE_ID, TOP_ID, BOTTOM_ID = 0, 1, 2, 3
ROOM_EDGE_BASE = 10


@dataclass(frozen=True)
class SyntheticSpec:
    """Generation parameters; ``None`` fields are drawn from their ranges."""

    seed: int = 0
    kind: str = "revolute"
    radius: float | None = None
    radius_range: tuple = (0.2, 0.6)
    arc_deg: float | None = None
    arc_range: tuple = (45.0, 100.0)
    extent: float | None = None
    extent_range: tuple = (0.15, 0.4)
    traj_noise: float = 0.02
    depth_noise: float = 0.002
    normal_jitter_deg: float = 5.0
    normal_outlier_frac: float = 0.2
    normals_per_frame: int = 60
    fps: float = 30.0
    n_depth_views: int = 14
    n_distractors: int = 3
    approach_frames: int = 8
    drop_frac: float = 0.05
    image_size: tuple = (240, 180)
    focal: float = 200.0
    orbit_radius: float = 1.5
    camera_height: float = 1.5
    max_radius: float = 1.0
    world_transform: bool = True

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ArtikitError(f"unknown fixture kind {self.kind!r}")
        for name in ("traj_noise", "depth_noise", "normal_jitter_deg", "normal_outlier_frac",
                     "drop_frac"):
            if getattr(self, name) < 0:
                raise ArtikitError(f"{name} must be non-negative")
        if self.radius is not None and not 0 < self.radius <= self.max_radius:
            raise ArtikitError("radius must lie in (0, max_radius]")
        if self.radius is not None and self.radius <= HAND_OFFSET:
            raise ArtikitError(f"radius must exceed the hand offset {HAND_OFFSET}")
        if not 0 < self.radius_range[0] <= self.radius_range[1] <= self.max_radius:
            raise ArtikitError("radius_range must lie in (0, max_radius]")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


# geometry helpers -----------------------------------------------------------

def look_at(center, target, up=(0.0, 0.0, 1.0)):
    """Camera-to-world pose (x right, y down, z forward) looking at ``target``."""
    f = np.asarray(target, float) - np.asarray(center, float)
    f /= np.linalg.norm(f)
    r = np.cross(f, up)
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    return CameraPose(np.column_stack([r, d, f]), center)


def render_box_depth(pose: CameraPose, intr: Intrinsics, room=ROOM):
    """Exact depth of the inside of an axis-aligned box seen from within it."""
    u, v = np.meshgrid(np.arange(intr.width, dtype=np.float64),
                       np.arange(intr.height, dtype=np.float64))
    rays = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
    dirs = rays @ pose.rotation.T
    c = pose.translation
    hi = np.asarray(room, float)
    t = np.full(u.shape, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(3):
            dk = dirs[..., k]
            tk = np.where(dk > 0, (hi[k] - c[k]) / dk, np.where(dk < 0, -c[k] / dk, np.inf))
            t = np.minimum(t, tk)
    # rays have unit z in the camera frame, so the ray parameter is the depth
    return t


def _visible_run(P, pose, intr, near=0.1, margin=1.0):
    """Longest run of 3D samples projecting inside the image (shrunk by ``margin``)."""
    uv, z = intr.project(pose.to_camera(P))
    ok = ((z > near) & (uv[:, 0] >= margin) & (uv[:, 0] <= intr.width - 1 - margin)
          & (uv[:, 1] >= margin) & (uv[:, 1] <= intr.height - 1 - margin))
    if not ok.any():
        return None
    padded = np.concatenate([[False], ok, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    starts, stops = edges[::2], edges[1::2]
    k = int(np.argmax(stops - starts))
    return uv[starts[k]:stops[k]]


def project_segment(a, b, pose, intr, frame, corr_id, min_px=10.0, samples=400):
    P = np.asarray(a, float) + np.linspace(0, 1, samples)[:, None] * (np.asarray(b, float) - a)
    uv = _visible_run(P, pose, intr)
    if uv is None or np.linalg.norm(uv[-1] - uv[0]) < min_px:
        return None
    return LineSegment2D(tuple(uv[0]), tuple(uv[-1]), frame, corr_id)


def rect_mask(pose, intr, x_wall, y_lo, y_hi, z_lo, z_hi, dilate=2):
    """Pixels whose ray meets the wall ``x = x_wall`` inside the rectangle, dilated."""
    u, v = np.meshgrid(np.arange(intr.width, dtype=np.float64),
                       np.arange(intr.height, dtype=np.float64))
    rays = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
    dirs = rays @ pose.rotation.T
    c = pose.translation
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (x_wall - c[0]) / dirs[..., 0]
    hit = c + t[..., None] * dirs
    m = ((t > 0) & (hit[..., 1] >= y_lo) & (hit[..., 1] <= y_hi)
         & (hit[..., 2] >= z_lo) & (hit[..., 2] <= z_hi))
    if dilate:
        m = ndimage.binary_dilation(m, structure=np.ones((2 * dilate + 1,) * 2, bool))
    return m


def _jitter_unit(v, sigma_rad, rng):
    out = v + rng.normal(0.0, sigma_rad / math.sqrt(2.0), size=v.shape)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def _random_world(rng, enabled):
    if not enabled:
        return np.eye(3), np.zeros(3)
    R = Rotation.random(random_state=np.random.default_rng(rng.integers(2**32))).as_matrix()
    return R, rng.uniform(-2.0, 2.0, size=3)


# fixture motion -------------------------------------------------------------

@dataclass(frozen=True)
class _Layout:
    kind: str
    y_center: float
    z_lo: float
    z_hi: float
    y_lo: float
    y_hi: float
    side: int
    radius: float
    arc: float
    extent: float
    contact_height: float

    @property
    def hinge_y(self):
        return self.y_center - self.side * (self.y_hi - self.y_lo) / 2

    @property
    def face_center(self):
        return np.array([ROOM[0], self.y_center, 0.5 * (self.z_lo + self.z_hi)])


def _draw_layout(spec: SyntheticSpec, rng) -> _Layout:
    y_center = rng.uniform(1.6, ROOM[1] - 1.6)
    if spec.kind == "revolute":
        r = spec.radius if spec.radius is not None else rng.uniform(*spec.radius_range)
        arc = math.radians(spec.arc_deg if spec.arc_deg is not None else rng.uniform(*spec.arc_range))
        width = r + 0.06
        height = rng.uniform(0.6, 1.2)
        z_lo = rng.uniform(0.3, 2.2 - height)
        side = 1 if rng.random() < 0.5 else -1
        zc = z_lo + rng.uniform(0.35, 0.65) * height
        return _Layout("revolute", y_center, z_lo, z_lo + height, y_center - width / 2,
                       y_center + width / 2, side, r, arc, 0.0, zc)
    e = spec.extent if spec.extent is not None else rng.uniform(*spec.extent_range)
    width = rng.uniform(0.4, 0.8)
    height = rng.uniform(0.15, 0.3)
    z_lo = rng.uniform(0.4, 1.2)
    return _Layout("prismatic", y_center, z_lo, z_lo + height, y_center - width / 2,
                   y_center + width / 2, 1, 0.0, 0.0, e, z_lo + height / 2)


def _contact_path(lay: _Layout, s):
    """Contact points for normalized progress ``s`` in [0, 1] (room frame)."""
    s = np.asarray(s, dtype=np.float64)
    if lay.kind == "revolute":
        # hand rests HAND_OFFSET in front of the leaf; its hinge distance is the radius
        along = math.sqrt(lay.radius**2 - HAND_OFFSET**2)
        phi = lay.side * lay.arc * s
        local = np.array([-HAND_OFFSET, lay.side * along])
        c, si = np.cos(phi), np.sin(phi)
        x = c * local[0] - si * local[1]
        y = si * local[0] + c * local[1]
        return np.column_stack([ROOM[0] + x, lay.hinge_y + y, np.full(s.shape, lay.contact_height)])
    x = ROOM[0] - HAND_OFFSET - lay.extent * s
    return np.column_stack([x, np.full(s.shape, lay.y_center), np.full(s.shape, lay.contact_height)])


def _fixture_points(lay: _Layout, s, n, rng):
    """Random points on the moving face at progress ``s``."""
    a = rng.uniform(0, 1, n)
    z = rng.uniform(lay.z_lo, lay.z_hi, n)
    if lay.kind == "revolute":
        width = lay.y_hi - lay.y_lo
        phi = lay.side * lay.arc * s
        along = lay.side * a * width
        return np.column_stack([ROOM[0] - math.sin(phi) * along,
                                lay.hinge_y + math.cos(phi) * along, z])
    y = lay.y_lo + a * (lay.y_hi - lay.y_lo)
    return np.column_stack([np.full(n, ROOM[0] - lay.extent * s), y, z])


def _edges(lay: _Layout, n_distractors):
    W, D, H = ROOM
    x = W
    hy, fy = lay.hinge_y, lay.y_center + lay.side * (lay.y_hi - lay.y_lo) / 2
    fixture = [
        (HINGE_ID, (x, hy, lay.z_lo), (x, hy, lay.z_hi)),
        (FREE_ID, (x, fy, lay.z_lo), (x, fy, lay.z_hi)),
        (TOP_ID, (x, lay.y_lo, lay.z_hi), (x, lay.y_hi, lay.z_hi)),
        (BOTTOM_ID, (x, lay.y_lo, lay.z_lo), (x, lay.y_hi, lay.z_lo)),
    ]
    room = [
        ((x, 0.0, 0.0), (x, 0.0, H)),
        ((x, D, 0.0), (x, D, H)),
        ((x, 0.0, 0.0), (x, D, 0.0)),
        ((x, 0.0, H), (x, D, H)),
        ((x, 0.0, 0.0), (0.0, 0.0, 0.0)),
        ((x, D, 0.0), (0.0, D, 0.0)),
    ]
    out = [(cid, np.array(a), np.array(b)) for cid, a, b in fixture]
    for k, (a, b) in enumerate(room[:n_distractors]):
        out.append((ROOM_EDGE_BASE + k, np.array(a), np.array(b)))
    return out


# clip generation ------------------------------------------------------------

def _generate(spec: SyntheticSpec, clip_id, scene_id, scene_rng, clip_rng):
    lay = _draw_layout(spec, scene_rng)
    R_w, t_w = _random_world(scene_rng, spec.world_transform)
    rng = clip_rng
    fps = spec.fps
    path_len = lay.radius * lay.arc if lay.kind == "revolute" else lay.extent
    if lay.kind == "revolute":
        duration = float(np.clip(path_len / REVOLUTE_SPEED, 3.0, 4.0))
    else:
        duration = float(np.clip(path_len / PRISMATIC_SPEED, 1.0, 3.0))
    n_contact = int(round(duration * fps)) + 1
    n_app = spec.approach_frames
    n = n_contact + 2 * n_app
    ts = np.arange(n) / fps
    s = np.concatenate([np.zeros(n_app), np.linspace(0, 1, n_contact), np.ones(n_app)])
    contact = np.zeros(n, dtype=bool)
    contact[n_app:n_app + n_contact] = True
    path = _contact_path(lay, s)
    # approach and retreat: the hand drifts in from / out to 0.15 m off the wall
    ramp = np.concatenate([np.linspace(0.15, 0.02, n_app), np.zeros(n_contact),
                           np.linspace(0.02, 0.15, n_app)])
    path = path - ramp[:, None] * np.array([1.0, 0.0, 0.0])
    noisy = path + rng.normal(0.0, spec.traj_noise, size=path.shape)

    keep = np.ones(n, dtype=bool)
    inner = np.arange(n_app + 1, n_app + n_contact - 1)
    n_drop = int(round(spec.drop_frac * inner.size))
    if n_drop:
        keep[rng.choice(inner, n_drop, replace=False)] = False

    # cameras orbit the fixture face at a fixed height
    W, H = spec.image_size
    intr = Intrinsics(spec.focal, spec.focal, float(W // 2), float(H // 2), W, H)
    target = lay.face_center
    psi0 = rng.uniform(-0.6, -0.2)
    psi1 = rng.uniform(0.2, 0.6)
    if rng.random() < 0.5:
        psi0, psi1 = psi1, psi0
    psi = np.linspace(psi0, psi1, n)
    poses_room = []
    for k in range(n):
        cen = np.array([ROOM[0] - spec.orbit_radius * math.cos(psi[k]),
                        target[1] + spec.orbit_radius * math.sin(psi[k]), spec.camera_height])
        cen = cen + rng.normal(0.0, 0.01, 3)
        poses_room.append(look_at(cen, target + rng.normal(0.0, 0.02, 3)))

    depth_idx = sorted(set(np.round(np.linspace(0, n - 1, spec.n_depth_views)).astype(int).tolist()))
    edges = _edges(lay, spec.n_distractors)
    frames, segments = [], []
    normals, normal_frames = [], []
    room_normals = np.eye(3)
    jitter = math.radians(spec.normal_jitter_deg)
    for k in range(n):
        depth = mask = None
        if k in depth_idx:
            pose = poses_room[k]
            d = render_box_depth(pose, intr)
            if spec.depth_noise:
                d = d + rng.normal(0.0, spec.depth_noise, d.shape)
            depth = DepthMap(d.astype(np.float32))
            mask = Mask(rect_mask(pose, intr, ROOM[0], lay.y_lo, lay.y_hi, lay.z_lo, lay.z_hi))
            for cid, a, b in edges:
                seg = project_segment(a, b, pose, intr, k, cid)
                if seg is not None:
                    segments.append(seg)
            m = spec.normals_per_frame
            labels = rng.choice(3, size=m, p=[0.4, 0.3, 0.3])
            v = room_normals[labels] * rng.choice([-1.0, 1.0], size=(m, 1))
            v = _jitter_unit(v, jitter, rng)
            out = rng.random(m) < spec.normal_outlier_frac
            if out.any():
                w = rng.normal(size=(int(out.sum()), 3))
                v[out] = w / np.linalg.norm(w, axis=1, keepdims=True)
            normals.append(v @ pose.rotation)  # room -> camera frame
            normal_frames += [k] * m
        frames.append(FrameRecord(k, float(ts[k]), depth, mask))

    # cloud: fixture face per contact frame plus sparse room clutter
    cloud_pts, cloud_ids = [], []
    for k in range(n):
        if contact[k]:
            p = _fixture_points(lay, s[k], 250, rng)
            cloud_pts.append(p)
            cloud_ids += [k] * len(p)
        clutter = rng.uniform(0, 1, (10, 3)) * np.asarray(ROOM)
        cloud_pts.append(clutter)
        cloud_ids += [k] * 10
    cloud_room = np.concatenate(cloud_pts)

    # fingertips: three tips around the noisy contact point, offsets sum to zero
    tips = []
    for k in np.flatnonzero(keep):
        off = rng.normal(0.0, 0.015, (3, 3))
        off -= off.mean(axis=0)
        tips.append((k, noisy[k] + off))

    # place the room in the world
    def to_world(P):
        return np.asarray(P) @ R_w.T + t_w

    world = CameraPose(R_w, t_w)
    poses = tuple(world.compose(p) for p in poses_room)
    fingertips = tuple(FingertipObservation(float(ts[k]), *to_world(t), bool(contact[k]))
                       for k, t in tips)
    cloud = PointCloud(to_world(cloud_room), cloud_ids)
    nset = NormalSampleSet(np.concatenate(normals) if normals else np.zeros((0, 3)),
                           normal_frames)

    label = "rotation" if lay.kind == "revolute" else "translation"
    furniture = "cabinet" if lay.kind == "revolute" else "drawer"
    contact_frames = np.flatnonzero(contact)
    slots = contact_frames[np.round(np.linspace(0, contact_frames.size - 1, 10)).astype(int)]
    reasoner = {"clip_id": clip_id,
                "votes": [{"frame": int(f), "furniture": furniture, "motion": label}
                          for f in sorted(set(slots.tolist()))]}
    bundle = ClipBundle(clip_id, intr, tuple(frames), poses, fingertips, tuple(segments), nset,
                        cloud, reasoner, scene_id, None)

    if lay.kind == "revolute":
        axis_room = np.array([0.0, 0.0, 1.0])
        origin_room = np.array([ROOM[0], lay.hinge_y, lay.contact_height])
        mtype = MotionType.REVOLUTE
    else:
        axis_room = np.array([-1.0, 0.0, 0.0])
        origin_room = path[n_app]
        mtype = MotionType.PRISMATIC
    gt = GroundTruthRecord(clip_id, mtype, R_w @ axis_room, to_world(origin_room[None])[0],
                           scene_id)
    return bundle, gt


def _rngs(seed, scene, clip):
    scene_rng = np.random.default_rng(np.random.SeedSequence([seed, scene, 0]))
    clip_rng = np.random.default_rng(np.random.SeedSequence([seed, scene, 1, clip]))
    return scene_rng, clip_rng


def gen_revolute_clip(spec: SyntheticSpec, clip_id="rev0000", scene_id=None, scene=0, clip=0):
    """One door-opening clip; returns ``(ClipBundle, GroundTruthRecord)``."""
    spec = spec if spec.kind == "revolute" else spec.replace(kind="revolute")
    return _generate(spec, clip_id, scene_id or clip_id, *_rngs(spec.seed, scene, clip))


def gen_prismatic_clip(spec: SyntheticSpec, clip_id="pri0000", scene_id=None, scene=0, clip=0):
    """One drawer-pulling clip; returns ``(ClipBundle, GroundTruthRecord)``."""
    spec = spec if spec.kind == "prismatic" else spec.replace(kind="prismatic")
    return _generate(spec, clip_id, scene_id or clip_id, *_rngs(spec.seed, scene, clip))


def gen_clip(i, kind="revolute", seed=0, clips_per_scene=1, **overrides):
    """Clip ``i`` of the dataset :func:`gen_dataset` would build."""
    scene, within = divmod(i, clips_per_scene)
    k = kind if kind != "mixed" else ("revolute", "prismatic")[scene % 2]
    spec = SyntheticSpec(seed=seed, kind=k, **overrides)
    if k == "prismatic" and "traj_noise" not in overrides:
        spec = spec.replace(traj_noise=0.01)
    return _generate(spec, f"clip{i:04d}", f"scene{scene:03d}", *_rngs(seed, scene, within))


def gen_dataset(n_clips, kind="revolute", seed=0, clips_per_scene=1, **overrides):
    """Clips ``clip0000 ...``; consecutive clips share a scene ``clips_per_scene`` at a time.

    ``kind`` is ``revolute``, ``prismatic`` or ``mixed`` (alternating by scene).
    Clips of one scene share room layout, fixture and world placement.
    """
    if kind not in ("revolute", "prismatic", "mixed"):
        raise ArtikitError(f"unknown dataset kind {kind!r}")
    if clips_per_scene < 1:
        raise ArtikitError("clips_per_scene must be at least 1")
    return [gen_clip(i, kind, seed, clips_per_scene, **overrides) for i in range(n_clips)]


def transform_bundle(bundle: ClipBundle, R, t) -> ClipBundle:
    """Apply the rigid motion ``x -> R x + t`` to every world-frame quantity."""
    M = CameraPose(R, t)
    poses = tuple(M.compose(p) for p in bundle.poses)
    tips = tuple(FingertipObservation(o.timestamp, o.thumb @ R.T + t, o.index @ R.T + t,
                                      o.middle @ R.T + t, o.contact) for o in bundle.fingertips)
    cloud = None if bundle.cloud is None else PointCloud(bundle.cloud.points @ R.T + t,
                                                         bundle.cloud.frame_ids)
    return dataclasses.replace(bundle, poses=poses, fingertips=tips, cloud=cloud)


# brute-force oracle ---------------------------------------------------------

@dataclass(frozen=True)
class BruteForceResult:
    line: Line3D
    objective: float
    ill_conditioned: bool
    n_directions: int
    n_offsets: int


def hemisphere_grid(step_deg):
    """Unit directions covering the upper hemisphere at roughly ``step_deg`` spacing.

    Rings of constant polar angle every ``step_deg``; on each ring the
    azimuth spacing is at most ``step_deg`` of arc.  The equator ring spans
    only half a turn since axes are sign-free.  Every direction lies within
    about ``step_deg / sqrt(2)`` of a grid direction.
    """
    step = math.radians(step_deg)
    n_rings = int(math.floor(math.pi / 2 / step + 1e-9))
    dirs = [np.array([0.0, 0.0, 1.0])]
    for i in range(1, n_rings + 1):
        th = i * step
        equator = abs(th - math.pi / 2) < 1e-9
        span = math.pi if equator else 2 * math.pi
        m = max(1, int(math.ceil(span * math.sin(th) / step)))
        for j in range(m):
            ph = span * j / m
            dirs.append(np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph),
                                  math.cos(th)]))
    if n_rings * step < math.pi / 2 - 1e-9:
        th = math.pi / 2
        m = max(1, int(math.ceil(math.pi / step)))
        for j in range(m):
            ph = math.pi * j / m
            dirs.append(np.array([math.cos(ph), math.sin(ph), 0.0]))
    return np.array(dirs)


def _plane_basis(u):
    a = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u, a)
    e1 /= np.linalg.norm(e1)
    return np.stack([e1, np.cross(u, e1)])


def brute_force_axis(points, dir_step_deg=5.0, pos_step=0.05, max_radius=1.0):
    """Exhaustive minimum of the radius variance over a direction/offset grid.

    Offsets form a square grid of spacing ``pos_step`` covering a disk of
    radius ``max_radius`` around the centroid, in the plane normal to each
    direction.
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if P.shape[0] < 3:
        raise ArtikitError("brute_force_axis needs at least 3 points")
    if dir_step_deg <= 0 or pos_step <= 0:
        raise ArtikitError("grid steps must be positive")
    c = P.mean(axis=0)
    X = np.ascontiguousarray(P - c)
    dirs = hemisphere_grid(dir_step_deg)
    bases = np.ascontiguousarray(np.stack([_plane_basis(u) for u in dirs]))
    k = int(math.ceil(max_radius / pos_step))
    g = np.arange(-k, k + 1) * pos_step
    A, B = np.meshgrid(g, g, indexing="ij")
    offs = np.column_stack([A.ravel(), B.ravel()])
    offs = np.ascontiguousarray(offs[np.hypot(offs[:, 0], offs[:, 1]) <= max_radius + 1e-12])
    vals, idx = kernels.radius_variance_search(X, bases, offs)
    d = int(np.argmin(vals))
    u = dirs[d]
    origin = c + offs[idx[d]] @ bases[d]
    s = np.linalg.svd(X, compute_uv=False)
    ill = bool(s[1] <= 1e-6 * s[0])
    dist = np.linalg.norm(np.cross(P - origin, u), axis=1)
    t = (P - origin) @ u
    line = Line3D(u, origin, P.shape[0], 1.0, float(t.max() - t.min()), float(dist.std()),
                  (float(t.min()), float(t.max())))
    return BruteForceResult(line, float(vals[d]), ill, len(dirs), len(offs))


def grid_slack(points, line, objective, dir_step_deg=5.0, pos_step=0.05):
    """Bound on how far the grid optimum can sit above the continuous optimum.

    Moving an axis by at most ``pos_step / sqrt(2)`` and tilting it by at
    most ``theta = dir_step / sqrt(2)`` changes every point's radius by at
    most ``delta = pos_step / sqrt(2) + r_max (1 - cos theta) + h sin theta``
    (``h``: extent of the points along the axis).  The standard deviation is
    1-Lipschitz in the sup norm, so the variance moves by at most
    ``2 sigma delta + delta^2``.
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    u = np.asarray(line.direction, dtype=np.float64)
    q = np.asarray(line.origin, dtype=np.float64)
    c = q + ((P.mean(axis=0) - q) @ u) * u
    d = np.linalg.norm(np.cross(P - q, u), axis=1)
    h = float(np.abs((P - c) @ u).max())
    theta = math.radians(dir_step_deg) / math.sqrt(2.0)
    delta = pos_step / math.sqrt(2.0) + float(d.max()) * (1 - math.cos(theta)) + h * math.sin(theta)
    sigma = math.sqrt(max(objective, 0.0))
    return 2 * sigma * delta + delta * delta


__all__ = [
    "BruteForceResult", "SyntheticSpec", "brute_force_axis", "gen_clip", "gen_dataset",
    "gen_prismatic_clip", "gen_revolute_clip", "grid_slack", "hemisphere_grid", "look_at",
    "render_box_depth", "transform_bundle",
]
