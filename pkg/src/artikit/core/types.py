"""Immutable domain types shared by every pipeline stage."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvariantError

log = logging.getLogger(__name__)

ORTHO_TOL = 1e-6
# Rotations drifting beyond this are treated as corrupt, not re-orthonormalized.
ORTHO_REPAIR_LIMIT = 1e-2


def _frozen(a, dtype=np.float64, shape=None):
    arr = np.array(a, dtype=dtype, copy=True)
    if shape is not None and arr.shape != shape:
        raise InvariantError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise InvariantError("cannot normalize a zero or non-finite vector")
    return v / n


def canonical_sign(v):
    """Flip ``v`` so that its first non-zero component is positive."""
    v = np.asarray(v, dtype=np.float64)
    for c in v:
        if c > 0:
            return v.copy()
        if c < 0:
            return -v
    return v.copy()


def orthonormalize(R):
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U[:, -1] *= -1
        out = U @ Vt
    return out


class MotionType(str, enum.Enum):
    PRISMATIC = "prismatic"
    REVOLUTE = "revolute"


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform; ``translation`` is the camera center."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise InvariantError("invariant violation: pose shape")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvariantError("invariant violation: pose not finite")
        det = np.linalg.det(R)
        if det <= 0:
            raise InvariantError(f"invariant violation: rotation (det={det:.6g})")
        drift = np.abs(R.T @ R - np.eye(3)).max()
        if drift > ORTHO_REPAIR_LIMIT:
            raise InvariantError(f"invariant violation: rotation (orthogonality drift {drift:.3g})")
        if drift > ORTHO_TOL:
            log.warning("re-orthonormalizing camera rotation (drift %.2e)", drift)
            R = orthonormalize(R)
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        if not np.allclose(m[3], [0, 0, 0, 1], atol=1e-9):
            raise InvariantError("invariant violation: pose bottom row")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        Rt = self.rotation.T
        return CameraPose(Rt, -Rt @ self.translation)

    def compose(self, other: CameraPose) -> CameraPose:
        """``self ∘ other``: apply ``other`` first."""
        return CameraPose(self.rotation @ other.rotation,
                          self.rotation @ other.translation + self.translation)

    def to_world(self, pts):
        return np.asarray(pts, dtype=np.float64) @ self.rotation.T + self.translation

    def to_camera(self, pts):
        return (np.asarray(pts, dtype=np.float64) - self.translation) @ self.rotation


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvariantError("invariant violation: focal length must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvariantError("invariant violation: principal point outside image")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise InvariantError("invariant violation: image size must be integral")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def unproject(self, uv, depth):
        """Pixel coordinates (N, 2) and metric depth (N,) to camera-frame points."""
        uv = np.asarray(uv, dtype=np.float64)
        depth = np.asarray(depth, dtype=np.float64)
        x = (uv[:, 0] - self.cx) / self.fx * depth
        y = (uv[:, 1] - self.cy) / self.fy * depth
        return np.stack([x, y, depth], axis=1)

    def project(self, pts_cam):
        """Camera-frame points to pixels; also returns the camera-frame depth."""
        pts_cam = np.atleast_2d(np.asarray(pts_cam, dtype=np.float64))
        z = pts_cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pts_cam[:, 0] / z + self.cx
            v = self.fy * pts_cam[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z

    def in_bounds(self, uv):
        uv = np.asarray(uv)
        # pixel centers sit at integer coordinates, so the image spans [-0.5, W-0.5)
        return ((uv[:, 0] >= -0.5) & (uv[:, 0] < self.width - 0.5)
                & (uv[:, 1] >= -0.5) & (uv[:, 1] < self.height - 0.5))

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": int(self.width), "height": int(self.height)}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class DepthMap:
    """Row-major float32 metric depth; non-finite or non-positive entries are invalid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise InvariantError("invariant violation: depth map must be 2-D")
        object.__setattr__(self, "values", _frozen(v, dtype=np.float32))

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def valid(self):
        v = self.values
        return np.isfinite(v) & (v > 0)


@dataclass(frozen=True)
class Mask:
    """Binary object mask, stored as 0/255 bytes."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise InvariantError("invariant violation: mask must be 2-D")
        object.__setattr__(self, "values", _frozen(np.where(v > 0, 255, 0), dtype=np.uint8))

    @property
    def positive(self):
        return self.values > 0

    @property
    def area(self):
        return int(np.count_nonzero(self.values))


@dataclass(frozen=True)
class NormalSampleSet:
    """Unit surface normals in the camera frame of their source frame."""

    normals: np.ndarray
    frames: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        if n.shape[0] != f.shape[0]:
            raise InvariantError("invariant violation: normals/frames length mismatch")
        if n.size and np.abs(np.linalg.norm(n, axis=1) - 1.0).max() > 1e-6:
            raise InvariantError("invariant violation: normals must have unit norm")
        object.__setattr__(self, "normals", _frozen(n))
        object.__setattr__(self, "frames", _frozen(f, dtype=np.int64))

    def __len__(self):
        return self.normals.shape[0]

    def for_frame(self, frame):
        return self.normals[self.frames == frame]


@dataclass(frozen=True)
class LineSegment2D:
    p0: tuple
    p1: tuple
    frame: int
    corr_id: int | None = None

    def __post_init__(self):
        p0 = tuple(float(x) for x in self.p0)
        p1 = tuple(float(x) for x in self.p1)
        if p0 == p1:
            raise InvariantError("invariant violation: segment endpoints coincide")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)

    @property
    def length(self):
        return float(np.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]))

    def check_bounds(self, intr: Intrinsics):
        uv = np.array([self.p0, self.p1])
        if not intr.in_bounds(uv).all():
            raise InvariantError(f"invariant violation: segment outside image in frame {self.frame}")


@dataclass(frozen=True)
class FingertipObservation:
    timestamp: float
    thumb: np.ndarray
    index: np.ndarray
    middle: np.ndarray
    contact: bool

    def __post_init__(self):
        for name in ("thumb", "index", "middle"):
            v = _frozen(getattr(self, name), shape=(3,))
            if not np.all(np.isfinite(v)):
                raise InvariantError(f"invariant violation: fingertip {name} not finite")
            object.__setattr__(self, name, v)
        if not np.isfinite(self.timestamp):
            raise InvariantError("invariant violation: timestamp not finite")
        object.__setattr__(self, "timestamp", float(self.timestamp))
        object.__setattr__(self, "contact", bool(self.contact))


@dataclass(frozen=True)
class Articulation:
    motion_type: MotionType
    axis: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64)
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise InvariantError("invariant violation: articulation axis must be unit")
        object.__setattr__(self, "motion_type", MotionType(self.motion_type))
        object.__setattr__(self, "axis", _frozen(a, shape=(3,)))
        object.__setattr__(self, "origin", _frozen(self.origin, shape=(3,)))

    def to_dict(self):
        return {"motion_type": self.motion_type.value,
                "axis": [float(x) for x in self.axis],
                "origin": [float(x) for x in self.origin]}

    @classmethod
    def from_dict(cls, d):
        return cls(MotionType(d["motion_type"]), d["axis"], d["origin"])


@dataclass(frozen=True)
class FrameRecord:
    index: int
    timestamp: float
    depth: DepthMap | None = None
    mask: Mask | None = None


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame_ids: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.frame_ids, dtype=np.int64).reshape(-1)
        if p.shape[0] != f.shape[0]:
            raise InvariantError("invariant violation: cloud points/frame_ids mismatch")
        object.__setattr__(self, "points", _frozen(p))
        object.__setattr__(self, "frame_ids", _frozen(f, dtype=np.int64))

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class ClipBundle:
    """Everything the pipeline consumes for one interaction clip."""

    clip_id: str
    intrinsics: Intrinsics
    frames: tuple
    poses: tuple
    fingertips: tuple
    lines: tuple = ()
    normals: NormalSampleSet = field(default_factory=lambda: NormalSampleSet(np.zeros((0, 3)), []))
    cloud: PointCloud | None = None
    reasoner: dict | None = None
    scene_id: str = "scene"
    up_axis: str | None = None

    def __post_init__(self):
        for name in ("frames", "poses", "fingertips", "lines"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        n = len(self.frames)
        if len(self.poses) != n:
            raise InvariantError(f"invariant violation: {len(self.poses)} poses for {n} frames")
        if len(self.fingertips) > n:
            raise InvariantError("invariant violation: more fingertip observations than frames")
        for i, fr in enumerate(self.frames):
            if fr.index != i:
                raise InvariantError(f"invariant violation: frames[{i}].index = {fr.index}")
            size = (self.intrinsics.height, self.intrinsics.width)
            for img in (fr.depth, fr.mask):
                if img is not None and img.values.shape != size:
                    raise InvariantError(f"invariant violation: frames[{i}] image size")
        for j, seg in enumerate(self.lines):
            if not 0 <= seg.frame < n:
                raise InvariantError(f"invariant violation: lines[{j}].frame out of range")
            seg.check_bounds(self.intrinsics)
        if len(self.normals) and (self.normals.frames.min() < 0 or self.normals.frames.max() >= n):
            raise InvariantError("invariant violation: normals reference unknown frames")
        if self.cloud is not None and len(self.cloud) and (
                self.cloud.frame_ids.min() < 0 or self.cloud.frame_ids.max() >= n):
            raise InvariantError("invariant violation: cloud references unknown frames")

    @property
    def n_frames(self):
        return len(self.frames)

    def depth_frames(self):
        return [fr.index for fr in self.frames if fr.depth is not None]
