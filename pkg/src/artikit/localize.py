"""Coarse object localization and global view reselection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core.config import Config
from .core.types import Intrinsics, PointCloud
from .errors import ArtikitError


@dataclass(frozen=True)
class VoxelGrid:
    """Sparse voxel grid; ``counts[i]`` is the number of distinct frames seeing ``indices[i]``."""

    origin: np.ndarray
    voxel_size: float
    indices: np.ndarray
    counts: np.ndarray

    def __len__(self):
        return self.indices.shape[0]

    def as_dict(self):
        return {tuple(int(c) for c in k): int(n) for k, n in zip(self.indices, self.counts)}


@dataclass(frozen=True)
class ConfidentRegion:
    origin: np.ndarray
    voxel_size: float
    indices: np.ndarray

    def __len__(self):
        return self.indices.shape[0]

    @property
    def centers(self):
        return self.origin + (self.indices + 0.5) * self.voxel_size

    @property
    def bounds(self):
        if not len(self):
            return None
        lo = self.origin + self.indices.min(axis=0) * self.voxel_size
        hi = self.origin + (self.indices.max(axis=0) + 1) * self.voxel_size
        return lo, hi

    def keyset(self):
        return {tuple(int(c) for c in k) for k in self.indices}

    def to_dict(self):
        b = self.bounds
        return {"origin": self.origin.tolist(), "voxel_size": self.voxel_size,
                "indices": self.indices.tolist(),
                "bounds": None if b is None else [b[0].tolist(), b[1].tolist()]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["origin"], float), float(d["voxel_size"]),
                   np.asarray(d["indices"], dtype=np.int64).reshape(-1, 3))


def build_voxel_grid(points, frame_ids, voxel_size, origin=None) -> VoxelGrid:
    """Count, per occupied voxel, the distinct source frames contributing a point.

    The grid is anchored at ``origin`` (world zero by default) so that counts
    never depend on the extent or order of the cloud.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    fid = np.asarray(frame_ids, dtype=np.int64).reshape(-1)
    if pts.shape[0] == 0:
        raise ArtikitError("build_voxel_grid: empty point cloud")
    if fid.shape[0] != pts.shape[0]:
        raise ArtikitError("build_voxel_grid: points and frame ids differ in length")
    origin = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
    keys = np.floor((pts - origin) / voxel_size).astype(np.int64)
    pairs = np.unique(np.column_stack([keys, fid]), axis=0)
    vox, counts = np.unique(pairs[:, :3], axis=0, return_counts=True)
    return VoxelGrid(origin, float(voxel_size), vox, counts.astype(np.int64))


def extract_confident(grid: VoxelGrid, cfg: Config | None = None, min_views=None) -> ConfidentRegion:
    t = (cfg.min_views if cfg is not None else 4) if min_views is None else min_views
    keep = grid.counts > t
    return ConfidentRegion(grid.origin, grid.voxel_size, grid.indices[keep])


def frustum_filter(poses, intr: Intrinsics, region: ConfidentRegion, depth_range=(0.1, 5.0),
                   frames=None):
    """Frames for which some confident voxel center projects into the image."""
    if not len(region):
        raise ArtikitError("frustum_filter: empty confident region")
    near, far = depth_range
    centers = region.centers
    frames = range(len(poses)) if frames is None else frames
    keep = []
    for i in frames:
        pc = poses[i].to_camera(centers)
        uv, z = intr.project(pc)
        ok = (z > near) & (z < far)
        if ok.any() and intr.in_bounds(uv[ok]).any():
            keep.append(int(i))
    return keep


def select_views_fps(candidates, poses, n_views):
    """Greedy farthest point sampling over camera centers.

    Seeded with the candidate farthest from the centroid of all candidate
    centers; ties resolve to the earliest candidate.
    """
    cand = [int(c) for c in candidates]
    if not cand:
        raise ArtikitError("select_views_fps: no candidate frames")
    k = min(int(n_views), len(cand))
    centers = np.array([poses[i].translation for i in cand], dtype=np.float64)
    first = int(np.argmax(np.sum((centers - centers.mean(axis=0)) ** 2, axis=1)))
    order = kernels.farthest_point_order(np.ascontiguousarray(centers), first, k)
    return [cand[j] for j in order]


def select_local_frames(contact, n_local):
    """Uniformly strided subset of in-contact frames.

    ``contact`` is a per-frame boolean sequence; stands in for frames judged
    to show active interaction.
    """
    idx = np.flatnonzero(np.asarray(contact, dtype=bool))
    if idx.size <= n_local:
        return idx.tolist()
    pick = np.round(np.linspace(0, idx.size - 1, n_local)).astype(int)
    return idx[pick].tolist()


def mask_filter_cloud(cloud: PointCloud, poses, intr: Intrinsics, masks) -> PointCloud:
    """Drop points that fall outside the object mask of their source frame.

    ``masks`` maps frame index to a boolean image; points from frames with
    no mask pass through untouched.
    """
    keep = np.ones(len(cloud), dtype=bool)
    for f, m in masks.items():
        sel = np.flatnonzero(cloud.frame_ids == f)
        if not sel.size:
            continue
        uv, z = intr.project(poses[f].to_camera(cloud.points[sel]))
        inside = (z > 0) & intr.in_bounds(uv)
        hit = np.zeros(sel.size, dtype=bool)
        px = np.rint(uv[inside]).astype(np.int64)
        hit[inside] = m[px[:, 1], px[:, 0]]
        keep[sel] = hit
    return PointCloud(cloud.points[keep], cloud.frame_ids[keep])


def localize(cloud: PointCloud, local_frames, cfg: Config) -> tuple[VoxelGrid, ConfidentRegion]:
    keep = np.isin(cloud.frame_ids, np.asarray(local_frames, dtype=np.int64))
    if not keep.any():
        raise ArtikitError("no cloud points come from the local interaction frames")
    grid = build_voxel_grid(cloud.points[keep], cloud.frame_ids[keep], cfg.voxel_size)
    return grid, extract_confident(grid, cfg)


def reselect_views(poses, intr, region, candidates, cfg: Config):
    retained = frustum_filter(poses, intr, region, (cfg.depth_near, cfg.depth_far), candidates)
    if not retained:
        return []
    return select_views_fps(retained, poses, cfg.n_global)


__all__ = [
    "ConfidentRegion", "VoxelGrid", "build_voxel_grid", "extract_confident",
    "frustum_filter", "localize", "mask_filter_cloud", "reselect_views", "select_local_frames", "select_views_fps",
]
