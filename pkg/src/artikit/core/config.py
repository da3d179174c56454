"""Pipeline hyperparameters.

The first block of fields carries the published defaults; the second block
holds implementation knobs the method leaves open.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from ..errors import SchemaError


@dataclass(frozen=True)
class Config:
    # trajectory smoothing
    length_scale: float = 10.0
    obs_noise: float = 0.05
    process_noise: float = 0.01
    gate_p: float = 0.05
    # localization
    voxel_size: float = 0.05
    min_views: int = 4
    n_local: int = 5
    n_global: int = 50
    # reasoning
    k_frames: int = 10
    n_cand: int = 4
    # revolute fitting
    torus_tol_ratio: float = 0.15
    torus_tol_min: float = 0.015
    torus_tol_max: float = 0.050
    max_radius: float = 1.0
    # prismatic fitting
    prism_tol: float = 0.02
    min_inlier_rate: float = 0.3
    # evaluation
    axis_angle_thresh: float = 15.0
    origin_dist_thresh: float = 0.25

    # open knobs
    init_velocity_std: float = 1.0
    depth_near: float = 0.1
    depth_far: float = 5.0
    line_stride: float = 2.0
    line_tol: float | None = None
    ransac_max_iters: int = 1000
    ransac_confidence: float = 0.99
    direction_cluster_deg: float = 5.0
    normal_k: int = 6
    meanshift_bandwidth: float = 0.05
    manhattan_min_sep_deg: float = 45.0
    scene_iou: float = 0.3
    heuristic_ratio: float = 0.5
    seed: int = 0

    def __post_init__(self):
        positive = ("length_scale", "obs_noise", "process_noise", "gate_p", "voxel_size",
                    "min_views", "n_local", "n_global", "k_frames", "n_cand",
                    "torus_tol_ratio", "torus_tol_min", "torus_tol_max", "max_radius",
                    "prism_tol", "min_inlier_rate", "axis_angle_thresh", "origin_dist_thresh",
                    "init_velocity_std", "line_stride", "ransac_max_iters",
                    "direction_cluster_deg", "normal_k", "meanshift_bandwidth")
        for name in positive:
            if not getattr(self, name) > 0:
                raise SchemaError(f"config.{name} must be positive")
        if self.torus_tol_min > self.torus_tol_max:
            raise SchemaError("config.torus_tol_min must not exceed torus_tol_max")
        if not self.min_inlier_rate <= 1:
            raise SchemaError("config.min_inlier_rate must lie in (0, 1]")
        if not self.gate_p < 1:
            raise SchemaError("config.gate_p must lie in (0, 1)")
        if not 0 < self.depth_near < self.depth_far:
            raise SchemaError("config depth range must satisfy 0 < near < far")

    @property
    def ransac_tol(self):
        return self.voxel_size / 2 if self.line_tol is None else self.line_tol

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d, base: Config | None = None):
        base = base or cls()
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise SchemaError(f"unknown config field(s): {', '.join(unknown)}")
        return dataclasses.replace(base, **d)

    @classmethod
    def from_json(cls, path, base: Config | None = None):
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise SchemaError("config file must contain a JSON object")
        return cls.from_dict(data, base)


def default_config() -> Config:
    return Config()
