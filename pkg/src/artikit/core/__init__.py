from .config import Config, default_config
from .io import load_clip_bundle, read_ply, write_clip_bundle, write_ply
from .types import (Articulation, CameraPose, ClipBundle, DepthMap, FingertipObservation,
                    FrameRecord, Intrinsics, LineSegment2D, Mask, MotionType, NormalSampleSet,
                    PointCloud, canonical_sign, unit)

__all__ = [
    "Articulation", "CameraPose", "ClipBundle", "Config", "DepthMap", "FingertipObservation",
    "FrameRecord", "Intrinsics", "LineSegment2D", "Mask", "MotionType", "NormalSampleSet",
    "PointCloud", "canonical_sign", "default_config", "load_clip_bundle", "read_ply", "unit",
    "write_clip_bundle", "write_ply",
]
