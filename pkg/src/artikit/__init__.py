"""Articulation estimation from egocentric interaction clips."""

from .core import Articulation, ClipBundle, Config, MotionType, default_config, load_clip_bundle
from .errors import (ArtikitError, BundleError, DegenerateError, NoInteractionError,
                     RejectedEstimate, SchemaError, UnresolvedMotionType)

__version__ = "0.1.0"

__all__ = [
    "Articulation", "ArtikitError", "BundleError", "ClipBundle", "Config", "DegenerateError",
    "MotionType", "NoInteractionError", "RejectedEstimate", "SchemaError", "UnresolvedMotionType",
    "__version__", "default_config", "load_clip_bundle",
]
