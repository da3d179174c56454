"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from ``ARTIKIT_BACKEND``
(``numba`` or ``numpy``).  ``numba`` is the default whenever the package is
importable; setting ``ARTIKIT_BACKEND=numpy`` forces the fallback, which is
also used automatically when numba is missing.

Both backends are importable side by side through :func:`get_backend` so
the benchmark and the agreement tests can compare them directly.
"""

import importlib
import os
from types import ModuleType

KERNEL_NAMES = (
    "kalman_forward",
    "rts_backward",
    "line_scores",
    "farthest_point_order",
    "radius_variance_search",
    "axial_mean_shift",
)


def numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def get_backend(name: str) -> ModuleType:
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not numba_available():
        raise ImportError("numba backend requested but numba is not installed")
    return importlib.import_module(f"{__name__}._{name}")


def _select() -> str:
    requested = os.environ.get("ARTIKIT_BACKEND", "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested not in ("", "numba"):
        raise ValueError(f"ARTIKIT_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    return "numba" if numba_available() else "numpy"


BACKEND = _select()
_impl = get_backend(BACKEND)

kalman_forward = _impl.kalman_forward
rts_backward = _impl.rts_backward
line_scores = _impl.line_scores
farthest_point_order = _impl.farthest_point_order
radius_variance_search = _impl.radius_variance_search
axial_mean_shift = _impl.axial_mean_shift
