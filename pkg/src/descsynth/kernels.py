"""Backend selection for the hot kernels.

The compiled extension is used when importable; set ``DESCSYNTH_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("DESCSYNTH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def project_points(pose, k, points, impl=None):
    impl = impl or _impl
    return impl.project_points(
        _c(pose.rotation), _c(pose.translation), float(k.fx), float(k.fy),
        float(k.cx), float(k.cy), float(k.width), float(k.height), _c(points).reshape(-1, 3),
    )


def reprojection_errors(rotation, translation, k, points, pixels, impl=None):
    impl = impl or _impl
    return impl.reprojection_errors(
        _c(rotation), _c(translation), float(k.fx), float(k.fy), float(k.cx), float(k.cy),
        _c(points).reshape(-1, 3), _c(pixels).reshape(-1, 2),
    )


def top2(sim, impl=None):
    impl = impl or _impl
    return impl.top2(_c(sim))
