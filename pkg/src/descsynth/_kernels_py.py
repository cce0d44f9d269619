"""Pure numpy implementations of the hot kernels.

Same signatures and results as the compiled ``_kernels`` extension; used
when the extension is not built or ``DESCSYNTH_PURE_PYTHON=1``.
"""
import numpy as np


def project_points(R, t, fx, fy, cx, cy, width, height, points):
    """Project world points; returns (uv, depth, in_view)."""
    xc = points @ R.T + t
    z = xc[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    uv = np.empty((len(points), 2))
    uv[:, 0] = fx * xc[:, 0] / zs + cx
    uv[:, 1] = fy * xc[:, 1] / zs + cy
    uv[~front] = np.nan
    with np.errstate(invalid="ignore"):
        ok = front & (uv[:, 0] >= 0) & (uv[:, 0] < width) & (uv[:, 1] >= 0) & (uv[:, 1] < height)
    return uv, z.copy(), ok


def reprojection_errors(R, t, fx, fy, cx, cy, points, pixels):
    """Euclidean pixel residual per correspondence; ``inf`` behind the camera."""
    xc = points @ R.T + t
    z = xc[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    du = fx * xc[:, 0] / zs + cx - pixels[:, 0]
    dv = fy * xc[:, 1] / zs + cy - pixels[:, 1]
    err = np.sqrt(du * du + dv * dv)
    err[~front] = np.inf
    return err


def top2(sim):
    """Best index, best and second-best value along rows and along columns.

    Ties resolve to the lower index. A missing second-best is ``-inf``.
    """
    sim = np.asarray(sim, dtype=np.float64)
    n, m = sim.shape
    return (*_top2_axis(sim, n, m), *_top2_axis(sim.T, m, n))


def _top2_axis(s, n, m):
    best_idx = np.argmax(s, axis=1) if m else np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    best = s[rows, best_idx] if m else np.full(n, -np.inf)
    if m >= 2:
        masked = s.copy()
        masked[rows, best_idx] = -np.inf
        second = masked.max(axis=1)
    else:
        second = np.full(n, -np.inf)
    return best_idx.astype(np.int64), best, second
