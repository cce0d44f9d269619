"""Pose from 2D-3D correspondences: 6-point DLT inside RANSAC, Gauss-Newton refinement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import PinholeIntrinsics, SE3Pose, axis_angle_to_rot, nearest_rotation, rotation_angle

MIN_CORRESPONDENCES = 6


class PnPError(ValueError):
    pass


class InsufficientCorrespondences(PnPError):
    pass


class DegenerateConfiguration(PnPError):
    pass


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 1000
    inlier_threshold: float = 3.0
    confidence: float = 0.99
    min_inliers: int = 12
    seed: int = 0
    refine_iterations: int = 10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be > 0")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")


@dataclass(frozen=True)
class PoseEstimate:
    pose: SE3Pose | None
    inlier_indices: np.ndarray
    converged: bool
    mean_reprojection_error: float
    iterations: int = 0


def _check(pixels, points):
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pixels) != len(points):
        raise ValueError("pixels and points must be parallel")
    return pixels, points


def solve_pnp_dlt(pixels, points, intr: PinholeIntrinsics) -> SE3Pose:
    """Direct linear transform on normalized image coordinates.

    3D points are centered and scaled before building the system; the 3x3
    block of the recovered projection is projected to the nearest rotation.
    """
    pixels, points = _check(pixels, points)
    n = len(points)
    if n < MIN_CORRESPONDENCES:
        raise InsufficientCorrespondences(f"DLT needs >= {MIN_CORRESPONDENCES} correspondences, got {n}")
    xn = (pixels[:, 0] - intr.cx) / intr.fx
    yn = (pixels[:, 1] - intr.cy) / intr.fy
    mu = points.mean(axis=0)
    scale = np.sqrt(3.0) / max(np.linalg.norm(points - mu, axis=1).mean(), 1e-300)
    xh = np.hstack([(points - mu) * scale, np.ones((n, 1))])

    a = np.zeros((2 * n, 12))
    a[0::2, 0:4] = xh
    a[0::2, 8:12] = -xn[:, None] * xh
    a[1::2, 4:8] = xh
    a[1::2, 8:12] = -yn[:, None] * xh
    _, s, vt = np.linalg.svd(a)
    if not np.all(np.isfinite(s)) or s[-2] <= 1e-9 * s[0]:
        raise DegenerateConfiguration("rank-deficient DLT system (points collinear/coplanar or repeated)")
    p = vt[-1].reshape(3, 4)
    # undo the point normalization: X_n = scale * (X - mu)
    m = p[:, :3] * scale
    p4 = p[:, 3] - m @ mu
    depth = points @ m[2] + p4[2]
    if np.sum(depth > 0) < n / 2:
        m, p4 = -m, -p4
    r = nearest_rotation(m)
    t = p4 / np.linalg.svd(m, compute_uv=False).mean()
    return SE3Pose(r, t)


def reprojection_cost(pose: SE3Pose, pixels, points, intr) -> float:
    e = kernels.reprojection_errors(pose.rotation, pose.translation, intr, points, pixels)
    return float(np.sum(e * e))


def _residuals_jacobian(r, t, pixels, points, intr):
    xc = points @ r.T + t
    z = xc[:, 2]
    u = intr.fx * xc[:, 0] / z + intr.cx
    v = intr.fy * xc[:, 1] / z + intr.cy
    res = np.concatenate([u - pixels[:, 0], v - pixels[:, 1]])
    # d(u, v)/d(xc)
    n = len(points)
    du = np.zeros((n, 3))
    dv = np.zeros((n, 3))
    du[:, 0] = intr.fx / z
    du[:, 2] = -intr.fx * xc[:, 0] / z**2
    dv[:, 1] = intr.fy / z
    dv[:, 2] = -intr.fy * xc[:, 1] / z**2
    # left perturbation xc' = exp(w) xc + dt  =>  dxc/dw = -[xc]x, dxc/dt = I
    jw_u = np.cross(xc, du)  # du^T (-[xc]x) == (xc x du)^T
    jw_v = np.cross(xc, dv)
    j = np.vstack([np.hstack([jw_u, du]), np.hstack([jw_v, dv])])
    return res, j


def refine_gauss_newton(pose: SE3Pose, pixels, points, intr, iterations: int = 10, return_trace: bool = False):
    """Minimize the squared reprojection error over a local 6-DoF update.

    Steps that increase the cost are halved (up to 20 times); the loop stops
    when no improving step exists. The returned trace holds the cost after
    every accepted step, starting with the initial cost.
    """
    pixels, points = _check(pixels, points)
    r, t = pose.rotation.copy(), pose.translation.copy()
    cost = reprojection_cost(pose, pixels, points, intr)
    trace = [cost]
    best = pose
    for _ in range(iterations):
        if not np.isfinite(cost) or cost == 0.0:
            break
        res, j = _residuals_jacobian(r, t, pixels, points, intr)
        try:
            step = np.linalg.lstsq(j, -res, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        accepted = False
        for _ in range(20):
            dr = axis_angle_to_rot(step[:3])
            r_new = nearest_rotation(dr @ r)
            t_new = dr @ t + step[3:]
            cand = SE3Pose(r_new, t_new)
            c_new = reprojection_cost(cand, pixels, points, intr)
            if c_new < cost:
                accepted = True
                break
            step = step * 0.5
        if not accepted:
            break
        improvement = cost - c_new
        r, t, cost, best = r_new, t_new, c_new, cand
        trace.append(cost)
        if improvement <= 1e-15 * max(cost, 1e-300):
            break
    return (best, trace) if return_trace else best


def _required_iterations(inlier_ratio: float, confidence: float, cap: int) -> int:
    if inlier_ratio <= 0:
        return cap
    if inlier_ratio >= 1:
        return 0
    denom = np.log1p(-(inlier_ratio**MIN_CORRESPONDENCES))
    if denom == 0:  # inlier ratio so close to 0 that the bound is infinite
        return cap
    return min(cap, int(np.ceil(np.log(1.0 - confidence) / denom)))


def _score(pose, pixels, points, intr, thr):
    err = kernels.reprojection_errors(pose.rotation, pose.translation, intr, points, pixels)
    inl = np.flatnonzero(err <= thr)
    mean = float(err[inl].mean()) if len(inl) else np.inf
    return inl, mean


def ransac_pnp(pixels, points, intr: PinholeIntrinsics, cfg: RansacConfig = RansacConfig()) -> PoseEstimate:
    """Seeded RANSAC over 6-point DLT hypotheses with an adaptive iteration bound.

    The best hypothesis (most inliers, then lowest mean inlier error) is
    refined on its inliers, and the inlier set is recomputed under the final pose.
    """
    pixels, points = _check(pixels, points)
    n = len(points)
    if n < MIN_CORRESPONDENCES:
        raise InsufficientCorrespondences(f"RANSAC needs >= {MIN_CORRESPONDENCES} correspondences, got {n}")
    rng = np.random.default_rng([cfg.seed, 0xAA5AC])
    best_pose, best_inl, best_err = None, np.zeros(0, dtype=np.int64), np.inf
    needed = cfg.max_iterations
    it = 0
    while it < min(needed, cfg.max_iterations):
        it += 1
        sample = rng.choice(n, size=MIN_CORRESPONDENCES, replace=False)
        try:
            pose = solve_pnp_dlt(pixels[sample], points[sample], intr)
        except (PnPError, np.linalg.LinAlgError):
            continue
        inl, mean = _score(pose, pixels, points, intr, cfg.inlier_threshold)
        if len(inl) > len(best_inl) or (len(inl) == len(best_inl) and len(inl) and mean < best_err):
            best_pose, best_inl, best_err = pose, inl, mean
            needed = _required_iterations(len(inl) / n, cfg.confidence, cfg.max_iterations)

    if best_pose is None:
        return PoseEstimate(None, np.zeros(0, dtype=np.int64), False, np.inf, it)

    pose, inl, err = best_pose, best_inl, best_err
    # local optimization: refine on inliers, re-collect, repeat while the set grows
    for _ in range(3):
        if len(inl) < MIN_CORRESPONDENCES:
            break
        cand = refine_gauss_newton(pose, pixels[inl], points[inl], intr, cfg.refine_iterations)
        c_inl, c_err = _score(cand, pixels, points, intr, cfg.inlier_threshold)
        if len(c_inl) < len(inl) or (len(c_inl) == len(inl) and c_err >= err):
            break
        grew = len(c_inl) > len(inl)
        pose, inl, err = cand, c_inl, c_err
        if not grew:
            break
    return PoseEstimate(pose, inl, len(inl) >= cfg.min_inliers, err, it)


def pose_errors(estimate: SE3Pose, gt: SE3Pose) -> tuple[float, float]:
    """(camera-center distance in cm, rotation angle in degrees)."""
    return (
        float(np.linalg.norm(estimate.center - gt.center) * 100.0),
        rotation_angle(estimate.rotation, gt.rotation),
    )
