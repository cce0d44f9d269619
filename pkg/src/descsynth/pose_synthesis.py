"""Novel camera poses from a sparse reference set.

Each reference camera is paired with its ``k`` nearest neighbours (by camera
translation), and ``N`` poses are placed strictly between the two anchors:
translations uniformly along the segment, rotations by quaternion SLERP at the
same fraction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PinholeIntrinsics, SE3Pose, quat_to_rot, rot_to_quat, slerp

PAIR_POLICIES = ("per-anchor", "dedup-unordered")
# "center": camera centers -R^T t (camera-to-world translation);
# "translation": the camera-from-world t itself.
INTERP_SPACES = ("center", "translation")


@dataclass(frozen=True)
class PoseEntry:
    id: str
    pose: SE3Pose
    intrinsics: PinholeIntrinsics


@dataclass
class PoseSet:
    entries: list[PoseEntry]
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("pose set is empty")
        self._index = {}
        for i, e in enumerate(self.entries):
            if e.id in self._index:
                raise ValueError(f"duplicate pose id {e.id!r}")
            self._index[e.id] = i

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, pose_id: str) -> PoseEntry:
        try:
            return self.entries[self._index[pose_id]]
        except KeyError:
            raise KeyError(f"unknown pose id {pose_id!r}") from None

    def __contains__(self, pose_id):
        return pose_id in self._index


@dataclass(frozen=True)
class InterpConfig:
    k: int = 3
    n_samples: int = 40
    pair_policy: str = "dedup-unordered"
    space: str = "center"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.pair_policy not in PAIR_POLICIES:
            raise ValueError(f"pair_policy must be one of {PAIR_POLICIES}")
        if self.space not in INTERP_SPACES:
            raise ValueError(f"space must be one of {INTERP_SPACES}")


@dataclass(frozen=True)
class NovelPose:
    pose: SE3Pose
    anchor_a: str
    anchor_b: str
    delta: float
    intrinsics: PinholeIntrinsics
    step: int  # n in 1..N, delta == step / (N + 1)


def position(pose: SE3Pose, space: str = "center") -> np.ndarray:
    return pose.center if space == "center" else pose.translation


def pairwise_distances(poses: PoseSet, anchor: str, space: str = "center") -> list[tuple[str, float]]:
    """Squared distance from ``anchor`` to every other pose, in set order."""
    if len(poses) < 2:
        raise ValueError("need at least two poses")
    ta = position(poses[anchor].pose, space)
    out = []
    for e in poses:
        if e.id == anchor:
            continue
        d = position(e.pose, space) - ta
        out.append((e.id, float(d @ d)))
    return out


def top_k_pairs(poses: PoseSet, cfg: InterpConfig) -> list[tuple[str, str]]:
    if cfg.k >= len(poses):
        raise ValueError(f"k={cfg.k} must be smaller than the number of poses ({len(poses)})")
    pairs = []
    for e in poses:
        dists = sorted(pairwise_distances(poses, e.id, cfg.space), key=lambda p: (p[1], p[0]))
        pairs.extend((e.id, j) for j, _ in dists[: cfg.k])
    if cfg.pair_policy == "per-anchor":
        return pairs
    seen = set()
    out = []
    for a, b in pairs:
        key = (min(a, b), max(a, b))
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out


def synthesize_poses(poses: PoseSet, cfg: InterpConfig) -> list[NovelPose]:
    n = cfg.n_samples
    quats = {e.id: rot_to_quat(e.pose.rotation) for e in poses}
    out = []
    for a, b in top_k_pairs(poses, cfg):
        ea, eb = poses[a], poses[b]
        pa, pb = position(ea.pose, cfg.space), position(eb.pose, cfg.space)
        for step in range(1, n + 1):
            delta = step / (n + 1)
            p = pa + delta * (pb - pa)
            r = quat_to_rot(slerp(quats[a], quats[b], delta))
            t = -r @ p if cfg.space == "center" else p
            out.append(NovelPose(SE3Pose(r, t), a, b, delta, ea.intrinsics, step))
    return out
