"""Deterministic synthetic scene standing in for a radiance field plus feature extractor.

A scene is a cloud of landmarks. Each landmark has a unit base descriptor and a
small linear map from viewing direction to descriptor space, so the descriptor
observed in a view drifts smoothly with the viewpoint. Rendering projects the
landmarks, adds pixel and descriptor noise, and with some probability corrupts
the view (random descriptors, displaced keypoints) the way rendering artifacts
would.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import PinholeIntrinsics, SE3Pose


@dataclass(frozen=True)
class Landmark:
    id: int
    position: np.ndarray
    base_descriptor: np.ndarray
    view_map: np.ndarray  # (d, 3)


@dataclass(eq=False)
class SyntheticScene:
    seed: int
    bounds: np.ndarray  # (2, 3): min corner, max corner
    positions: np.ndarray  # (L, 3)
    base_descriptors: np.ndarray  # (L, d)
    view_maps: np.ndarray  # (L, d, 3)
    view_alpha: float

    @property
    def descriptor_dim(self) -> int:
        return self.base_descriptors.shape[1]

    def __len__(self):
        return len(self.positions)

    @property
    def landmarks(self) -> list[Landmark]:
        return [self.landmark(i) for i in range(len(self))]

    def landmark(self, i: int) -> Landmark:
        return Landmark(i, self.positions[i], self.base_descriptors[i], self.view_maps[i])

    def __eq__(self, other):
        if not isinstance(other, SyntheticScene):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.view_alpha == other.view_alpha
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("bounds", "positions", "base_descriptors", "view_maps")
            )
        )


@dataclass(frozen=True)
class RenderConfig:
    pixel_noise_sigma: float = 0.0
    descriptor_noise_sigma: float = 0.0
    artifact_prob: float = 0.0
    artifact_fraction: float = 0.9
    max_keypoints: int = 2048

    def __post_init__(self):
        if self.pixel_noise_sigma < 0 or self.descriptor_noise_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not (0 <= self.artifact_prob <= 1 and 0 <= self.artifact_fraction <= 1):
            raise ValueError("artifact probabilities must be in [0, 1]")
        if self.max_keypoints < 1:
            raise ValueError("max_keypoints must be >= 1")


@dataclass(eq=False)
class Frame:
    frame_id: str
    pose: SE3Pose
    intrinsics: PinholeIntrinsics
    keypoints: np.ndarray  # (n, 2) float64
    descriptors: np.ndarray  # (n, d) float32, unit rows
    gt_landmark_ids: np.ndarray | None = None  # (n,) int64
    is_synthetic: bool = False
    corrupted: bool = False  # oracle-only flag, never used by the pipeline itself
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float32)
        if self.descriptors.ndim != 2:
            raise ValueError("descriptors must be a 2D array")
        if len(self.descriptors) != len(self.keypoints):
            raise ValueError("keypoints and descriptors must be parallel")
        if self.gt_landmark_ids is not None:
            self.gt_landmark_ids = np.asarray(self.gt_landmark_ids, dtype=np.int64).reshape(-1)
            if len(self.gt_landmark_ids) != len(self.keypoints):
                raise ValueError("gt_landmark_ids must be parallel to keypoints")

    def __len__(self):
        return len(self.keypoints)

    @property
    def descriptor_dim(self) -> int:
        return self.descriptors.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        gt_eq = (self.gt_landmark_ids is None and other.gt_landmark_ids is None) or (
            self.gt_landmark_ids is not None
            and other.gt_landmark_ids is not None
            and np.array_equal(self.gt_landmark_ids, other.gt_landmark_ids)
        )
        return (
            self.frame_id == other.frame_id
            and self.pose == other.pose
            and self.intrinsics == other.intrinsics
            and np.array_equal(self.keypoints, other.keypoints)
            and self.descriptors.shape == other.descriptors.shape
            and np.array_equal(self.descriptors, other.descriptors)
            and gt_eq
            and self.is_synthetic == other.is_synthetic
            and self.corrupted == other.corrupted
            and self.meta == other.meta
        )


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def _view_map(seed: int, landmark_id: int, d: int, alpha: float) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x5EED, landmark_id])
    m = rng.normal(size=(d, 3))
    return m * (alpha / np.linalg.norm(m, ord=2))


def generate_scene(
    seed: int,
    landmark_count: int,
    bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),
    descriptor_dim: int = 256,
    view_alpha: float = 0.5,
) -> SyntheticScene:
    if landmark_count < 1:
        raise ValueError("landmark_count must be >= 1")
    if descriptor_dim < 1:
        raise ValueError("descriptor_dim must be >= 1")
    bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
    if not np.all(bounds[1] > bounds[0]):
        raise ValueError(f"empty bounds {bounds.tolist()}")
    if view_alpha < 0:
        raise ValueError("view_alpha must be >= 0")
    rng = np.random.default_rng([seed, 0x5CE7E])
    positions = rng.uniform(bounds[0], bounds[1], size=(landmark_count, 3))
    base = _unit_rows(rng.normal(size=(landmark_count, descriptor_dim)))
    maps = np.stack([_view_map(seed, i, descriptor_dim, view_alpha) for i in range(landmark_count)])
    return SyntheticScene(int(seed), bounds, positions, base, maps, float(view_alpha))


def observe_descriptors(scene: SyntheticScene, ids: np.ndarray, camera_center: np.ndarray) -> np.ndarray:
    """Noise-free, unnormalized descriptor of each landmark seen from ``camera_center``."""
    view_dir = _unit_rows(camera_center - scene.positions[ids])
    return scene.base_descriptors[ids] + np.einsum("ndk,nk->nd", scene.view_maps[ids], view_dir)


def render_view(
    scene: SyntheticScene,
    pose: SE3Pose,
    intr: PinholeIntrinsics,
    cfg: RenderConfig,
    view_seed: int,
    frame_id: str = "",
    is_synthetic: bool = False,
) -> Frame:
    rng = np.random.default_rng([scene.seed, int(view_seed)])
    # fixed draw order: corruption coin, pixel noise, descriptor noise, corruption picks
    corrupted = bool(rng.random() < cfg.artifact_prob)

    uv, depth, ok = kernels.project_points(pose, intr, scene.positions)
    ids = np.flatnonzero(ok)
    # nearest-first; truncation to the keypoint budget stands in for occlusion
    dist = np.linalg.norm(scene.positions[ids] - pose.center, axis=1)
    ids = ids[np.lexsort((ids, dist))][: cfg.max_keypoints]

    kps = uv[ids]
    if cfg.pixel_noise_sigma > 0:
        kps = kps + rng.normal(scale=cfg.pixel_noise_sigma, size=kps.shape)
    desc = observe_descriptors(scene, ids, pose.center)
    if cfg.descriptor_noise_sigma > 0:
        desc = desc + rng.normal(scale=cfg.descriptor_noise_sigma, size=desc.shape)
    desc = _unit_rows(desc)

    inside = (kps[:, 0] >= 0) & (kps[:, 0] < intr.width) & (kps[:, 1] >= 0) & (kps[:, 1] < intr.height)
    ids, kps, desc = ids[inside], kps[inside], desc[inside]

    if corrupted and len(ids):
        n_bad = int(round(cfg.artifact_fraction * len(ids)))
        bad = rng.choice(len(ids), size=n_bad, replace=False)
        desc[bad] = _unit_rows(rng.normal(size=(n_bad, desc.shape[1])))
        kps[bad, 0] = rng.uniform(0, intr.width, size=n_bad)
        kps[bad, 1] = rng.uniform(0, intr.height, size=n_bad)

    desc = _unit_rows(desc).astype(np.float32)
    return Frame(
        frame_id=frame_id,
        pose=pose,
        intrinsics=intr,
        keypoints=kps,
        descriptors=desc.reshape(-1, scene.descriptor_dim),
        gt_landmark_ids=ids.astype(np.int64),
        is_synthetic=is_synthetic,
        corrupted=corrupted,
    )


def gt_coordinates(scene: SyntheticScene, frame: Frame) -> np.ndarray:
    """Ground-truth 3D position for every keypoint of ``frame`` (n, 3)."""
    if frame.gt_landmark_ids is None:
        raise ValueError(f"frame {frame.frame_id!r} has no ground-truth landmark ids")
    ids = frame.gt_landmark_ids
    if len(ids) and (ids.min() < 0 or ids.max() >= len(scene)):
        raise ValueError("ground-truth id outside the scene")
    return scene.positions[ids].reshape(-1, 3)
