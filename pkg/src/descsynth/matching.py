"""Reference-to-synthetic descriptor matching, match-count filtering and label transfer."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .scene_oracle import Frame

REFERENCE_KEYPOINT_BUDGET = 2048


@dataclass(eq=False)
class MatchSet:
    pairs: np.ndarray  # (m, 2) int64: (ref_index, syn_index)
    scores: np.ndarray  # (m,) cosine similarity

    def __len__(self):
        return len(self.pairs)

    @classmethod
    def empty(cls) -> "MatchSet":
        return cls(np.zeros((0, 2), dtype=np.int64), np.zeros(0))


@dataclass(frozen=True)
class FilterDecision:
    accepted: bool
    match_count: int
    threshold: int


@dataclass(frozen=True, eq=False)
class LabeledSample:
    descriptor: np.ndarray
    target: np.ndarray
    source_frame: str
    keypoint: tuple[float, float]


def match_descriptors(ref: Frame, syn: Frame, ratio: float = 0.95, min_score: float = 0.7) -> MatchSet:
    """Mutual nearest neighbours by cosine similarity with a two-sided ratio test.

    A pair (i, j) survives when each is the other's best candidate, the
    similarity reaches ``min_score``, and on both sides
    ``(1 - best) <= ratio * (1 - second_best)``.
    """
    if len(ref) and len(syn) and ref.descriptor_dim != syn.descriptor_dim:
        raise ValueError(f"descriptor dimension mismatch: {ref.descriptor_dim} vs {syn.descriptor_dim}")
    if len(ref) == 0 or len(syn) == 0:
        return MatchSet.empty()
    sim = ref.descriptors.astype(np.float64) @ syn.descriptors.astype(np.float64).T
    r_idx, r_best, r_second, c_idx, _, c_second = kernels.top2(sim)
    i = np.arange(len(ref))
    j = r_idx
    keep = (
        (c_idx[j] == i)
        & (r_best >= min_score)
        & ((1.0 - r_best) <= ratio * (1.0 - r_second))
        & ((1.0 - r_best) <= ratio * (1.0 - c_second[j]))
    )
    pairs = np.stack([i[keep], j[keep]], axis=1).astype(np.int64)
    return MatchSet(pairs, np.clip(r_best[keep], -1.0, 1.0))


def scaled_eta(eta: float, max_keypoints: int) -> int:
    """Match threshold rescaled to a smaller keypoint budget.

    ``ceil`` keeps ``count >= eta * max_keypoints / 2048`` exact for integer counts.
    """
    return int(math.ceil(eta * max_keypoints / REFERENCE_KEYPOINT_BUDGET - 1e-12))


def filter_frame(m: MatchSet, eta: int) -> FilterDecision:
    if eta < 0:
        raise ValueError("eta must be >= 0")
    return FilterDecision(len(m) >= eta, len(m), int(eta))


def transfer_labels(m: MatchSet, ref: Frame, ref_coords: np.ndarray, syn: Frame) -> list[LabeledSample]:
    """Give each matched synthetic descriptor the 3D coordinate of its reference keypoint.

    Reference keypoints whose coordinate is missing (NaN row) are skipped.
    """
    ref_coords = np.asarray(ref_coords, dtype=np.float64).reshape(-1, 3)
    if len(ref_coords) != len(ref):
        raise ValueError(f"{len(ref_coords)} reference coordinates for {len(ref)} keypoints")
    if len(m) and (m.pairs[:, 0].max() >= len(ref) or m.pairs[:, 1].max() >= len(syn)):
        raise ValueError("match indices out of frame bounds")
    out = []
    for ri, si in m.pairs:
        target = ref_coords[ri]
        if not np.all(np.isfinite(target)):
            continue
        kp = syn.keypoints[si]
        out.append(LabeledSample(syn.descriptors[si], target.copy(), syn.frame_id, (float(kp[0]), float(kp[1]))))
    return out


def stack_samples(samples: list[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    """(descriptors, targets) arrays for a list of samples."""
    if not samples:
        return np.zeros((0, 0), dtype=np.float32), np.zeros((0, 3))
    return (
        np.stack([s.descriptor for s in samples]).astype(np.float32),
        np.stack([s.target for s in samples]),
    )
