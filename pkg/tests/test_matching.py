import numpy as np
import pytest

from descsynth.geometry import SE3Pose
from descsynth.matching import (
    MatchSet,
    filter_frame,
    match_descriptors,
    scaled_eta,
    stack_samples,
    transfer_labels,
)
from descsynth.scene_oracle import Frame, gt_coordinates


def frame(desc, intr, fid="x"):
    desc = np.asarray(desc, dtype=np.float32)
    desc /= np.linalg.norm(desc, axis=1, keepdims=True)
    kps = np.arange(len(desc) * 2, dtype=float).reshape(-1, 2)
    return Frame(fid, SE3Pose.identity(), intr, kps, desc)


def brute_force(a, b, ratio, min_score):
    sim = a.descriptors.astype(float) @ b.descriptors.astype(float).T
    out = []
    for i in range(sim.shape[0]):
        j = int(np.argmax(sim[i]))
        if int(np.argmax(sim[:, j])) != i or sim[i, j] < min_score:
            continue
        row = np.sort(sim[i])[::-1]
        col = np.sort(sim[:, j])[::-1]
        r2 = row[1] if len(row) > 1 else -np.inf
        c2 = col[1] if len(col) > 1 else -np.inf
        if (1 - sim[i, j]) <= ratio * (1 - r2) and (1 - sim[i, j]) <= ratio * (1 - c2):
            out.append((i, j))
    return out


def test_identical_frames_match_fully(small_scene, orbit_pose, render):
    f = render(orbit_pose(0.2))
    m = match_descriptors(f, f)
    assert len(m) == len(f)
    np.testing.assert_array_equal(m.pairs[:, 0], m.pairs[:, 1])


def test_against_brute_force(intr):
    rng = np.random.default_rng(2)
    for _ in range(20):
        base = rng.normal(size=(40, 8))
        a = frame(base[:30] + 0.3 * rng.normal(size=(30, 8)), intr)
        b = frame(base[10:] + 0.3 * rng.normal(size=(30, 8)), intr)
        m = match_descriptors(a, b, ratio=0.9, min_score=0.5)
        assert [tuple(p) for p in m.pairs] == brute_force(a, b, 0.9, 0.5)


def test_symmetric(intr):
    rng = np.random.default_rng(8)
    base = rng.normal(size=(40, 8))
    a = frame(base[:30] + 0.3 * rng.normal(size=(30, 8)), intr)
    b = frame(base[5:] + 0.3 * rng.normal(size=(35, 8)), intr)
    ab = {tuple(p) for p in match_descriptors(a, b).pairs}
    ba = {tuple(p[::-1]) for p in match_descriptors(b, a).pairs}
    assert ab == ba


def test_empty_and_mismatched(intr):
    a = frame(np.eye(4), intr)
    empty = Frame("e", SE3Pose.identity(), intr, np.zeros((0, 2)), np.zeros((0, 4), np.float32))
    assert len(match_descriptors(a, empty)) == 0
    with pytest.raises(ValueError):
        match_descriptors(a, frame(np.eye(3), intr))


def test_scaled_eta():
    assert scaled_eta(500, 2048) == 500
    assert scaled_eta(500, 256) == 63  # 62.5 rounds up
    assert scaled_eta(512, 1024) == 256  # exact stays exact
    assert scaled_eta(0, 256) == 0


def test_filter_frame():
    m = MatchSet(np.zeros((5, 2), dtype=np.int64), np.ones(5))
    assert filter_frame(m, 5).accepted
    assert not filter_frame(m, 6).accepted
    assert filter_frame(MatchSet.empty(), 0).accepted
    with pytest.raises(ValueError):
        filter_frame(m, -1)


def test_transfer_labels(small_scene, orbit_pose, render):
    ref = render(orbit_pose(0.0), frame_id="ref")
    syn = render(orbit_pose(0.05), seed=3, frame_id="syn", descriptor_noise_sigma=0.01)
    m = match_descriptors(ref, syn)
    coords = gt_coordinates(small_scene, ref)
    samples = transfer_labels(m, ref, coords, syn)
    assert len(samples) == len(m) > 0
    # labels are correct whenever the match hit the same landmark
    right = sum(np.array_equal(s.target, small_scene.positions[syn.gt_landmark_ids[j]])
                for s, (_, j) in zip(samples, m.pairs))
    assert right / len(samples) > 0.95
    assert all(s.source_frame == "syn" for s in samples)
    x, y = stack_samples(samples)
    assert x.shape == (len(samples), small_scene.descriptor_dim) and y.shape == (len(samples), 3)

    coords[m.pairs[0, 0]] = np.nan
    assert len(transfer_labels(m, ref, coords, syn)) == len(m) - 1
    with pytest.raises(ValueError):
        transfer_labels(m, ref, coords[:-1], syn)
