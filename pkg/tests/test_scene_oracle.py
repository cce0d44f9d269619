import numpy as np
import pytest

from descsynth.geometry import project
from descsynth.scene_oracle import (
    RenderConfig,
    generate_scene,
    gt_coordinates,
    observe_descriptors,
    render_view,
)


def test_scene_is_seeded():
    a = generate_scene(3, 50, descriptor_dim=16)
    assert a == generate_scene(3, 50, descriptor_dim=16)
    assert a != generate_scene(4, 50, descriptor_dim=16)
    np.testing.assert_allclose(np.linalg.norm(a.base_descriptors, axis=1), 1.0)
    assert np.all(a.positions >= -1) and np.all(a.positions <= 1)
    # view map spectral norm is the view_alpha
    assert np.linalg.norm(a.view_maps[0], ord=2) == pytest.approx(0.5)


def test_scene_validation():
    with pytest.raises(ValueError):
        generate_scene(0, 10, ((0, 0, 0), (1, 0, 1)))
    with pytest.raises(ValueError):
        generate_scene(0, 0)


def test_render_noiseless_matches_projection(small_scene, orbit_pose, render, intr):
    pose = orbit_pose(0.3)
    f = render(pose)
    assert len(f) > 50
    for kp, lid in zip(f.keypoints[:20], f.gt_landmark_ids[:20]):
        uv = project(pose, intr, small_scene.positions[lid])
        np.testing.assert_allclose(kp, uv, atol=1e-9)
    expect = observe_descriptors(small_scene, f.gt_landmark_ids, pose.center)
    expect /= np.linalg.norm(expect, axis=1, keepdims=True)
    np.testing.assert_allclose(f.descriptors, expect, atol=1e-6)
    assert f.descriptors.dtype == np.float32


def test_render_is_deterministic(orbit_pose, render):
    kw = dict(pixel_noise_sigma=1.0, descriptor_noise_sigma=0.05, artifact_prob=0.5)
    a = render(orbit_pose(1.0), seed=11, **kw)
    assert a == render(orbit_pose(1.0), seed=11, **kw)
    assert a != render(orbit_pose(1.0), seed=12, **kw)


def test_keypoint_budget_keeps_nearest(small_scene, orbit_pose, render):
    pose = orbit_pose(0.0)
    full = render(pose)
    cut = render(pose, max_keypoints=20)
    assert len(cut) == 20
    d_full = np.linalg.norm(small_scene.positions[full.gt_landmark_ids] - pose.center, axis=1)
    d_cut = np.linalg.norm(small_scene.positions[cut.gt_landmark_ids] - pose.center, axis=1)
    assert d_cut.max() <= np.sort(d_full)[19] + 1e-12


def test_corruption(small_scene, orbit_pose, render):
    f = render(orbit_pose(0.5), artifact_prob=1.0, artifact_fraction=0.9)
    assert f.corrupted
    clean = render(orbit_pose(0.5))
    same = np.sum(np.abs(f.descriptors - clean.descriptors).max(axis=1) < 1e-6)
    assert same == len(f) - int(round(0.9 * len(f)))
    assert not clean.corrupted


def test_empty_view_kept(small_scene, intr):
    from descsynth.geometry import look_at

    pose = look_at([10.0, 0, 0], [20.0, 0, 0])  # facing away
    f = render_view(small_scene, pose, intr, RenderConfig(), 0)
    assert len(f) == 0
    assert f.descriptors.shape == (0, small_scene.descriptor_dim)
    assert gt_coordinates(small_scene, f).shape == (0, 3)


def test_render_config_validation():
    with pytest.raises(ValueError):
        RenderConfig(pixel_noise_sigma=-1)
    with pytest.raises(ValueError):
        RenderConfig(artifact_prob=2)
    with pytest.raises(ValueError):
        RenderConfig(max_keypoints=0)


def test_gt_coordinates(small_scene, orbit_pose, render):
    f = render(orbit_pose(2.0))
    np.testing.assert_array_equal(gt_coordinates(small_scene, f), small_scene.positions[f.gt_landmark_ids])
    f.gt_landmark_ids = None
    with pytest.raises(ValueError):
        gt_coordinates(small_scene, f)
