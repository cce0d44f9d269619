"""Compiled and numpy kernels must agree."""
import numpy as np
import pytest

from descsynth import _kernels_py, kernels
from descsynth.geometry import SE3Pose, look_at, random_rotation

try:
    from descsynth import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = [pytest.param(_kernels_py, id="python")]
BACKENDS.append(
    pytest.param(_compiled, id="compiled", marks=pytest.mark.skipif(_compiled is None, reason="extension not built"))
)


@pytest.fixture
def cloud():
    rng = np.random.default_rng(0)
    return rng.uniform(-3, 3, size=(500, 3))


@pytest.mark.parametrize("impl", BACKENDS)
def test_projection_matches_reference(impl, cloud, intr):
    pose = look_at([5, 1, 1], [0, 0, 0])
    uv, z, ok = kernels.project_points(pose, intr, cloud, impl=impl)
    xc = pose.transform(cloud)
    np.testing.assert_allclose(z, xc[:, 2], rtol=1e-13)
    front = xc[:, 2] > 0
    ref = intr.matrix @ xc[front].T
    np.testing.assert_allclose(uv[front], (ref[:2] / ref[2]).T, rtol=1e-12)
    assert np.all(np.isnan(uv[~front]))
    assert not ok[~front].any()


@pytest.mark.parametrize("impl", BACKENDS)
def test_reprojection_errors(impl, cloud, intr):
    pose = look_at([5, 1, 1], [0, 0, 0])
    uv, _, ok = kernels.project_points(pose, intr, cloud, impl=impl)
    px = np.where(np.isnan(uv), 0.0, uv) + np.array([3.0, 4.0])
    err = kernels.reprojection_errors(pose.rotation, pose.translation, intr, cloud, px, impl=impl)
    front = np.isfinite(uv[:, 0])
    np.testing.assert_allclose(err[front], 5.0, rtol=1e-9)
    assert np.all(np.isinf(err[~front]))


@pytest.mark.parametrize("impl", BACKENDS)
def test_top2_ties_and_shapes(impl):
    sim = np.array([[0.5, 0.9, 0.9], [0.1, 0.2, 0.3]])
    rbi, rb, rs, cbi, cb, cs = kernels.top2(sim, impl=impl)
    np.testing.assert_array_equal(rbi, [1, 2])
    np.testing.assert_array_equal(rb, [0.9, 0.3])
    np.testing.assert_array_equal(rs, [0.9, 0.2])
    np.testing.assert_array_equal(cbi, [0, 0, 0])
    np.testing.assert_array_equal(cs, [0.1, 0.2, 0.3])
    # single column: no second best
    _, _, rs, _, _, cs = kernels.top2(np.array([[1.0], [2.0]]), impl=impl)
    assert np.all(np.isneginf(rs))
    np.testing.assert_array_equal(cs, [1.0])


@pytest.mark.skipif(_compiled is None, reason="extension not built")
def test_backends_agree_on_random_inputs(intr):
    rng = np.random.default_rng(5)
    for _ in range(20):
        pose = SE3Pose(random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(scale=3, size=(200, 3))
        px = rng.uniform(0, 640, size=(200, 2))
        a = kernels.project_points(pose, intr, pts, impl=_kernels_py)
        b = kernels.project_points(pose, intr, pts, impl=_compiled)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12, equal_nan=True)
        e1 = kernels.reprojection_errors(pose.rotation, pose.translation, intr, pts, px, impl=_kernels_py)
        e2 = kernels.reprojection_errors(pose.rotation, pose.translation, intr, pts, px, impl=_compiled)
        np.testing.assert_allclose(e1, e2, rtol=1e-10)
        sim = rng.normal(size=(30, 40)).round(1)  # rounding creates ties
        for x, y in zip(kernels.top2(sim, impl=_kernels_py), kernels.top2(sim, impl=_compiled)):
            np.testing.assert_array_equal(x, y)


def test_backend_flag():
    assert kernels.BACKEND in ("compiled", "python")
