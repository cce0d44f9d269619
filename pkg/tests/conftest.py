import numpy as np
import pytest

from descsynth.geometry import PinholeIntrinsics, look_at
from descsynth.scene_oracle import RenderConfig, generate_scene, render_view

# (criterion number, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def intr():
    return PinholeIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(7, 300, ((-1, -1, -1), (1, 1, 1)), descriptor_dim=32, view_alpha=0.3)


@pytest.fixture
def orbit_pose():
    def make(azimuth, radius=4.0, height=0.8):
        c = np.array([radius * np.cos(azimuth), radius * np.sin(azimuth), height])
        return look_at(c, np.zeros(3))

    return make


@pytest.fixture
def render(small_scene, intr):
    def make(pose, seed=0, frame_id="f", **kw):
        return render_view(small_scene, pose, intr, RenderConfig(**kw), seed, frame_id)

    return make
