import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from descsynth import io as dio
from descsynth.geometry import SE3Pose, random_rotation
from descsynth.scene_oracle import Frame, RenderConfig, generate_scene, render_view

IMAGES = """# Image list with two lines of data per image:
#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME
1 1 0 0 0 0.5 -1 2 1 frame 001.png
10.0 20.0 3 5.5 6.5 -1

2 0.7071067811865476 0 0.7071067811865476 0 1 2 3 2 b.png

"""

CAMERAS = """# comment
1 PINHOLE 640 480 500 501 320 240
2 SIMPLE_PINHOLE 100 80 90 50 40
"""


def test_parse_images():
    recs = dio.parse_colmap_images(IMAGES)
    assert [r.image_id for r in recs] == [1, 2]
    assert recs[0].name == "frame 001.png"
    assert recs[0].to_pose().translation.tolist() == [0.5, -1, 2]
    assert recs[1].camera_id == 2


def test_parse_cameras():
    cams = dio.parse_colmap_cameras(CAMERAS)
    k = cams[1].to_intrinsics()
    assert (k.fx, k.fy, k.cx, k.cy, k.width) == (90, 90, 50, 40, 100)
    assert cams[0].to_intrinsics().fy == 501


@pytest.mark.parametrize(
    "text,line",
    [
        ("1 1 0 0 0 0 0 0 1\n\n", 1),
        ("1 1 0 0 0 0 0 0 1 a\n1 2\n", 2),
        ("1 1 0 0 0 0 0 0 1 a\n\n1 2 0 0 0 0 0 0 1 b\n\n", 3),
        ("# c\n1 x 0 0 0 0 0 0 1 a\n\n", 2),
        ("1 1 0 0 0 nan 0 0 1 a\n\n", 1),
        ("1 1 0 0 0 0 0 0 1 a\n\n1 1 0 0 0 0 0 0 1 b\n\n", 3),
    ],
)
def test_parse_errors_are_located(text, line):
    with pytest.raises(dio.ColmapParseError) as exc:
        dio.parse_colmap_images(text)
    assert exc.value.lineno == line
    assert f"line {line}" in str(exc.value)


def test_camera_errors():
    for text in ["1 FISHEYE 1 1 1", "1 PINHOLE 640 480 500 500 320", "1 PINHOLE 640 480 500 500 700 240"]:
        with pytest.raises(dio.ColmapParseError):
            dio.parse_colmap_cameras(text)


def test_quaternion_renormalized_or_rejected():
    r = dio.parse_colmap_images("1 1.0005 0 0 0 0 0 0 1 a\n\n")[0]
    assert r.qw == 1.0
    with pytest.raises(dio.ColmapParseError):
        dio.parse_colmap_images("1 1.01 0 0 0 0 0 0 1 a\n\n")


def test_images_round_trip_is_byte_identical():
    rng = np.random.default_rng(0)
    recs = [
        dio.ColmapImageRecord.from_pose(i + 1, SE3Pose(random_rotation(rng), rng.normal(size=3)), 1, f"im{i}.png")
        for i in range(30)
    ]
    text = dio.write_colmap_images(recs)
    back = dio.parse_colmap_images(text)
    assert back == recs
    assert dio.write_colmap_images(back) == text
    cams = dio.parse_colmap_cameras(CAMERAS)
    assert dio.write_colmap_cameras(dio.parse_colmap_cameras(dio.write_colmap_cameras(cams))) == dio.write_colmap_cameras(cams)


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="0123456789 .-e#\nabPINHOLE", max_size=200))
def test_parser_only_raises_located_errors(text):
    for parse in (dio.parse_colmap_images, dio.parse_colmap_cameras):
        try:
            parse(text)
        except dio.ColmapParseError as exc:
            assert exc.lineno >= 1


@pytest.fixture(scope="module")
def dataset():
    scene = generate_scene(1, 60, descriptor_dim=8)
    from descsynth.geometry import PinholeIntrinsics, look_at

    k = PinholeIntrinsics(300.0, 300.0, 160.0, 120.0, 320, 240)
    frames = [
        render_view(scene, look_at([3 * math.cos(a), 3 * math.sin(a), 1], [0, 0, 0]), k,
                    RenderConfig(1.0, 0.05, 0.5), i, f"v{i}", bool(i % 2))
        for i, a in enumerate(np.linspace(0, 6, 5))
    ]
    frames[0].meta = {"anchor_a": "x", "delta": 0.25}
    frames.append(Frame("empty", frames[0].pose, k, np.zeros((0, 2)), np.zeros((0, 8), np.float32), np.zeros(0, np.int64)))
    return scene, frames


def test_dataset_round_trip(dataset):
    scene, frames = dataset
    raw = dio.encode_dataset(frames, scene, {"seed": 1}, {"a": [1, 2]})
    s2, f2, man = dio.decode_dataset(raw)
    assert s2 == scene
    assert f2 == frames
    assert man.seeds == {"seed": 1} and man.config == {"a": [1, 2]}
    assert dio.encode_dataset(f2, s2, man.seeds, man.config) == raw


def test_dataset_without_scene_or_gt(dataset):
    _, frames = dataset
    f = Frame("p", frames[1].pose, frames[1].intrinsics, frames[1].keypoints, frames[1].descriptors)
    s, back, _ = dio.decode_dataset(dio.encode_dataset([f]))
    assert s is None and back == [f]


def test_dataset_errors(dataset):
    scene, frames = dataset
    raw = dio.encode_dataset(frames, scene)
    with pytest.raises(dio.DatasetTruncatedError):
        dio.decode_dataset(raw[:-10])
    with pytest.raises(dio.DatasetTruncatedError):
        dio.decode_dataset(raw[:12])
    flipped = bytearray(raw)
    flipped[-20] ^= 0xFF
    with pytest.raises(dio.DatasetChecksumError):
        dio.decode_dataset(bytes(flipped))
    with pytest.raises(dio.DatasetError):
        dio.decode_dataset(b"NOTADATA" + raw[8:])
    with pytest.raises(dio.DatasetError):
        dio.decode_dataset(raw + b"x")
    # a different format version with a valid checksum
    mlen = struct.unpack("<Q", raw[8:16])[0]
    manifest = raw[16 : 16 + mlen].replace(b'"format_version":"1"', b'"format_version":"9"')
    import zlib

    bumped = raw[:8] + struct.pack("<Q", len(manifest)) + manifest + struct.pack("<I", zlib.crc32(manifest)) + raw[20 + mlen :]
    with pytest.raises(dio.DatasetVersionError):
        dio.decode_dataset(bumped)
    # a manifest missing keys is still a DatasetError
    bad = b"{}"
    with pytest.raises(dio.DatasetError):
        dio.decode_dataset(raw[:8] + struct.pack("<Q", 2) + bad + struct.pack("<I", zlib.crc32(bad)))


def test_dataset_file(tmp_path, dataset):
    scene, frames = dataset
    dio.write_dataset(tmp_path / "d.dsd", frames, scene)
    s, f, _ = dio.read_dataset(tmp_path / "d.dsd")
    assert f == frames


def rows(values, failed=0):
    out = [dio.FrameResult(f"q{i}", v, v / 10, 50, True) for i, v in enumerate(values)]
    out += [dio.FrameResult(f"x{i}", math.inf, math.inf, 0, False) for i in range(failed)]
    return out


def test_summary_excludes_few_failures():
    s = dio.summarize("a", rows(range(1, 21), failed=1))
    assert not s.flagged and s.failed == 1
    assert s.median_trans_cm == 10.5  # median of 1..20


def test_summary_flags_many_failures():
    s = dio.summarize("a", rows([1, 2, 3], failed=1))
    assert s.flagged
    assert s.median_trans_cm == 2.5  # median of 1, 2, 3, inf
    assert math.isinf(s.mean_trans_cm)


def test_report_round_trip():
    text = dio.write_report({"base": rows([1, 2, 3.5])}, {"config_hash": "abc"})
    assert text.startswith("# config_hash=abc\n")
    recs = dio.read_report(text)
    assert [r["frame_id"] for r in recs] == ["q0", "q1", "q2", "median", "mean"]
    assert float(recs[3]["trans_err_cm"]) == 2.0


def test_config_hash_stable():
    assert dio.config_hash({"a": 1, "b": 2}) == dio.config_hash({"b": 2, "a": 1})
    assert dio.config_hash({"a": 1}) != dio.config_hash({"a": 2})
