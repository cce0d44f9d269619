"""COLMAP text import/export, the binary dataset container, and CSV reports."""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import statistics
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import PinholeIntrinsics, SE3Pose, quat_to_rot, rot_to_quat
from .scene_oracle import Frame, SyntheticScene

QUAT_NORM_TOL = 1e-3
DATASET_MAGIC = b"DSYNDATA"
DATASET_VERSION = "1"


class ColmapParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class DatasetError(ValueError):
    pass


class DatasetVersionError(DatasetError):
    pass


class DatasetTruncatedError(DatasetError):
    pass


class DatasetChecksumError(DatasetError):
    pass


# ---------------------------------------------------------------------------
# COLMAP text


@dataclass(frozen=True)
class ColmapImageRecord:
    image_id: int
    qw: float
    qx: float
    qy: float
    qz: float
    tx: float
    ty: float
    tz: float
    camera_id: int
    name: str

    @property
    def quaternion(self) -> np.ndarray:
        return np.array([self.qw, self.qx, self.qy, self.qz])

    def to_pose(self) -> SE3Pose:
        return SE3Pose(quat_to_rot(self.quaternion), [self.tx, self.ty, self.tz])

    @classmethod
    def from_pose(cls, image_id: int, pose: SE3Pose, camera_id: int, name: str) -> "ColmapImageRecord":
        q = rot_to_quat(pose.rotation)
        t = pose.translation
        return cls(image_id, *map(float, q), *map(float, t), camera_id, name)


@dataclass(frozen=True)
class ColmapCameraRecord:
    camera_id: int
    model: str
    width: int
    height: int
    params: tuple[float, ...]

    def to_intrinsics(self) -> PinholeIntrinsics:
        if self.model == "PINHOLE":
            fx, fy, cx, cy = self.params
        else:
            f, cx, cy = self.params
            fx = fy = f
        return PinholeIntrinsics(fx, fy, cx, cy, self.width, self.height)

    @classmethod
    def from_intrinsics(cls, camera_id: int, k: PinholeIntrinsics) -> "ColmapCameraRecord":
        return cls(camera_id, "PINHOLE", int(k.width), int(k.height), (k.fx, k.fy, k.cx, k.cy))


CAMERA_MODELS = {"PINHOLE": 4, "SIMPLE_PINHOLE": 3}


def fmt_float(x: float) -> str:
    """Shortest text that round-trips the float exactly (17 significant digits)."""
    return format(float(x), ".17g")


_fmt = fmt_float


def _int(tok: str, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ColmapParseError(lineno, f"{what} is not an integer: {tok!r}") from None


def _float(tok: str, lineno: int, what: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ColmapParseError(lineno, f"{what} is not a number: {tok!r}") from None
    if not math.isfinite(v):
        raise ColmapParseError(lineno, f"{what} is not finite: {tok!r}")
    return v


def _content_lines(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.lstrip().startswith("#"):
            continue
        yield lineno, line


def _check_points_line(line: str, lineno: int) -> None:
    toks = line.split()
    if len(toks) % 3:
        raise ColmapParseError(lineno, "points2D line must hold (X, Y, POINT3D_ID) triplets")
    for i, tok in enumerate(toks):
        try:
            float(tok) if i % 3 < 2 else int(tok)
        except ValueError:
            raise ColmapParseError(lineno, f"malformed points2D entry {tok!r}") from None


def parse_colmap_images(text: str) -> list[ColmapImageRecord]:
    """Parse COLMAP ``images.txt``: alternating pose and points2D lines, '#' comments.

    Quaternions more than 1e-3 from unit norm are rejected; others are
    renormalized (only when not already unit to within 1e-12, so that parsing
    written output is idempotent).
    """
    records: list[ColmapImageRecord] = []
    seen: set[int] = set()
    expect_pose = True
    for lineno, line in _content_lines(text):
        if not expect_pose:
            _check_points_line(line, lineno)
            expect_pose = True
            continue
        if not line.strip():
            continue
        toks = line.strip().split(maxsplit=9)
        if len(toks) < 10:
            raise ColmapParseError(lineno, f"expected 10 fields in image line, got {len(toks)}")
        image_id = _int(toks[0], lineno, "IMAGE_ID")
        vals = [_float(tok, lineno, name) for tok, name in zip(toks[1:8], ("QW", "QX", "QY", "QZ", "TX", "TY", "TZ"))]
        camera_id = _int(toks[8], lineno, "CAMERA_ID")
        name = toks[9]
        q = np.array(vals[:4])
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise ColmapParseError(lineno, f"quaternion norm {norm:.6g} is not close to 1")
        if abs(norm - 1.0) > 1e-12:
            vals[:4] = (q / norm).tolist()
        if image_id in seen:
            raise ColmapParseError(lineno, f"duplicate IMAGE_ID {image_id}")
        seen.add(image_id)
        records.append(ColmapImageRecord(image_id, *vals, camera_id, name))
        expect_pose = False
    return records


def write_colmap_images(records) -> str:
    out = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
        f"# Number of images: {len(records)}",
    ]
    for r in records:
        vals = " ".join(_fmt(v) for v in (r.qw, r.qx, r.qy, r.qz, r.tx, r.ty, r.tz))
        out.append(f"{r.image_id} {vals} {r.camera_id} {r.name}")
        out.append("")
    return "\n".join(out) + "\n"


def parse_colmap_cameras(text: str) -> list[ColmapCameraRecord]:
    records = []
    seen = set()
    for lineno, line in _content_lines(text):
        toks = line.split()
        if not toks:
            continue
        if len(toks) < 4:
            raise ColmapParseError(lineno, "camera line needs CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]")
        cam_id = _int(toks[0], lineno, "CAMERA_ID")
        model = toks[1]
        if model not in CAMERA_MODELS:
            raise ColmapParseError(lineno, f"unsupported camera model {model!r}")
        width = _int(toks[2], lineno, "WIDTH")
        height = _int(toks[3], lineno, "HEIGHT")
        params = tuple(_float(t, lineno, "PARAM") for t in toks[4:])
        if len(params) != CAMERA_MODELS[model]:
            raise ColmapParseError(lineno, f"{model} takes {CAMERA_MODELS[model]} parameters, got {len(params)}")
        if cam_id in seen:
            raise ColmapParseError(lineno, f"duplicate CAMERA_ID {cam_id}")
        seen.add(cam_id)
        rec = ColmapCameraRecord(cam_id, model, width, height, params)
        try:
            rec.to_intrinsics()
        except ValueError as exc:
            raise ColmapParseError(lineno, str(exc)) from None
        records.append(rec)
    return records


def write_colmap_cameras(records) -> str:
    out = [
        "# Camera list with one line of data per camera:",
        "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]",
        f"# Number of cameras: {len(records)}",
    ]
    for r in records:
        out.append(f"{r.camera_id} {r.model} {r.width} {r.height} " + " ".join(_fmt(p) for p in r.params))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# dataset container
#
# layout: MAGIC | u64 manifest length | manifest JSON | u32 crc32(manifest)
#         | blocks, each followed by its u32 crc32.
# Manifest offsets are relative to the first block.


@dataclass
class DatasetManifest:
    frames: list[dict]
    scene: dict | None = None
    seeds: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    format_version: str = DATASET_VERSION

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "format_version": self.format_version,
            "frames": self.frames,
            "scene": self.scene,
            "seeds": self.seeds,
        }


def _pose_json(pose: SE3Pose) -> dict:
    return {"rotation": pose.rotation.reshape(-1).tolist(), "translation": pose.translation.tolist()}


def _intr_json(k: PinholeIntrinsics) -> list:
    return [float(k.fx), float(k.fy), float(k.cx), float(k.cy), int(k.width), int(k.height)]


def _scene_blob(scene: SyntheticScene) -> bytes:
    return b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in (scene.positions, scene.base_descriptors, scene.view_maps)
    )


def _frame_blob(f: Frame) -> bytes:
    parts = [
        np.ascontiguousarray(f.keypoints, dtype="<f8").tobytes(),
        np.ascontiguousarray(f.descriptors, dtype="<f4").tobytes(),
    ]
    if f.gt_landmark_ids is not None:
        parts.append(np.ascontiguousarray(f.gt_landmark_ids, dtype="<u8").tobytes())
    return b"".join(parts)


def encode_dataset(frames, scene: SyntheticScene | None = None, seeds=None, config=None) -> bytes:
    blocks = []
    offset = 0
    scene_meta = None
    if scene is not None:
        blob = _scene_blob(scene)
        scene_meta = {
            "seed": scene.seed,
            "landmarks": len(scene),
            "descriptor_dim": scene.descriptor_dim,
            "bounds": scene.bounds.tolist(),
            "view_alpha": scene.view_alpha,
            "offset": offset,
            "length": len(blob),
            "crc32": zlib.crc32(blob),
        }
        blocks.append(blob)
        offset += len(blob) + 4
    frame_meta = []
    for f in frames:
        blob = _frame_blob(f)
        frame_meta.append(
            {
                "frame_id": f.frame_id,
                "pose": _pose_json(f.pose),
                "intrinsics": _intr_json(f.intrinsics),
                "n": len(f),
                "d": int(f.descriptors.shape[1]),
                "has_gt": f.gt_landmark_ids is not None,
                "is_synthetic": bool(f.is_synthetic),
                "corrupted": bool(f.corrupted),
                "meta": f.meta,
                "offset": offset,
                "length": len(blob),
                "crc32": zlib.crc32(blob),
            }
        )
        blocks.append(blob)
        offset += len(blob) + 4
    manifest = DatasetManifest(frame_meta, scene_meta, dict(seeds or {}), dict(config or {}))
    mbytes = json.dumps(manifest.to_json(), sort_keys=True, separators=(",", ":")).encode()
    out = [DATASET_MAGIC, struct.pack("<Q", len(mbytes)), mbytes, struct.pack("<I", zlib.crc32(mbytes))]
    for b in blocks:
        out += [b, struct.pack("<I", zlib.crc32(b))]
    return b"".join(out)


def _block(payload: memoryview, meta: dict, what: str) -> bytes:
    start, length = meta["offset"], meta["length"]
    end = start + length + 4
    if start < 0 or length < 0 or end > len(payload):
        raise DatasetTruncatedError(f"{what}: payload truncated")
    blob = bytes(payload[start : start + length])
    (crc,) = struct.unpack("<I", payload[start + length : end])
    if crc != zlib.crc32(blob) or crc != meta["crc32"]:
        raise DatasetChecksumError(f"{what}: checksum mismatch")
    return blob


def decode_dataset(data: bytes) -> tuple[SyntheticScene | None, list[Frame], DatasetManifest]:
    """Inverse of ``encode_dataset``. Every malformed input raises a ``DatasetError``."""
    try:
        return _decode(bytes(data))
    except DatasetError:
        raise
    except (KeyError, TypeError, IndexError, AttributeError, ValueError, struct.error) as exc:
        raise DatasetError(f"malformed manifest: {type(exc).__name__}: {exc}") from None


def _decode(data: bytes):
    if len(data) < len(DATASET_MAGIC) + 8:
        raise DatasetTruncatedError("file too short for a dataset header")
    if data[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise DatasetError("not a dataset container (bad magic)")
    pos = len(DATASET_MAGIC)
    (mlen,) = struct.unpack("<Q", data[pos : pos + 8])
    pos += 8
    if pos + mlen + 4 > len(data):
        raise DatasetTruncatedError("manifest truncated")
    mbytes = data[pos : pos + mlen]
    (mcrc,) = struct.unpack("<I", data[pos + mlen : pos + mlen + 4])
    if mcrc != zlib.crc32(mbytes):
        raise DatasetChecksumError("manifest checksum mismatch")
    pos += mlen + 4
    try:
        mj = json.loads(mbytes)
    except ValueError as exc:
        raise DatasetError(f"manifest is not valid JSON: {exc}") from None
    if mj.get("format_version") != DATASET_VERSION:
        raise DatasetVersionError(f"unsupported dataset version {mj.get('format_version')!r} (expected {DATASET_VERSION!r})")
    manifest = DatasetManifest(mj["frames"], mj["scene"], mj["seeds"], mj["config"], mj["format_version"])
    payload = memoryview(data)[pos:]

    expected = sum(m["length"] + 4 for m in manifest.frames)
    if manifest.scene is not None:
        expected += manifest.scene["length"] + 4
    if len(payload) < expected:
        raise DatasetTruncatedError(f"payload has {len(payload)} bytes, manifest describes {expected}")
    if len(payload) > expected:
        raise DatasetError("trailing bytes after dataset payload")

    scene = None
    if manifest.scene is not None:
        sm = manifest.scene
        blob = _block(payload, sm, "scene")
        n, d = sm["landmarks"], sm["descriptor_dim"]
        arr = np.frombuffer(blob, dtype="<f8")
        if len(arr) != n * 3 + n * d + n * d * 3:
            raise DatasetError("scene block size does not match its header")
        scene = SyntheticScene(
            seed=sm["seed"],
            bounds=np.array(sm["bounds"], dtype=np.float64),
            positions=arr[: n * 3].reshape(n, 3).copy(),
            base_descriptors=arr[n * 3 : n * 3 + n * d].reshape(n, d).copy(),
            view_maps=arr[n * 3 + n * d :].reshape(n, d, 3).copy(),
            view_alpha=sm["view_alpha"],
        )
    frames = []
    for m in manifest.frames:
        blob = _block(payload, m, f"frame {m['frame_id']!r}")
        n, d = m["n"], m["d"]
        size = n * 16 + n * d * 4 + (n * 8 if m["has_gt"] else 0)
        if len(blob) != size:
            raise DatasetError(f"frame {m['frame_id']!r}: block size does not match its header")
        kps = np.frombuffer(blob, dtype="<f8", count=2 * n).reshape(n, 2).astype(np.float64)
        desc = np.frombuffer(blob, dtype="<f4", count=n * d, offset=16 * n).reshape(n, d).astype(np.float32)
        gt = None
        if m["has_gt"]:
            gt = np.frombuffer(blob, dtype="<u8", count=n, offset=16 * n + 4 * n * d).astype(np.int64)
        p = m["pose"]
        frames.append(
            Frame(
                frame_id=m["frame_id"],
                pose=SE3Pose(np.array(p["rotation"]).reshape(3, 3), p["translation"]),
                intrinsics=PinholeIntrinsics(*m["intrinsics"]),
                keypoints=kps,
                descriptors=desc,
                gt_landmark_ids=gt,
                is_synthetic=m["is_synthetic"],
                corrupted=m["corrupted"],
                meta=m["meta"],
            )
        )
    return scene, frames, manifest


def write_dataset(path, frames, scene=None, seeds=None, config=None) -> None:
    Path(path).write_bytes(encode_dataset(frames, scene, seeds, config))


def read_dataset(path):
    return decode_dataset(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class FrameResult:
    frame_id: str
    trans_err_cm: float
    rot_err_deg: float
    inliers: int
    converged: bool


REPORT_COLUMNS = ("run_label", "frame_id", "trans_err_cm", "rot_err_deg", "inliers", "converged")


def median(values) -> float:
    """Midpoint of the two central order statistics for even counts."""
    return float(statistics.median(values)) if values else math.nan


@dataclass(frozen=True)
class RunSummary:
    label: str
    median_trans_cm: float
    median_rot_deg: float
    mean_trans_cm: float
    mean_rot_deg: float
    frames: int
    failed: int
    flagged: bool


def summarize(label: str, rows: list[FrameResult], max_failed_fraction: float = 0.05) -> RunSummary:
    """Median/mean errors. Non-converged frames are left out when they are under
    ``max_failed_fraction`` of the run; otherwise they count as infinite error
    and the run is flagged."""
    failed = [r for r in rows if not r.converged]
    flagged = bool(rows) and len(failed) >= max_failed_fraction * len(rows)
    if flagged:
        used = rows
    else:
        used = [r for r in rows if r.converged]
    te = [r.trans_err_cm if r.converged else math.inf for r in used]
    re = [r.rot_err_deg if r.converged else math.inf for r in used]
    return RunSummary(
        label,
        median(te),
        median(re),
        float(np.mean(te)) if te else math.nan,
        float(np.mean(re)) if re else math.nan,
        len(rows),
        len(failed),
        flagged,
    )


def write_report(runs: dict[str, list[FrameResult]], meta: dict | None = None, max_failed_fraction: float = 0.05) -> str:
    """CSV with one row per query frame and ``median``/``mean`` summary rows per run label.

    ``meta`` entries are written first as ``# key=value`` lines.
    """
    buf = _io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for label, rows in runs.items():
        for r in rows:
            w.writerow([label, r.frame_id, _fmt(r.trans_err_cm), _fmt(r.rot_err_deg), r.inliers, int(r.converged)])
        s = summarize(label, rows, max_failed_fraction)
        conv = f"flagged:{s.failed}/{s.frames}" if s.flagged else f"{s.frames - s.failed}/{s.frames}"
        w.writerow([label, "median", _fmt(s.median_trans_cm), _fmt(s.median_rot_deg), "", conv])
        w.writerow([label, "mean", _fmt(s.mean_trans_cm), _fmt(s.mean_rot_deg), "", conv])
    return buf.getvalue()


def read_report(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]
