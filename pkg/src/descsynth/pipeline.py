"""In-memory pipeline: reference poses -> novel poses -> rendered frames ->
filtered, labeled synthetic samples -> regressor -> PnP evaluation.

The CLI wraps these stages with file I/O; the benchmark calls them directly.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import io as dio
from .geometry import PinholeIntrinsics, SE3Pose, look_at
from .matching import filter_frame, match_descriptors, scaled_eta, transfer_labels
from .pnp import InsufficientCorrespondences, RansacConfig, pose_errors, ransac_pnp
from .pose_synthesis import InterpConfig, NovelPose, PoseEntry, PoseSet, synthesize_poses
from .regressor import RegressorParams, TrainConfig, TrainResult, predict_frame, train
from .scene_oracle import Frame, RenderConfig, SyntheticScene, generate_scene, gt_coordinates, render_view

log = logging.getLogger(__name__)


def _floats(s) -> tuple[float, ...]:
    if isinstance(s, str):
        return tuple(float(x) for x in s.split(",") if x.strip())
    return tuple(float(x) for x in s)


def _ints(s) -> tuple[int, ...]:
    if isinstance(s, str):
        return tuple(int(x) for x in s.split(",") if x.strip())
    return tuple(int(x) for x in s)


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a run, as flat keys (the config file and CLI flags use these names)."""

    seed: int = 0
    # scene
    landmarks: int = 500
    bounds_min: tuple[float, ...] = (-2.0, -2.0, -1.0)
    bounds_max: tuple[float, ...] = (2.0, 2.0, 1.0)
    descriptor_dim: int = 256
    view_alpha: float = 0.5
    # cameras
    width: int = 640
    height: int = 480
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    orbit_radius: float = 4.5
    orbit_height: float = 1.0
    pose_jitter: float = 0.25
    train_views: int = 12
    query_views: int = 40
    # pose synthesis
    k: int = 3
    n_samples: int = 40
    pair_policy: str = "dedup-unordered"
    interp_space: str = "center"
    # rendering
    pixel_noise_sigma: float = 1.0
    descriptor_noise_sigma: float = 0.02
    artifact_prob: float = 0.15
    artifact_fraction: float = 0.9
    max_keypoints: int = 2048
    # matching / filtering
    ratio: float = 0.95
    min_score: float = 0.7
    eta: float = 500.0
    scale_eta: bool = True
    # training
    learning_rate: float = 5e-4
    decay_factor: float = 0.5
    decay_interval: int = 0  # 0 -> max(1, epochs // 7)
    batch_size: int = 4
    epochs: int = 20
    train_steps: int = 0  # > 0: equal optimizer-step budget instead of an epoch count
    hidden: tuple[int, ...] = (512, 1024, 1024, 512)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    train_dtype: str = "float32"
    # evaluation
    uncertainty_floor: float = 0.0
    ransac_max_iterations: int = 1000
    inlier_threshold: float = 3.0
    confidence: float = 0.99
    min_inliers: int = 12
    max_failed_fraction: float = 0.05
    workers: int = 1  # threads for per-frame render/match/evaluate work
    # benchmark sweep
    sweep_views: tuple[int, ...] = (12,)
    sweep_seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        conv = {
            "bounds_min": _floats,
            "bounds_max": _floats,
            "hidden": _ints,
            "sweep_views": _ints,
            "sweep_seeds": _ints,
            "scale_eta": _bool,
        }
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in conv:
                v = conv[f.name](v)
            elif f.type in ("int", int):
                v = int(v)
            elif f.type in ("float", float):
                v = float(v)
            else:
                v = str(v) if f.type in ("str", str) else v
            object.__setattr__(self, f.name, v)
        if self.train_views < 2:
            raise ValueError("train_views must be >= 2")
        if self.query_views < 0:
            raise ValueError("query_views must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        # sub-config validation
        self.interp_config()
        self.render_config()
        self.train_config()
        self.ransac_config()
        self.intrinsics()

    # -- flat key/value text --------------------------------------------
    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse_text(cls, text: str) -> dict:
        out = {}
        valid = set(cls.keys())
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in valid:
                raise ValueError(f"config line {lineno}: unknown key {k!r}")
            out[k] = v
        return out

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        return cls(**{**cls.parse_text(text), **overrides})

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def hash(self) -> str:
        """Short digest of the resolved config; ``workers`` is excluded since it never changes results."""
        d = self.to_dict()
        d.pop("workers")
        return dio.config_hash(d)

    @classmethod
    def benchmark(cls, **overrides) -> "RunConfig":
        return cls(**{**BENCHMARK_PRESET, **overrides})

    # -- component configs ----------------------------------------------
    def intrinsics(self) -> PinholeIntrinsics:
        return PinholeIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def interp_config(self) -> InterpConfig:
        return InterpConfig(self.k, self.n_samples, self.pair_policy, self.interp_space)

    def render_config(self) -> RenderConfig:
        return RenderConfig(
            self.pixel_noise_sigma, self.descriptor_noise_sigma, self.artifact_prob,
            self.artifact_fraction, self.max_keypoints,
        )

    def effective_eta(self) -> int:
        if self.scale_eta:
            return scaled_eta(self.eta, self.max_keypoints)
        return int(np.ceil(self.eta))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            decay_factor=self.decay_factor,
            decay_interval=self.decay_interval or None,
            batch_size=self.batch_size,
            epochs=self.epochs,
            max_steps=self.train_steps or None,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            seed=self.seed,
            hidden=self.hidden,
            dtype=self.train_dtype,
        )

    def ransac_config(self) -> RansacConfig:
        return RansacConfig(self.ransac_max_iterations, self.inlier_threshold, self.confidence, self.min_inliers, self.seed)


# The desk-scale benchmark: N=10 novel views per pair, 256 keypoints per view,
# mild descriptor noise, and an equal optimizer-step budget for both arms.
BENCHMARK_PRESET = {
    "n_samples": 10,
    "max_keypoints": 256,
    "descriptor_noise_sigma": 0.008,
    "view_alpha": 0.3,
    "train_steps": 1000,
}


def _pmap(fn, items, workers: int) -> list:
    """Ordered map, threaded when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# scene and trajectories


def build_scene(cfg: RunConfig) -> SyntheticScene:
    return generate_scene(cfg.seed, cfg.landmarks, (cfg.bounds_min, cfg.bounds_max), cfg.descriptor_dim, cfg.view_alpha)


def _orbit_pose(cfg: RunConfig, azimuth: float, jitter: np.ndarray) -> SE3Pose:
    r = cfg.orbit_radius + jitter[0]
    center = np.array([r * np.cos(azimuth), r * np.sin(azimuth), cfg.orbit_height + jitter[1]])
    target = np.array([jitter[2], jitter[3], jitter[4]])
    return look_at(center, target)


def training_poses(cfg: RunConfig) -> PoseSet:
    """``train_views`` cameras evenly spaced on a jittered orbit, looking at the scene center."""
    rng = np.random.default_rng([cfg.seed, 0x7A1])
    intr = cfg.intrinsics()
    entries = []
    for i in range(cfg.train_views):
        az = 2 * np.pi * i / cfg.train_views
        jit = rng.uniform(-cfg.pose_jitter, cfg.pose_jitter, size=5)
        entries.append(PoseEntry(f"train_{i:04d}", _orbit_pose(cfg, az, jit), intr))
    return PoseSet(entries)


def query_poses(cfg: RunConfig) -> list[PoseEntry]:
    """Held-out cameras at seeded random azimuths on the same orbit band."""
    rng = np.random.default_rng([cfg.seed, 0x9E7])
    intr = cfg.intrinsics()
    out = []
    for i in range(cfg.query_views):
        az = rng.uniform(0, 2 * np.pi)
        jit = rng.uniform(-cfg.pose_jitter, cfg.pose_jitter, size=5)
        out.append(PoseEntry(f"query_{i:04d}", _orbit_pose(cfg, az, jit), intr))
    return out


def view_seed(seed: int, ordinal: int) -> int:
    return int(seed) ^ int(ordinal)


def render_entries(scene, entries, cfg: RunConfig, first_ordinal: int, is_synthetic=False, render_cfg=None) -> list[Frame]:
    rc = render_cfg or cfg.render_config()

    def one(item):
        i, e = item
        return render_view(scene, e.pose, e.intrinsics, rc, view_seed(cfg.seed, first_ordinal + i), e.id, is_synthetic)

    return _pmap(one, enumerate(entries), cfg.workers)


def novel_id(i: int) -> str:
    return f"novel_{i:05d}"


def render_novel(scene, novel: list[NovelPose], cfg: RunConfig, first_ordinal: int) -> list[Frame]:
    rc = cfg.render_config()

    def one(item):
        i, nv = item
        f = render_view(scene, nv.pose, nv.intrinsics, rc, view_seed(cfg.seed, first_ordinal + i), novel_id(i), True)
        f.meta = {"anchor_a": nv.anchor_a, "anchor_b": nv.anchor_b, "delta": float(nv.delta)}
        return f

    return _pmap(one, enumerate(novel), cfg.workers)


def clean_render_config(cfg: RunConfig) -> RenderConfig:
    """Reference and query views are real captures: no rendering artifacts."""
    return dataclasses.replace(cfg.render_config(), artifact_prob=0.0)


# ---------------------------------------------------------------------------
# match + filter


@dataclass
class FilterRow:
    frame_id: str
    anchor: str
    match_count: int
    accepted: bool
    corrupted: bool
    samples: int


def frame_samples(scene: SyntheticScene, frame: Frame) -> tuple[np.ndarray, np.ndarray]:
    return frame.descriptors, gt_coordinates(scene, frame)


def match_filter(scene, train_frames: list[Frame], novel_frames: list[Frame], cfg: RunConfig):
    """Match every novel frame against its anchor_a training frame and keep those with enough matches.

    Returns (accepted samples per frame as (descriptors, targets), filter rows).
    """
    by_id = {f.frame_id: f for f in train_frames}
    ref_coords = {f.frame_id: gt_coordinates(scene, f) for f in train_frames}
    eta = cfg.effective_eta()

    def one(nf):
        anchor = nf.meta["anchor_a"]
        if anchor not in by_id:
            raise KeyError(f"novel frame {nf.frame_id!r} references unknown training frame {anchor!r}")
        ref = by_id[anchor]
        m = match_descriptors(ref, nf, cfg.ratio, cfg.min_score)
        dec = filter_frame(m, eta)
        sample = None
        if dec.accepted:
            labeled = transfer_labels(m, ref, ref_coords[anchor], nf)
            if labeled:
                sample = (np.stack([s.descriptor for s in labeled]), np.stack([s.target for s in labeled]))
        n = 0 if sample is None else len(sample[0])
        return sample, FilterRow(nf.frame_id, anchor, dec.match_count, dec.accepted, nf.corrupted, n)

    out = _pmap(one, novel_frames, cfg.workers)
    return [s for s, _ in out if s is not None], [r for _, r in out]


def filter_report(rows: list[FilterRow], eta: int) -> str:
    import csv
    import io as _io

    buf = _io.StringIO()
    counts = np.array([r.match_count for r in rows]) if rows else np.zeros(0)
    buf.write(f"# eta_effective={eta}\n")
    buf.write(f"# kept={sum(r.accepted for r in rows)} discarded={sum(not r.accepted for r in rows)}\n")
    if len(counts):
        pct = np.percentile(counts, [0, 25, 50, 75, 100])
        buf.write("# match_count_percentiles(min,q1,median,q3,max)=" + ",".join(f"{v:g}" for v in pct) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame_id", "anchor", "match_count", "accepted", "corrupted", "samples"])
    for r in rows:
        w.writerow([r.frame_id, r.anchor, r.match_count, int(r.accepted), int(r.corrupted), r.samples])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# training + evaluation


def train_arm(scene, train_frames, synthetic_samples, cfg: RunConfig, with_synthetic: bool) -> TrainResult:
    data = [frame_samples(scene, f) for f in train_frames]
    if with_synthetic:
        data = data + list(synthetic_samples)
    return train(data, cfg.train_config())


def evaluate(params: RegressorParams, query_frames: list[Frame], cfg: RunConfig) -> list[dio.FrameResult]:
    rc = cfg.ransac_config()

    def one(qf):
        kps, coords, _ = predict_frame(params, qf, cfg.uncertainty_floor)
        try:
            est = ransac_pnp(kps, coords, qf.intrinsics, rc)
        except InsufficientCorrespondences:
            return dio.FrameResult(qf.frame_id, np.inf, np.inf, 0, False)
        if est.pose is None:
            return dio.FrameResult(qf.frame_id, np.inf, np.inf, 0, False)
        te, re = pose_errors(est.pose, qf.pose)
        return dio.FrameResult(qf.frame_id, te, re, len(est.inlier_indices), est.converged)

    return _pmap(one, query_frames, cfg.workers)


# ---------------------------------------------------------------------------
# whole runs


@dataclass
class PipelineData:
    scene: SyntheticScene
    poses: PoseSet
    novel: list[NovelPose]
    train_frames: list[Frame]
    query_frames: list[Frame]
    novel_frames: list[Frame]


@dataclass
class ArmResult:
    label: str
    rows: list[dio.FrameResult]
    summary: dio.RunSummary
    train: TrainResult
    samples: int
    frames: int


@dataclass
class RunResult:
    cfg: RunConfig
    arms: dict[str, ArmResult]
    filter_rows: list[FilterRow]
    timings: dict = field(default_factory=dict)

    def improvement(self, key: str = "median_trans_cm") -> float:
        """Relative improvement (base - aug) / base."""
        base = getattr(self.arms["baseline"].summary, key)
        aug = getattr(self.arms["augmented"].summary, key)
        return (base - aug) / base


def prepare(cfg: RunConfig, poses: PoseSet | None = None) -> PipelineData:
    """Render everything one run needs. ``poses`` replaces the synthetic training orbit."""
    scene = build_scene(cfg)
    poses = poses if poses is not None else training_poses(cfg)
    queries = query_poses(cfg)
    novel = synthesize_poses(poses, cfg.interp_config())
    clean = clean_render_config(cfg)
    train_frames = render_entries(scene, list(poses), cfg, 0, render_cfg=clean)
    query_frames = render_entries(scene, queries, cfg, len(poses), render_cfg=clean)
    novel_frames = render_novel(scene, novel, cfg, len(poses) + len(queries))
    return PipelineData(scene, poses, novel, train_frames, query_frames, novel_frames)


def run_arm(data: PipelineData, samples, cfg: RunConfig, label: str, with_synthetic: bool) -> ArmResult:
    tr = train_arm(data.scene, data.train_frames, samples, cfg, with_synthetic)
    rows = evaluate(tr.params, data.query_frames, cfg)
    n_frames = len(data.train_frames) + (len(samples) if with_synthetic else 0)
    n_samples = sum(len(f) for f in data.train_frames) + (sum(len(s[0]) for s in samples) if with_synthetic else 0)
    return ArmResult(label, rows, dio.summarize(label, rows, cfg.max_failed_fraction), tr, n_samples, n_frames)


def run_pipeline(cfg: RunConfig, arms=("baseline", "augmented")) -> RunResult:
    t0 = time.perf_counter()
    data = prepare(cfg)
    t1 = time.perf_counter()
    samples, rows = match_filter(data.scene, data.train_frames, data.novel_frames, cfg)
    t2 = time.perf_counter()
    results = {}
    timings = {"render_s": t1 - t0, "match_filter_s": t2 - t1}
    for label in arms:
        ts = time.perf_counter()
        results[label] = run_arm(data, samples, cfg, label, label == "augmented")
        timings[f"{label}_s"] = time.perf_counter() - ts
        log.info("%s: median %.2f cm / %.2f deg", label, results[label].summary.median_trans_cm, results[label].summary.median_rot_deg)
    return RunResult(cfg, results, rows, timings)


@dataclass
class SweepRow:
    views: int
    seed: int
    result: RunResult

    def median(self, label: str) -> float:
        return self.result.arms[label].summary.median_trans_cm


def run_sweep(cfg: RunConfig, arms=("baseline", "augmented")) -> list[SweepRow]:
    """One full run per (training view count, seed) pair of the sweep."""
    out = []
    for views in cfg.sweep_views:
        for seed in cfg.sweep_seeds:
            run_cfg = cfg.replace(train_views=views, seed=seed)
            log.info("sweep: views=%d seed=%d", views, seed)
            out.append(SweepRow(views, seed, run_pipeline(run_cfg, arms)))
    return out


def improvement_pct(base: float, aug: float) -> float:
    """(base - aug) / base in percent; nan when the baseline is 0 or not finite."""
    if not np.isfinite(base) or base == 0:
        return float("nan")
    return 100.0 * (base - aug) / base
