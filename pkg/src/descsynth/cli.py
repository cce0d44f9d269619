"""Command-line runner for the staged pipeline.

Every stage reads and writes files under ``--out`` (inputs default to the same
directory), so stages can be run one by one or all at once with ``benchmark``.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import zipfile
from pathlib import Path

import numpy as np

from . import io as dio
from . import pipeline as pl
from .pose_synthesis import PoseEntry, PoseSet, synthesize_poses, top_k_pairs
from .regressor import load_checkpoint, save_checkpoint

log = logging.getLogger("descsynth")

TRAIN_FILE = "train.dsd"
QUERY_FILE = "query.dsd"
NOVEL_FILE = "novel.dsd"
SAMPLES_FILE = "samples.npz"


class CliError(Exception):
    """Failure with a category label and exit code."""

    def __init__(self, category: str, message: str, code: int):
        super().__init__(message)
        self.category = category
        self.code = code


EXIT_CONFIG = 3
EXIT_INPUT = 4
EXIT_IO = 5
EXIT_DATA = 6


# ---------------------------------------------------------------------------
# config + small file helpers


def resolve_config(args, preset: dict | None = None) -> pl.RunConfig:
    values = dict(preset or {})
    try:
        if args.config:
            values.update(pl.RunConfig.parse_text(Path(args.config).read_text()))
        for key in pl.RunConfig.keys():
            v = getattr(args, key, None)
            if v is not None:
                values[key] = v
        return pl.RunConfig(**values)
    except OSError as exc:
        raise CliError("io error", f"cannot read config: {exc}", EXIT_IO) from None
    except (ValueError, TypeError) as exc:
        raise CliError("config error", str(exc), EXIT_CONFIG) from None


def config_meta(cfg: pl.RunConfig) -> dict:
    meta = {"config_hash": cfg.hash()}
    for k, v in cfg.to_dict().items():
        if k == "workers":
            continue
        meta[f"config.{k}"] = ",".join(str(x) for x in v) if isinstance(v, tuple) else v
    return meta


def _config_json(cfg: pl.RunConfig) -> dict:
    d = cfg.to_dict()
    d.pop("workers")
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _write(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        path.write_text(data)
    else:
        path.write_bytes(data)
    log.info("wrote %s", path)


def _read_dataset(path: Path, what: str):
    if not path.exists():
        raise CliError("missing input", f"{what} not found at {path} (run the upstream stage first)", EXIT_INPUT)
    return dio.read_dataset(path)


def write_samples(path: Path, samples, frame_ids) -> None:
    """npz with fixed zip timestamps, so reruns are byte-identical."""
    d = samples[0][0].shape[1] if samples else 0
    arrays = {
        "descriptors": np.concatenate([s[0] for s in samples]).astype(np.float32) if samples else np.zeros((0, d), np.float32),
        "targets": np.concatenate([s[1] for s in samples]).astype(np.float64) if samples else np.zeros((0, 3)),
        "offsets": np.cumsum([0] + [len(s[0]) for s in samples]).astype(np.int64),
        "frame_ids": np.array(list(frame_ids), dtype=str),
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            member = io.BytesIO()
            np.lib.format.write_array(member, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), member.getvalue())
    _write(path, buf.getvalue())


def read_samples(path: Path):
    if not path.exists():
        raise CliError("missing input", f"samples not found at {path} (run match-filter first)", EXIT_INPUT)
    with np.load(path, allow_pickle=False) as z:
        x, y, off = z["descriptors"], z["targets"], z["offsets"]
    return [(x[a:b], y[a:b]) for a, b in zip(off[:-1], off[1:])]


def load_pose_source(path: str | None, cameras: str | None, cfg: pl.RunConfig) -> PoseSet:
    """Poses from a COLMAP images.txt, a dataset container, or the synthetic training orbit."""
    if path is None:
        return pl.training_poses(cfg)
    p = Path(path)
    if not p.exists():
        raise CliError("missing input", f"pose source not found: {p}", EXIT_INPUT)
    if p.suffix == ".dsd":
        _, frames, _ = dio.read_dataset(p)
        return PoseSet([PoseEntry(f.frame_id, f.pose, f.intrinsics) for f in frames])
    records = dio.parse_colmap_images(p.read_text())
    intr = {}
    if cameras:
        intr = {c.camera_id: c.to_intrinsics() for c in dio.parse_colmap_cameras(Path(cameras).read_text())}
    entries = []
    for r in records:
        if intr and r.camera_id not in intr:
            raise CliError("input error", f"image {r.name!r} references unknown camera {r.camera_id}", EXIT_INPUT)
        entries.append(PoseEntry(r.name, r.to_pose(), intr.get(r.camera_id, cfg.intrinsics())))
    return PoseSet(entries)


def _camera_table(intrinsics):
    ids = {}
    for k in intrinsics:
        ids.setdefault(k.as_tuple(), (len(ids) + 1, k))
    return ids


# ---------------------------------------------------------------------------
# subcommands


def cmd_synthesize_poses(args) -> int:
    cfg = resolve_config(args)
    poses = load_pose_source(args.poses, args.cameras, cfg)
    if len(poses) < 2:
        raise CliError("data error", f"fewer than 2 source poses ({len(poses)})", EXIT_DATA)
    icfg = cfg.interp_config()
    pairs = top_k_pairs(poses, icfg)
    novel = synthesize_poses(poses, icfg)
    cams = _camera_table(nv.intrinsics for nv in novel)
    images = [
        dio.ColmapImageRecord.from_pose(i + 1, nv.pose, cams[nv.intrinsics.as_tuple()][0], pl.novel_id(i))
        for i, nv in enumerate(novel)
    ]
    out = Path(args.out)
    _write(out / "novel_images.txt", dio.write_colmap_images(images))
    _write(out / "novel_cameras.txt", dio.write_colmap_cameras([dio.ColmapCameraRecord.from_intrinsics(i, k) for i, k in cams.values()]))
    buf = io.StringIO()
    buf.write(f"# config_hash={cfg.hash()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "anchor_a", "anchor_b", "delta", "step"])
    for i, nv in enumerate(novel):
        w.writerow([pl.novel_id(i), nv.anchor_a, nv.anchor_b, repr(float(nv.delta)), nv.step])
    _write(out / "novel_provenance.csv", buf.getvalue())
    print(f"poses={len(poses)} policy={icfg.pair_policy} k={icfg.k} pairs={len(pairs)} N={icfg.n_samples} novel={len(novel)}")
    return 0


def cmd_render(args) -> int:
    cfg = resolve_config(args)
    poses = load_pose_source(args.poses, args.cameras, cfg) if args.poses else None
    if poses is not None and len(poses) < 2:
        raise CliError("data error", f"fewer than 2 source poses ({len(poses)})", EXIT_DATA)
    data = pl.prepare(cfg, poses)
    out = Path(args.out)
    conf = _config_json(cfg)
    n_train, n_query = len(data.train_frames), len(data.query_frames)
    _write(out / TRAIN_FILE, dio.encode_dataset(data.train_frames, data.scene, {"seed": cfg.seed, "first_ordinal": 0}, conf))
    _write(out / QUERY_FILE, dio.encode_dataset(data.query_frames, data.scene, {"seed": cfg.seed, "first_ordinal": n_train}, conf))
    _write(out / NOVEL_FILE, dio.encode_dataset(data.novel_frames, data.scene, {"seed": cfg.seed, "first_ordinal": n_train + n_query}, conf))
    corrupted = sum(f.corrupted for f in data.novel_frames)
    print(f"train={n_train} query={n_query} novel={len(data.novel_frames)} (corrupted={corrupted})")
    return 0


def cmd_match_filter(args) -> int:
    cfg = resolve_config(args)
    src = Path(args.data or args.out)
    scene, train_frames, _ = _read_dataset(src / TRAIN_FILE, "training frames")
    _, novel_frames, _ = _read_dataset(src / NOVEL_FILE, "novel frames")
    if scene is None:
        raise CliError("input error", "training dataset carries no scene block", EXIT_INPUT)
    try:
        samples, rows = pl.match_filter(scene, train_frames, novel_frames, cfg)
    except KeyError as exc:
        raise CliError("input error", str(exc.args[0]), EXIT_INPUT) from None
    out = Path(args.out)
    write_samples(out / SAMPLES_FILE, samples, [r.frame_id for r in rows if r.samples])
    eta = cfg.effective_eta()
    _write(out / "filter_report.csv", pl.filter_report(rows, eta))
    kept = sum(r.accepted for r in rows)
    print(f"eta={eta} kept={kept} discarded={len(rows) - kept} samples={sum(len(s[0]) for s in samples)}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    src = Path(args.data or args.out)
    scene, train_frames, _ = _read_dataset(src / TRAIN_FILE, "training frames")
    samples = read_samples(src / SAMPLES_FILE) if args.with_synthetic else []
    if scene is None:
        raise CliError("input error", "training dataset carries no scene block", EXIT_INPUT)
    if not train_frames or sum(len(f) for f in train_frames) + sum(len(s[0]) for s in samples) == 0:
        raise CliError("data error", "empty training data", EXIT_DATA)
    label = "augmented" if args.with_synthetic else "baseline"
    tr = pl.train_arm(scene, train_frames, samples, cfg, args.with_synthetic)
    out = Path(args.out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / f"model_{label}.ckpt"
    buf = io.BytesIO()
    save_checkpoint(tr.params, buf)
    _write(ckpt, buf.getvalue())
    log_buf = io.StringIO()
    for k, v in {"arm": label, "init_checksum": tr.init_checksum, "steps": tr.steps, **config_meta(cfg)}.items():
        log_buf.write(f"# {k}={v}\n")
    w = csv.writer(log_buf, lineterminator="\n")
    w.writerow(["epoch", "mean_loss", "lr"])
    for i, (l, lr) in enumerate(zip(tr.loss_trace, tr.lr_trace)):
        w.writerow([i + 1, repr(float(l)), repr(float(lr))])
    _write(out / f"train_{label}.csv", log_buf.getvalue())
    print(f"arm={label} frames={len(train_frames) + len(samples)} steps={tr.steps} final_loss={tr.loss_trace[-1]:.4f} init={tr.init_checksum[:12]}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise CliError("missing input", f"checkpoint not found: {ckpt}", EXIT_INPUT)
    try:
        with open(ckpt, "rb") as fh:
            params = load_checkpoint(fh)
    except ValueError as exc:
        raise CliError("checkpoint error", f"{ckpt}: {exc}", EXIT_INPUT) from None
    src = Path(args.data or args.out)
    _, query_frames, _ = _read_dataset(src / QUERY_FILE, "query frames")
    if not query_frames:
        raise CliError("data error", "no query frames to evaluate", EXIT_DATA)
    if params.input_dim != query_frames[0].descriptor_dim:
        raise CliError("data error", f"checkpoint expects {params.input_dim}-d descriptors, queries have {query_frames[0].descriptor_dim}", EXIT_DATA)
    label = args.label or ckpt.stem.removeprefix("model_")
    rows = pl.evaluate(params, query_frames, cfg)
    meta = {"checkpoint": ckpt.name, "params_checksum": params.checksum(), **config_meta(cfg)}
    report = dio.write_report({label: rows}, meta, cfg.max_failed_fraction)
    _write(Path(args.out) / f"report_{label}.csv", report)
    s = dio.summarize(label, rows, cfg.max_failed_fraction)
    flag = " FLAGGED" if s.flagged else ""
    print(f"{label}: median {s.median_trans_cm:.2f} cm / {s.median_rot_deg:.2f} deg, failed {s.failed}/{s.frames}{flag}")
    return 0


def cmd_benchmark(args) -> int:
    cfg = resolve_config(args, pl.BENCHMARK_PRESET)
    arms = tuple(a.strip() for a in args.arms.split(",") if a.strip())
    bad = set(arms) - {"baseline", "augmented"}
    if bad or not arms:
        raise CliError("config error", f"unknown arms: {sorted(bad) or arms}", EXIT_CONFIG)
    sweep = pl.run_sweep(cfg, arms)
    paired = "baseline" in arms and "augmented" in arms

    buf = io.StringIO()
    for k, v in config_meta(cfg).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    header = ["train_views", "seed"]
    for a in arms:
        header += [f"{a}_median_cm", f"{a}_median_deg", f"{a}_failed", f"{a}_flagged", f"{a}_init"]
    if paired:
        header += ["improvement_trans_pct", "improvement_rot_pct", "synthetic_frames"]
    w.writerow(header)
    per_frame = {}
    for row in sweep:
        line = [row.views, row.seed]
        for a in arms:
            arm = row.result.arms[a]
            s = arm.summary
            line += [dio.fmt_float(s.median_trans_cm), dio.fmt_float(s.median_rot_deg), s.failed, int(s.flagged), arm.train.init_checksum[:16]]
            per_frame[f"v{row.views}_s{row.seed}_{a}"] = arm.rows
        if paired:
            b, g = row.result.arms["baseline"].summary, row.result.arms["augmented"].summary
            imp_t = pl.improvement_pct(b.median_trans_cm, g.median_trans_cm)
            imp_r = pl.improvement_pct(b.median_rot_deg, g.median_rot_deg)
            kept = sum(r.accepted for r in row.result.filter_rows)
            line += [f"{imp_t:.2f}", f"{imp_r:.2f}", kept]
            print(
                f"views={row.views} seed={row.seed}: baseline {b.median_trans_cm:.2f} cm, "
                f"augmented {g.median_trans_cm:.2f} cm, improvement {imp_t:.1f}%"
            )
        else:
            for a in arms:
                s = row.result.arms[a].summary
                print(f"views={row.views} seed={row.seed}: {a} {s.median_trans_cm:.2f} cm / {s.median_rot_deg:.2f} deg")
        w.writerow(line)
    out = Path(args.out)
    _write(out / "benchmark.csv", buf.getvalue())
    _write(out / "benchmark_frames.csv", dio.write_report(per_frame, {"config_hash": cfg.hash()}, cfg.max_failed_fraction))
    return 0


def cmd_import_colmap(args) -> int:
    cfg = resolve_config(args)
    images = Path(args.images)
    if not images.exists():
        raise CliError("missing input", f"images file not found: {images}", EXIT_INPUT)
    poses = load_pose_source(str(images), args.cameras, cfg)
    from .scene_oracle import Frame

    frames = [Frame(e.id, e.pose, e.intrinsics, np.zeros((0, 2)), np.zeros((0, 0), np.float32)) for e in poses]
    out = Path(args.out)
    _write(out / "poses.dsd", dio.encode_dataset(frames, None, {}, {"source": images.name}))
    print(f"imported {len(frames)} poses")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    g = p.add_argument_group("run config keys (override --config)")
    for key in pl.RunConfig.keys():
        g.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="descsynth", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize-poses", help="interpolate novel poses between nearby reference poses")
    p.add_argument("--poses", help="COLMAP images.txt or .dsd dataset (default: synthetic training orbit)")
    p.add_argument("--cameras", help="COLMAP cameras.txt matching --poses")
    p.set_defaults(func=cmd_synthesize_poses)

    p = sub.add_parser("render", help="render training, query and novel views from the oracle scene")
    p.add_argument("--poses", help="replace the synthetic training orbit with these poses")
    p.add_argument("--cameras")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("match-filter", help="match novel views to their anchors and keep well-matched ones")
    p.add_argument("--data", help="directory with rendered datasets (default: --out)")
    p.set_defaults(func=cmd_match_filter)

    p = sub.add_parser("train", help="train the coordinate regressor")
    p.add_argument("--data", help="directory with train.dsd / samples.npz (default: --out)")
    p.add_argument("--with-synthetic", dest="with_synthetic", action="store_true", default=True)
    p.add_argument("--no-synthetic", dest="with_synthetic", action="store_false")
    p.add_argument("--checkpoint", help="checkpoint path (default: OUT/model_<arm>.ckpt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="localize query views with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="directory with query.dsd (default: --out)")
    p.add_argument("--label", help="run label in the report (default: from checkpoint name)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="paired baseline vs augmented runs over the sparsity sweep")
    p.add_argument("--arms", default="baseline,augmented")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("import-colmap", help="convert COLMAP text poses into a pose-only dataset")
    p.add_argument("--images", required=True)
    p.add_argument("--cameras")
    p.set_defaults(func=cmd_import_colmap)

    for p in sub.choices.values():
        _add_config_flags(p)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        err = (exc.category, str(exc), exc.code)
    except dio.ColmapParseError as exc:
        err = ("parse error", str(exc), EXIT_INPUT)
    except dio.DatasetError as exc:
        err = ("dataset error", str(exc), EXIT_INPUT)
    except OSError as exc:
        err = ("io error", str(exc), EXIT_IO)
    except ValueError as exc:
        err = ("data error", str(exc), EXIT_DATA)
    print(f"descsynth: {err[0]}: {err[1]}", file=sys.stderr)
    return err[2]


if __name__ == "__main__":
    sys.exit(main())
