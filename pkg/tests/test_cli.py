import numpy as np
import pytest

from descsynth import io as dio
from descsynth.cli import main

TINY = """landmarks = 150
descriptor_dim = 32
train_views = 5
query_views = 3
n_samples = 2
max_keypoints = 128
hidden = 32,32
train_steps = 10
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "tiny.cfg").write_text(TINY)
    return tmp_path


def run(workdir, *args):
    return main([args[0], "--config", str(workdir / "tiny.cfg"), "--out", str(workdir / "out"), *args[1:]])


def test_full_stage_chain(workdir, capsys):
    out = workdir / "out"
    assert run(workdir, "synthesize-poses") == 0
    assert "pairs=8 N=2 novel=16" in capsys.readouterr().out
    assert len(dio.parse_colmap_images((out / "novel_images.txt").read_text())) == 16
    assert run(workdir, "render") == 0
    assert run(workdir, "match-filter") == 0
    lines = [ln for ln in (out / "filter_report.csv").read_text().splitlines() if not ln.startswith("#")]
    assert len(lines) == 17
    assert run(workdir, "train", "--no-synthetic") == 0
    assert run(workdir, "train", "--with-synthetic") == 0
    b = (out / "train_baseline.csv").read_text()
    a = (out / "train_augmented.csv").read_text()
    init = [ln for ln in b.splitlines() if ln.startswith("# init_checksum")]
    assert init and init[0] in a
    assert run(workdir, "evaluate", "--checkpoint", str(out / "model_augmented.ckpt")) == 0
    report = (out / "report_augmented.csv").read_text()
    assert "# config_hash=" in report and "# config.seed=0" in report
    assert len(dio.read_report(report)) == 3 + 2


def test_stages_are_idempotent(workdir):
    out = workdir / "out"
    assert run(workdir, "render") == 0
    assert run(workdir, "match-filter") == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert run(workdir, "render") == 0
    assert run(workdir, "match-filter") == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first


def test_errors_are_categorized(workdir, capsys):
    assert run(workdir, "evaluate", "--checkpoint", str(workdir / "missing.ckpt")) == 4
    assert "missing input" in capsys.readouterr().err
    assert run(workdir, "match-filter") == 4
    assert run(workdir, "synthesize-poses", "--k", "5") == 6
    assert "data error" in capsys.readouterr().err
    assert run(workdir, "render", "--k", "x") == 3
    assert "config error" in capsys.readouterr().err
    (workdir / "bad.txt").write_text("1 1 0 0 0 0 0 0 1 a\n\n2 bogus\n")
    assert run(workdir, "import-colmap", "--images", str(workdir / "bad.txt")) == 4
    assert "line 3" in capsys.readouterr().err
    (workdir / "one.txt").write_text("1 1 0 0 0 0 0 0 1 a\n\n")
    assert run(workdir, "synthesize-poses", "--poses", str(workdir / "one.txt")) == 6
    assert "fewer than 2 source poses" in capsys.readouterr().err


def test_colmap_pose_source(workdir, capsys):
    text = "1 1 0 0 0 0 0 4 1 a\n\n2 1 0 0 0 1 0 4 1 b\n\n"
    (workdir / "images.txt").write_text(text)
    assert run(workdir, "synthesize-poses", "--poses", str(workdir / "images.txt"), "--k", "1", "--n-samples", "3") == 0
    recs = dio.parse_colmap_images((workdir / "out" / "novel_images.txt").read_text())
    np.testing.assert_allclose([r.tx for r in recs], [0.25, 0.5, 0.75])
    assert run(workdir, "import-colmap", "--images", str(workdir / "images.txt")) == 0
    _, frames, _ = dio.read_dataset(workdir / "out" / "poses.dsd")
    assert [f.frame_id for f in frames] == ["a", "b"]


def test_benchmark_command(workdir, capsys):
    assert run(workdir, "benchmark", "--query-views", "2", "--train-steps", "3") == 0
    text = (workdir / "out" / "benchmark.csv").read_text()
    assert "improvement_trans_pct" in text
    assert "improvement" in capsys.readouterr().out
