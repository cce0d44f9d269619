"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints one line per kernel with the best-of-N time for each backend and the
speedup. Inputs are sized like one rendered view / one match.
"""
import argparse
import timeit

import numpy as np

from descsynth import _kernels_py, kernels
from descsynth.geometry import PinholeIntrinsics, look_at

try:
    from descsynth import _kernels as compiled
except ImportError:
    compiled = None


def cases(rng):
    k = PinholeIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    pose = look_at([4.5, 0.5, 1.0], [0, 0, 0])
    pts = rng.uniform(-2, 2, size=(2000, 3))
    px = rng.uniform(0, 640, size=(2000, 2))
    sim_small = rng.normal(size=(256, 256))
    sim_big = rng.normal(size=(2048, 2048))
    return {
        "project_points (2000 pts)": lambda impl: kernels.project_points(pose, k, pts, impl=impl),
        "reprojection_errors (2000)": lambda impl: kernels.reprojection_errors(pose.rotation, pose.translation, k, pts, px, impl=impl),
        "top2 (256 x 256)": lambda impl: kernels.top2(sim_small, impl=impl),
        "top2 (2048 x 2048)": lambda impl: kernels.top2(sim_big, impl=impl),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    if compiled is None:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace`")
    print(f"{'kernel':30s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        n = 3 if "2048" in name else args.repeat
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=n)) * 1e3
        if compiled is None:
            print(f"{name:30s} {t_py:10.3f} {'-':>12s} {'-':>8s}")
            continue
        t_c = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=n)) * 1e3
        print(f"{name:30s} {t_py:10.3f} {t_c:12.3f} {t_py / t_c:7.2f}x")


if __name__ == "__main__":
    main()
