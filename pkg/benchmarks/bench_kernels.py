"""Time each hot kernel on the numba and numpy backends, plus one full episode.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--episode]
"""

import argparse
import timeit

import numpy as np

from v2xsim import _accel, kernels


def cases(rng):
    h, w, d = 192, 576, 64
    plane = rng.random((h, w))
    vals = rng.random((h, w, d))
    dxi = rng.integers(-4, 5, (h, w))
    dyi = rng.integers(-4, 5, (h, w))
    dxf = rng.uniform(-4, 4, (h, w))
    dyf = rng.uniform(-4, 4, (h, w))
    s, n = 3, 4000  # sources x masked cells, the shape fusion actually sees
    feats = rng.normal(size=(s, n, 1, d))
    confs = rng.random((s, n, 1))
    avail = rng.random((s, n, 1)) > 0.3
    avail[0] = True
    boxes = np.column_stack([rng.uniform(0, 144, 300), rng.uniform(0, 48, 300), rng.uniform(0.5, 5, 300),
                             rng.uniform(0.5, 2, 300), rng.uniform(-3, 3, 300)])
    k = kernels.gaussian_kernel1d(1.0)
    return {
        "separable_filter 192x576": lambda: kernels.separable_filter(plane, k),
        "warp_gather 192x576x64": lambda: kernels.warp_gather(vals, dxi, dyi),
        "warp_bilinear 192x576x64": lambda: kernels.warp_bilinear(vals, dxf, dyf),
        "fuse_attention 3x4000x64": lambda: kernels.fuse_attention(feats, confs, avail, 1),
        "boxes_to_cells 300 boxes": lambda: kernels.boxes_to_cells(h, w, 0.25, 0.0, 0.0, boxes),
    }


def best_ms(fn, repeat):
    fn()  # compile / warm caches
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--episode", action="store_true", help="also time one cv_benchmark episode per backend")
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    table = cases(np.random.default_rng(0))
    if args.episode:
        from v2xsim.scenario import load_scenario
        from v2xsim.sim import run_episode
        sc = load_scenario("cv_benchmark").with_overrides(duration_s=1.0)
        table["episode cv_benchmark 1 s dpp_apc"] = lambda: run_episode(sc, "dpp_apc", 0, collect_logs=False)

    print(f"{'kernel':36s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    prev = _accel.backend()
    try:
        for name, fn in table.items():
            row = {}
            for b in backends:
                _accel.set_backend(b)
                row[b] = best_ms(fn, args.repeat)
            line = f"{name:36s}" + "".join(f"{row[b]:10.2f}ms" for b in backends)
            if len(backends) > 1:
                line += f"{row['numpy'] / row['numba']:11.1f}x"
            print(line)
    finally:
        _accel.set_backend(prev)


if __name__ == "__main__":
    main()
