"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Each row also confirms the two backends return identical bits.
"""

import argparse
import time

import numpy as np

from cswin import backbone
from cswin.numerics import kernels


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(rng):
    a, b = rng.normal(size=(256, 64)), rng.normal(size=(64, 64))
    yield "matmul 256x64 @ 64x64", "matmul", (a, b)
    x, w = rng.normal(size=(64, 64, 3)), rng.normal(size=(7, 7, 3, 16))
    yield "conv2d 64x64x3, 7x7/s4 -> 16", "conv2d", (x, w, 4, 3)
    x, w = rng.normal(size=(16, 16, 32)), rng.normal(size=(3, 3, 32, 64))
    yield "conv2d 16x16x32, 3x3/s2 -> 64", "conv2d", (x, w, 2, 1)
    dy = rng.normal(size=(8, 8, 64))
    yield "conv2d dkernel 16x16x32 -> 64", "conv2d_backward_kernel", (x, dy, 3, 3, 2, 1)
    alpha, beta, v = rng.normal(size=(64, 64)), rng.normal(size=(64, 64, 8)), rng.normal(size=(64, 8))
    yield "lepe_attend n=64 d=8", "lepe_attend", (alpha, beta, v)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'kernel':<34}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}{'same bits':>11}")
    for label, name, args_ in cases(rng):
        times, outs = [], []
        for b in backends:
            t, out = _time(lambda: getattr(kernels.get_backend(b), name)(*args_), args.repeat)
            times.append(t)
            outs.append(out)
        same = all(np.array_equal(outs[0], o) for o in outs[1:])
        speed = f"{times[0] / times[-1]:.1f}x" if len(times) > 1 else "-"
        print(f"{label:<34}" + "".join(f"{1e3 * t:>10.2f}ms" for t in times) + f"{speed:>10}{str(same):>11}")

    cfg = backbone.DESK
    params = backbone.init_model(cfg, 0)
    image = rng.normal(size=(32, 32, 3))
    row = []
    for b in backends:
        with kernels.use_backend(b):
            t, _ = _time(lambda: backbone.forward(image, cfg, params), args.repeat)
        row.append(t)
    speed = f"{row[0] / row[-1]:.1f}x" if len(row) > 1 else "-"
    print(f"{'desk model forward (32x32)':<34}" + "".join(f"{1e3 * t:>10.2f}ms" for t in row) + f"{speed:>10}")


if __name__ == "__main__":
    main()
