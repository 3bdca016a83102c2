#!/usr/bin/env python3
"""Benchmark the numba-jitted kernels against the pure-numpy fallback.

Times the hot kernels (convolution forward/backward, average pooling,
bilinear resize, distance transform) at desk-scale and image-scale shapes,
plus one full training step, and prints a comparison table.

    python3 benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from mhenet import backend
from mhenet.kernels import load_impl


def timeit(fn, repeats):
    fn()                                  # warm-up (and JIT compile)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(rng):
    x_small = rng.standard_normal((8, 16, 32, 32))
    w_small = rng.standard_normal((16, 16, 3, 3))
    gy_small = rng.standard_normal((8, 16, 32, 32))
    x_big = rng.standard_normal((1, 3, 416, 416))
    w_big = rng.standard_normal((16, 3, 3, 3))
    fg = rng.random((416, 416)) < 0.05
    fg[100, 100] = True
    vals = rng.random((416, 416))
    return [
        ("conv fwd 8x16x32x32", lambda k: k.conv2d_forward(x_small, w_small, 1, 1, 1)),
        ("conv bwd_x 8x16x32x32", lambda k: k.conv2d_backward_input(
            gy_small, w_small, x_small.shape, 1, 1, 1)),
        ("conv bwd_w 8x16x32x32", lambda k: k.conv2d_backward_kernel(
            gy_small, x_small, w_small.shape, 1, 1, 1)),
        ("conv fwd 1x3x416x416", lambda k: k.conv2d_forward(x_big, w_big, 2, 1, 1)),
        ("avg_pool k3 8x16x32x32", lambda k: k.avg_pool_forward(x_small, 3, 1, 1)),
        ("bilinear up x2 8x16x32x32", lambda k: k.bilinear_forward(x_small, 64, 64)),
        ("edt 416x416", lambda k: k.edt_copy_nearest(fg, vals)),
    ]


def train_step_case(backend_name, repeats):
    from mhenet.data import collate, load_sample, synth_generate
    from mhenet.losses import total_loss
    from mhenet.network import MheNet, NetworkConfig
    from mhenet.optim import Adam
    from mhenet.tensor import backward
    import tempfile

    backend.set_backend(backend_name)
    root = tempfile.mkdtemp()
    manifest = synth_generate(8, 64, seed=0, root=root)
    samples = [load_sample(root, e) for e in manifest.entries]
    rgb, depth, gt = collate(samples)
    net = MheNet(NetworkConfig(input_size=(64, 64), channels=16), seed=0)
    opt = Adam(net.store, lr=1e-3)

    def step():
        out = net.forward(rgb, depth, mode="train")
        _, loss = total_loss(out, gt)
        opt.zero_grad()
        backward(loss)
        opt.step()

    return timeit(step, repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    impls = {}
    for name in ("numpy", "numba"):
        try:
            impls[name] = load_impl(name)
        except ImportError:
            print(f"backend {name!r} unavailable, skipping")
    rows = []
    for label, fn in kernel_cases(rng):
        timings = {name: timeit(lambda i=impl: fn(i), args.repeats)
                   for name, impl in impls.items()}
        rows.append((label, timings))

    print(f"\n{'kernel':28s}" + "".join(f"{n:>12s}" for n in impls) + f"{'speedup':>10s}")
    for label, timings in rows:
        cells = "".join(f"{timings[n] * 1e3:>10.2f}ms" for n in impls)
        if len(timings) == 2:
            ratio = timings["numpy"] / timings["numba"]
            cells += f"{ratio:>9.2f}x"
        print(f"{label:28s}{cells}")

    if len(impls) == 2:
        print("\nfull training step (batch 8, 64x64, width 16):")
        for name in impls:
            t = train_step_case(name, args.repeats)
            print(f"  {name:>6s}: {t * 1e3:8.1f} ms")
        backend.set_backend("auto")


if __name__ == "__main__":
    main()
