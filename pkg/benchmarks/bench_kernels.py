#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the two hot loops (analytic ray casting and z-buffer splatting) on
generation-shaped workloads, checks that both backends produce bit-identical
results, and prints a comparison table.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from egoexo.kernels import _ref

try:
    from egoexo.kernels import _fast
except ImportError:
    _fast = None


def ray_workload(rng, n_rays, n_boxes):
    origin = rng.normal(0, 5, 3)
    origin[2] = abs(origin[2]) + 1.0
    dirs = rng.normal(0, 1, (n_rays, 3))
    yaw = rng.uniform(0, 2 * np.pi, n_boxes)
    boxes = np.column_stack([
        rng.normal(0, 15, (n_boxes, 2)), rng.uniform(0.5, 1.2, (n_boxes, 1)),
        rng.uniform(0.3, 2.5, (n_boxes, 3)), np.cos(yaw), np.sin(yaw),
    ])
    return origin, dirs, boxes


def splat_workload(rng, n_points, width, height):
    u = rng.uniform(-2, width + 2, n_points)
    v = rng.uniform(-2, height + 2, n_points)
    d = rng.uniform(0.5, 60.0, n_points)
    return u, v, d, width, height


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - start)
    return min(times), result


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = []
    # camera renders: one ray per pixel against a handful of actor boxes
    for label, (w, h, boxes) in {
        "render 128x98, 5 boxes": (128, 98, 5),
        "render 800x600, 41 boxes": (800, 600, 41),
    }.items():
        origin, dirs, box_arr = ray_workload(rng, w * h, boxes)
        cases.append((label, lambda o=origin, d=dirs, b=box_arr:
                      ("cast", o, d, b)))
    for label, (n, w, h) in {
        "splat 120k pts into 160x120": (120_000, 160, 120),
        "splat 2M pts into 800x600": (2_000_000, 800, 600),
    }.items():
        u, v, d, wd, ht = splat_workload(rng, n, w, h)
        cases.append((label, lambda uu=u, vv=v, dd=d, a=wd, b=ht:
                      ("splat", uu, vv, dd, a, b)))

    rows = []
    for label, make in cases:
        work = make()
        if work[0] == "cast":
            _, origin, dirs, boxes = work
            ref_fn = lambda: _ref.cast_rays(origin, dirs, boxes)  # noqa: E731
            fast_fn = (None if _fast is None
                       else (lambda: _fast.cast_rays(origin, dirs, boxes)))
        else:
            _, u, v, d, w, h = work
            ref_fn = lambda: _ref.zbuffer_splat(u, v, d, w, h)  # noqa: E731
            fast_fn = (None if _fast is None
                       else (lambda: _fast.zbuffer_splat(u, v, d, w, h)))

        t_ref, out_ref = best_of(ref_fn, args.repeats)
        if fast_fn is None:
            rows.append((label, t_ref, None, None, "n/a"))
            continue
        t_fast, out_fast = best_of(fast_fn, args.repeats)
        identical = all(np.array_equal(a, b) for a, b in zip(out_ref, out_fast))
        rows.append((label, t_ref, t_fast, t_ref / t_fast,
                     "bit-identical" if identical else "MISMATCH"))

    name_w = max(len(r[0]) for r in rows)
    print(f"{'case'.ljust(name_w)}  python(ms)  compiled(ms)  speedup  parity")
    for label, t_ref, t_fast, speedup, parity in rows:
        fast_s = "-" if t_fast is None else f"{t_fast * 1e3:10.2f}"
        spd = "-" if speedup is None else f"{speedup:6.1f}x"
        print(f"{label.ljust(name_w)}  {t_ref * 1e3:10.2f}  {fast_s:>12}"
              f"  {spd:>7}  {parity}")
    if _fast is None:
        print("\ncompiled extension not built; run pip install -e . first")
    if any(r[4] == "MISMATCH" for r in rows):
        raise SystemExit("backend results diverged")


if __name__ == "__main__":
    main()
