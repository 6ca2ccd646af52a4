"""Time the compiled raster kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from hieronst import _fallback

try:
    from hieronst import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    img = rng.random((512, 512, 3), dtype=np.float32)
    small = rng.random((75, 50, 3), dtype=np.float32)
    a = np.deg2rad(7.0)
    m = np.array([[np.cos(a), np.sin(a), -12.0], [-np.sin(a), np.cos(a), 20.0]]) / 1.03
    t = rng.integers(0, 34, 100_000)
    p = rng.integers(0, 34, 100_000)
    return {
        "resize 512->128": lambda k: k.resize_bilinear(img, 128, 128),
        "resize 75x50->100": lambda k: k.resize_bilinear(small, 100, 100),
        "warp 512 fill": lambda k: k.warp_affine(img, m, 1.0, False),
        "warp 512 edge": lambda k: k.warp_affine(img, m, 0.0, True),
        "confusion 100k/34": lambda k: k.confusion_counts(t, p, 34),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, fn in cases(rng).items():
        py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:<20}{py:>10.2f}{'-':>11}{'-':>9}")
            continue
        np.testing.assert_allclose(fn(_ckernels), fn(_fallback), atol=1e-5)
        cy = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20}{py:>10.2f}{cy:>11.2f}{py / cy:>8.1f}x")


if __name__ == "__main__":
    main()
