"""Compare the compiled and pure-Python kernels on the default synthetic pair.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""
from __future__ import annotations

import argparse
import importlib
import time

import numpy as np

from sparself import synth
from sparself.core import FIVE_VIEWS, RigidTransform, as_channels_last
from sparself.warp import EPS_Z, chain_transforms


def _timeit(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    k = synth.DEFAULT_INTRINSICS
    layout = synth.default_layout()
    seq = synth.render_pair(synth.plane_scene(0.5), k, layout, RigidTransform.identity(),
                            RigidTransform.from_translation(0.005, 0.0, 0.0))
    prev, cur = seq.lightfields
    rho = np.ascontiguousarray(seq.central_invdepths[1])
    pose = seq.relative_poses[0]
    rng = np.random.default_rng(0)
    h, w = rho.shape
    xs = rng.uniform(0, w - 1, h * w)
    ys = rng.uniform(0, h - 1, h * w)

    backends = {"python": importlib.import_module("sparself._kernels_py")}
    try:
        backends["cython"] = importlib.import_module("sparself._kernels")
    except ImportError:
        print("compiled extension not built; timing the Python kernels only")

    print(f"image {w}x{h}, {len(FIVE_VIEWS)} views, median of {args.repeat} runs")
    print(f"{'kernel':<24}{'backend':<10}{'ms':>10}")
    results = {}
    for name, mod in backends.items():
        src = as_channels_last(prev.center)

        def gather():
            mod.bilinear_gather(src, xs, ys)

        def loss():
            for view in FIVE_VIEWS:
                off = layout[view]
                m, b = chain_transforms(pose, None, None if view == (0, 0) else off.inverse())
                mod.warp_l1(as_channels_last(prev[view]), as_channels_last(cur.center), rho, k.as_array(),
                            m.rotation, m.translation, b.rotation, b.translation, EPS_Z)

        for kname, fn in (("bilinear_gather", gather), ("warp_l1 (5 views)", loss)):
            t = _timeit(fn, args.repeat)
            results[(kname, name)] = t
            print(f"{kname:<24}{name:<10}{1e3 * t:>10.2f}")
    if "cython" in backends:
        for kname in ("bilinear_gather", "warp_l1 (5 views)"):
            print(f"speed-up {kname}: {results[(kname, 'python')] / results[(kname, 'cython')]:.1f}x")


if __name__ == "__main__":
    main()
