"""Time every accelerated kernel under both backends on scan-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--points 2500]

Also runs a short pipeline segment per backend (each in its own process,
since the backend is fixed at import time).
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from lioselect import _accel
from lioselect.harness.world import two_room_world


def _inputs(n, rng):
    pts = rng.uniform(-10, 10, size=(n, 3))
    inten = rng.uniform(0, 255, n)
    perm, dims = _accel.get("kdtree_build", "numba")(pts)
    nbr, _ = _accel.get("kdtree_knn", "numba")(pts, perm, dims, pts, 10)
    covs = _accel.get("neighborhood_cov", "numba")(pts, nbr) + 1e-4 * np.eye(3)
    corr = nbr[:, 1].copy()
    G = rng.normal(size=(n, 6))
    eligible = np.ones(n, dtype=bool)
    world = two_room_world(0)
    arrays = world.arrays()
    m = 4000
    origins = np.tile([4.0, 5.0, 1.2], (m, 1))
    d = rng.normal(size=(m, 3))
    dirs = d / np.linalg.norm(d, axis=1, keepdims=True)
    ray_args = (origins, dirs, np.zeros(m), arrays["corners"], arrays["e1"], arrays["e2"], arrays["normals"],
                arrays["gram_inv"], arrays["sph_c0"], arrays["sph_v"], arrays["sph_r"], 60.0)
    return {
        "kdtree_build": (pts,),
        "kdtree_knn": None,  # filled per backend (tree layout differs)
        "eigh3_batch": (covs,),
        "neighborhood_cov": (pts, nbr),
        "voxel_reduce": (pts, inten, 0.5),
        "gicp_accumulate": (pts, covs, np.eye(3), np.zeros(3), pts, covs, corr, True),
        "greedy_unique": (G, eligible, max(1, n // 5)),
        "raycast": ray_args,
    }, pts


def _time(fn, args, repeat):
    fn(*args)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(n, repeat):
    rng = np.random.default_rng(0)
    inputs, pts = _inputs(n, rng)
    rows = []
    for name in _accel.KERNELS:
        times = {}
        for backend in _accel.BACKENDS:
            fn = _accel.get(name, backend)
            args = inputs[name]
            if name == "kdtree_knn":
                perm, dims = _accel.get("kdtree_build", backend)(pts)
                args = (pts, perm, dims, pts, 10)
            times[backend] = _time(fn, args, 1 if (backend == "numpy" and name == "greedy_unique") else repeat)
        rows.append((name, times))
    return rows


_SEGMENT = """
import time, numpy as np
from lioselect import _accel
from lioselect.harness.world import REALISTIC_RIG, simulate, two_room_trajectory, two_room_world
from lioselect.odometry import PipelineConfig, run_sequence
_accel.warmup()
seq = simulate(two_room_world(0), REALISTIC_RIG, two_room_trajectory(), seed=1, n_scans={n})
t0 = time.perf_counter()
_, st, _ = run_sequence(seq.scans, seq.imu, PipelineConfig(selector="random"))
print(1e3 * (time.perf_counter() - t0) / len(seq.scans))
"""


def bench_pipeline(n_scans):
    out = {}
    for backend in _accel.BACKENDS:
        env = dict(os.environ, LIOSELECT_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", _SEGMENT.format(n=n_scans)], env=env,
                             capture_output=True, text=True, check=True)
        out[backend] = float(res.stdout.strip().splitlines()[-1])
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=2500)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scans", type=int, default=20, help="pipeline segment length (0 skips it)")
    args = ap.parse_args()
    _accel.warmup()
    print(f"kernels on {args.points} points (best of {args.repeat}), ms")
    print(f"{'kernel':18s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s}")
    for name, t in bench_kernels(args.points, args.repeat):
        nb, npy = t.get("numba", np.nan), t.get("numpy", np.nan)
        print(f"{name:18s} {1e3 * nb:10.3f} {1e3 * npy:10.3f} {npy / nb:8.1f}x")
    print("(the numpy kdtree_build is a no-op: that backend answers k-NN by chunked brute force)")
    if args.scans:
        seg = bench_pipeline(args.scans)
        print(f"\npipeline (random selector, {args.scans} scans), ms per scan")
        for backend, ms in seg.items():
            print(f"{backend:18s} {ms:10.2f}")


if __name__ == "__main__":
    main()
