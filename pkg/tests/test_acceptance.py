"""The eight acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports its measured numbers.
"""
import math
import time

import numpy as np
import pytest

from lioselect import _accel
from lioselect.core import SE3, PointCloud
from lioselect.features.descriptors import compute_descriptors
from lioselect.features.labels import budget_count, constraint_vectors, label_unique, unreliable_normals
from lioselect.features.scorer import TrainConfig, init_model, scorer_forward, scorer_gradient, scorer_train
from lioselect.features.selection import select_points
from lioselect.features.labels import label_salient
from lioselect.harness import io
from lioselect.harness.cli import main
from lioselect.harness.config import SceneConfig
from lioselect.harness.datasets import label_sequence, simulate_scene, write_dataset
from lioselect.harness.metrics import ate, roc_auc
from lioselect.harness.world import SensorRig, cast_scan, stationary_trajectory, three_plane_world
from lioselect.odometry import PipelineConfig, STAGES, run_sequence
from lioselect.preprocess import VoxelConfig, voxel_downsample
from lioselect.registration import GicpTarget, gicp_align

import conftest
from oracles import all_pairs_salient, bce, central_difference, gram_min_eig, stencil_crosses_kink

pytestmark = pytest.mark.slow


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# -- shared end-to-end data ---------------------------------------------------------

@pytest.fixture(scope="session")
def test_sequence():
    """Default two-room pass, 200 scans at 20 Hz with realistic noise."""
    seq = simulate_scene(SceneConfig(), seed=1)
    assert len(seq.scans) == 200
    return seq


@pytest.fixture(scope="session")
def test_labels(test_sequence):
    _accel.warmup()
    return label_sequence(test_sequence.scans, test_sequence.gt, PipelineConfig(), sequence_id="test")


@pytest.fixture(scope="session")
def trained_model():
    """Scorer trained on two passes that share no scans with the test pass."""
    rows = []
    for i, (scene, seed) in enumerate(((SceneConfig(reverse=True), 2),
                                       (SceneConfig(sway=0.8, sway_phase=2.0), 3))):
        seq = simulate_scene(scene, seed=seed)
        rows += label_sequence(seq.scans, seq.gt, PipelineConfig(), sequence_id=f"train{i}").scans
    return scorer_train(rows, TrainConfig()).model


@pytest.fixture(scope="session")
def runs(test_sequence, test_labels, trained_model):
    _accel.warmup()
    out = {}
    for sel, budget in (("full", 1.0), ("learned", 0.2), ("salient-unique-labels", 0.2), ("random", 0.2)):
        cfg = PipelineConfig(selector=sel, budget=budget)
        est, stats, _ = run_sequence(test_sequence.scans, test_sequence.imu, cfg, trained_model,
                                     test_labels.table)
        out[sel] = (ate(est, test_sequence.gt).rmse, stats)
    return out


# -- 1. registration oracle --------------------------------------------------------------

def test_criterion_1_registration_oracle():
    rig = SensorRig()
    gt = stationary_trajectory(SE3([1, 0, 0, 0], [2.5, 2.0, 1.2]), 0.2)
    scan, _ = cast_scan(three_plane_world(), rig, gt, 0.0)
    src = voxel_downsample(scan, VoxelConfig(0.05)).xyz
    assert len(src) >= 3000
    _accel.warmup()
    rng = np.random.default_rng(2024)
    worst_r = worst_t = 0.0
    worst_it = 0
    failures = 0
    t0 = time.perf_counter()
    for _ in range(200):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0, math.radians(10))
        d = rng.normal(size=3)
        d *= rng.uniform(0, 0.5) / np.linalg.norm(d)
        T = SE3.exp(np.concatenate([axis * angle, np.zeros(3)])) @ SE3([1, 0, 0, 0], d)
        res = gicp_align(src, GicpTarget(T.apply(src)), SE3())
        d_t, d_r = res.pose.distance(T)
        worst_r, worst_t, worst_it = max(worst_r, math.degrees(d_r)), max(worst_t, d_t), max(worst_it, res.iterations)
        if not (math.degrees(d_r) < 0.1 and d_t < 1e-3 and res.iterations <= 30):
            failures += 1
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and elapsed < 60.0
    record(1, ok, f"{len(src)} pts, 200 trials, {failures} failures, worst {worst_r:.2e} deg / "
                  f"{worst_t * 1e3:.2e} mm, max {worst_it} iterations, {elapsed:.1f} s")
    assert ok


# -- 2. gradient correctness ---------------------------------------------------------------

def test_criterion_2_gradient_correctness():
    rng = np.random.default_rng(7)
    worst = 0.0
    redrawn = 0
    for i in range(50):
        while True:
            hidden = tuple(int(h) for h in rng.integers(3, 17, size=1 + i % 3))
            model = init_model((10,) + hidden + (2,), seed=int(rng.integers(1 << 30)))
            X = rng.normal(size=(int(rng.integers(5, 40)), 10))
            # central differences are only an oracle where the loss is smooth over the stencil
            if not stencil_crosses_kink(model, X, 1e-5):
                break
            redrawn += 1
        ys, yu = rng.random(len(X)) > 0.5, rng.random(len(X)) > 0.5
        _, grads = scorer_gradient(model, X, ys, yu)
        analytic = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])
        numeric = central_difference(lambda th: bce(model.with_flat(th).layers, X, ys, yu), model.flat(), 1e-5)
        worst = max(worst, np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-12))
    ok = worst < 1e-4
    record(2, ok, f"50 model/batch pairs, 1-3 hidden layers, worst relative error {worst:.2e} (< 1e-4); "
                  f"{redrawn} draws whose stencil crossed a ReLU kink were redrawn")
    assert ok


# -- 3-5. end to end -----------------------------------------------------------------------

def test_criterion_3_accuracy_proxy(runs):
    full = runs["full"][0]
    ratios = {s: runs[s][0] / full for s in ("learned", "salient-unique-labels", "random")}
    ok = full < 0.05 and ratios["learned"] <= 1.25 and ratios["salient-unique-labels"] <= 1.25
    record(3, ok, f"ATE full {full * 1e3:.2f} mm; learned {runs['learned'][0] * 1e3:.2f} mm "
                  f"(x{ratios['learned']:.3f}); labels {runs['salient-unique-labels'][0] * 1e3:.2f} mm "
                  f"(x{ratios['salient-unique-labels']:.3f}); random {runs['random'][0] * 1e3:.2f} mm "
                  f"(x{ratios['random']:.3f}, contrast only)")
    assert ok


def test_criterion_4_memory_proxy(runs):
    full = runs["full"][1].summary()["map_bytes"]
    ratios = {s: runs[s][1].summary()["map_bytes"] / full for s in ("learned", "salient-unique-labels", "random")}
    ok = all(r <= 0.45 for r in ratios.values())
    record(4, ok, f"map bytes full {full}; " + ", ".join(f"{s} {r:.3f}" for s, r in ratios.items())
           + " of full (<= 0.45)")
    assert ok


def test_criterion_5_throughput_proxy(runs):
    timing = {s: runs[s][1].timing() for s in runs}
    worst = max(t["mean_ms_per_scan"] for t in timing.values())
    stages = timing["learned"]["stage_mean_ms"]
    ok = worst < 50.0
    record(5, ok, "mean ms/scan " + ", ".join(f"{s} {t['mean_ms_per_scan']:.1f}" for s, t in timing.items())
           + " (< 50); learned stages " + " ".join(f"{k}={stages[k]:.1f}" for k in STAGES))
    assert ok


# -- 6. selector unit suite ------------------------------------------------------------------

def test_criterion_6_selector_suite():
    rng = np.random.default_rng(6)
    # a) top-k against a sort oracle
    topk_bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 2000))
        s = np.round(rng.random(n), int(rng.integers(1, 6)))
        b = float(rng.uniform(0.01, 1.0))
        _, idx = select_points(PointCloud(np.zeros((n, 3))), s, b)
        want = sorted(sorted(range(n), key=lambda i: (-s[i], i))[:budget_count(b, n)])
        topk_bad += idx.tolist() != want

    # b) salience labels against the all-pairs oracle
    sal_bad = 0
    for _ in range(20):
        world = rng.uniform(-5, 5, size=(int(rng.integers(40, 120)), 3))
        scans, poses = [], []
        for _t in range(5):
            T = SE3.exp(rng.normal(scale=[0.05, 0.05, 0.2, 0.4, 0.4, 0.05]))
            keep = rng.random(len(world)) > 0.3
            scans.append(T.inverse().apply(world[keep] + rng.normal(scale=0.1, size=(keep.sum(), 3))))
            poses.append(T)
        window = int(rng.integers(1, 5))
        radius, quorum = float(rng.uniform(0.05, 0.3)), int(rng.integers(1, window + 1))
        got = label_salient(scans, poses, window, radius, quorum)
        want = all_pairs_salient([T.apply(s) for s, T in zip(scans, poses)], window, radius, quorum)
        sal_bad += not all(np.array_equal(a, b) for a, b in zip(got, want))

    # c) unique labels against random subsets on the corridor
    seq = simulate_scene(SceneConfig(scene="corridor"), seed=5)
    picks = np.linspace(0, len(seq.scans) - 1, 100).round().astype(int)
    wins = 0
    for k in picks:
        vox = voxel_downsample(seq.scans[k], VoxelConfig(0.25))
        desc = compute_descriptors(vox, 10)
        bad = unreliable_normals(desc)
        res = label_unique(vox, desc.normals, 0.1, bad)
        G = constraint_vectors(vox.xyz, desc.normals)
        pool = np.flatnonzero(~bad)
        m = int(res.labels.sum())
        rand = np.mean([gram_min_eig(G[rng.choice(pool, m, replace=False)]) for _ in range(100)])
        wins += gram_min_eig(G[res.labels]) > rand

    ok = topk_bad == 0 and sal_bad == 0 and wins >= 95
    record(6, ok, f"top-k {1000 - topk_bad}/1000 exact; salience {20 - sal_bad}/20 match all-pairs; "
                  f"unique beats random-subset mean in {wins}/100 corridor scans (>= 95)")
    assert ok


# -- 7. trained scorer quality ------------------------------------------------------------

def test_criterion_7_scorer_quality(trained_model, test_labels):
    X = np.concatenate([s.descriptors[s.valid] for s in test_labels.scans])
    ys = np.concatenate([s.salient[s.valid] for s in test_labels.scans])
    yu = np.concatenate([s.unique[s.valid] for s in test_labels.scans])
    scores = scorer_forward(trained_model, X)
    auc_s, auc_u = roc_auc(scores.salience, ys), roc_auc(scores.uniqueness, yu)
    ok = auc_s >= 0.85 and auc_u >= 0.85
    record(7, ok, f"held-out ROC-AUC salience {auc_s:.3f}, uniqueness {auc_u:.3f} (>= 0.85) "
                  f"on {len(X)} points")
    assert ok


# -- 8. determinism ----------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path, test_sequence, trained_model):
    scans = test_sequence.scans[:60]
    write_dataset(tmp_path / "ds", scans, test_sequence.imu, test_sequence.gt)
    io.write_model(tmp_path / "m.dfsc", trained_model)
    outputs = []
    for rep in range(2):
        for sel in ("learned", "random"):
            traj, stats = tmp_path / f"{sel}{rep}.tum", tmp_path / f"{sel}{rep}.json"
            assert main(["run", "--scans", str(tmp_path / "ds"), "--selector", sel, "--budget", "0.2",
                         "--model", str(tmp_path / "m.dfsc"), "--seed", "3",
                         "--out", str(traj), "--stats", str(stats)]) == 0
            outputs.append((traj.read_bytes(), stats.read_bytes()))
    ok = outputs[0] == outputs[2] and outputs[1] == outputs[3]
    record(8, ok, "two `run` invocations (learned, random) gave byte-identical trajectory and stats files"
           if ok else "trajectory or stats bytes differ between identical runs")
    assert ok
