import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lioselect.core import SE3, PointCloud
from lioselect.errors import AssociationError, ConfigError, FormatError, LioSelectError
from lioselect.features.scorer import init_model
from lioselect.harness import io
from lioselect.harness.cli import main
from lioselect.harness.config import Settings, dump_settings, load_settings, parse_config
from lioselect.harness.datasets import load_dataset, simulate_scene, write_dataset
from lioselect.harness.config import SceneConfig
from lioselect.harness.metrics import align_se3, ate, roc_auc, rpe
from lioselect.harness.trajectory import Trajectory
from lioselect.harness.world import (SensorRig, SyntheticWorld, cast_scan, imu_from_trajectory, simulate,
                                     stationary_trajectory, straight_trajectory, three_plane_world)
from lioselect.odometry import LabelTable
from lioselect.preprocess import GRAVITY, deskew

from oracles import random_quat


def patch_residual(world, hit, pts):
    """Distance of each world point from the plane of the patch it hit."""
    a = world.arrays()
    return np.abs(np.einsum("ij,ij->i", pts - a["corners"][hit], a["normals"][hit]))


def wiggly(n=50, seed=0):
    r = np.random.default_rng(seed)
    poses, T = [], SE3()
    for _ in range(n):
        T = T @ SE3.exp(r.normal(scale=[0.02, 0.02, 0.05, 0.3, 0.1, 0.02]))
        poses.append(T)
    return Trajectory(np.arange(n) * 0.05, poses)


# -- simulator ----------------------------------------------------------------

def test_floor_range_closed_form():
    w = SyntheticWorld()
    w.add_rect((-100.0, -100.0, 0.0), (200.0, 0.0, 0.0), (0.0, 200.0, 0.0))
    rig = SensorRig(beams=8, azimuth_steps=90, fov_down=-40.0, fov_up=-5.0)
    gt = stationary_trajectory(SE3([1, 0, 0, 0], [0.0, 0.0, 1.0]), 0.2)
    cloud, _ = cast_scan(w, rig, gt, 0.0)
    assert len(cloud) == 8 * 90
    el = rig.elevations()[cloud.ring]
    # range = h / cos(angle from nadir), the nadir angle being 90 deg + elevation
    want = 1.0 / np.cos(np.pi / 2 + el)
    want = np.abs(want)
    np.testing.assert_allclose(np.linalg.norm(cloud.xyz, axis=1), want, rtol=0, atol=1e-9)
    np.testing.assert_allclose(cloud.xyz[:, 2], -1.0, atol=1e-9)


def test_stationary_scans_identical():
    gt = stationary_trajectory(SE3(random_quat(np.random.default_rng(1)), [2.0, 2.0, 1.0]), 0.2)
    seq = simulate(three_plane_world(), SensorRig(), gt)
    assert np.array_equal(seq.scans[0].xyz, seq.scans[1].xyz)
    assert np.array_equal(seq.scans[0].intensity, seq.scans[1].intensity)


def test_points_lie_on_patches_at_emission_time():
    gt = straight_trajectory((1.5, 1.5, 1.2), (3.0, 2.0, 1.4), 1.0)
    world = three_plane_world()
    seq = simulate(world, SensorRig(azimuth_steps=600), gt, n_scans=3)
    for cloud, hit in zip(seq.scans, seq.hit_ids):
        R, t = gt.motion(cloud.stamp, cloud.end_stamp).rt_at(cloud.stamp + cloud.t_offset)
        pw = np.einsum("nij,nj->ni", R, cloud.xyz) + t
        assert patch_residual(world, hit, pw).max() < 1e-9


def test_deskew_with_ground_truth_recovers_static_geometry():
    gt = straight_trajectory((1.5, 1.5, 1.2), (3.5, 1.5, 1.2), 2.0)  # peaks at 2 m/s
    world = three_plane_world()
    seq = simulate(world, SensorRig(), gt)
    k = len(seq.scans) // 2
    cloud = seq.scans[k]
    body = deskew(cloud, gt.motion(cloud.stamp, cloud.end_stamp))
    pw = gt.pose_at(cloud.end_stamp).apply(body.xyz)
    assert patch_residual(world, seq.hit_ids[k], pw).max() < 1e-6
    # without deskewing the same points are visibly off their patches
    raw = gt.pose_at(cloud.end_stamp).apply(cloud.xyz)
    assert patch_residual(world, seq.hit_ids[k], raw).max() > 1e-2


def test_simulated_imu_matches_kinematics():
    gt = straight_trajectory((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 2.0)
    imu = imu_from_trajectory(gt, SensorRig())
    # rest-to-rest profile: peak acceleration 2*pi*L/T^2 at t = T/4
    i = int(np.argmin(np.abs(imu.stamps - 0.5)))
    assert imu.accel[i, 0] == pytest.approx(2 * math.pi / 4.0, rel=1e-3)
    np.testing.assert_allclose(imu.accel[:, 2], -GRAVITY[2], atol=1e-9)
    assert np.abs(imu.gyro).max() < 1e-12


def test_simulation_is_byte_identical(tmp_path):
    scene = SceneConfig(scene="three-plane", duration=1.0, n_scans=4)
    a = simulate_scene(scene, seed=3)
    b = simulate_scene(scene, seed=3)
    write_dataset(tmp_path / "a", a.scans, a.imu, a.gt)
    write_dataset(tmp_path / "b", b.scans, b.imu, b.gt)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 6
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    c = simulate_scene(scene, seed=4)
    assert not np.array_equal(c.scans[0].xyz, a.scans[0].xyz)


def test_simulate_needs_a_scan_period():
    with pytest.raises(LioSelectError):
        simulate(three_plane_world(), SensorRig(), stationary_trajectory(SE3(), 0.01))


def test_world_rejects_degenerate_patch():
    with pytest.raises(LioSelectError):
        SyntheticWorld().add_rect((0, 0, 0), (1, 0, 0), (2, 0, 0))


# -- trajectories and metrics ----------------------------------------------------------

def test_trajectory_stamps_strictly_increasing():
    with pytest.raises(LioSelectError):
        Trajectory([0.0, 0.0], [SE3(), SE3()])


def test_ate_examples():
    gt = wiggly()
    assert ate(gt, gt, "none").rmse == 0.0
    assert ate(gt, gt).rmse < 1e-12
    shifted = gt.transformed(SE3([1, 0, 0, 0], [1.0, 0.0, 0.0]))
    assert ate(shifted, gt, "none").rmse == pytest.approx(1.0, abs=1e-12)
    assert ate(shifted, gt, "se3").rmse < 1e-9


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_ate_se3_invariant_to_global_transform(seed):
    r = np.random.default_rng(seed)
    gt = wiggly(seed=seed % 97)
    G = SE3(random_quat(r), r.normal(scale=20, size=3))
    assert ate(gt.transformed(G), gt).rmse < 1e-9
    noisy = Trajectory(gt.stamps, [SE3(p.rotation, p.translation + r.normal(scale=0.05, size=3)) for p in gt.poses])
    assert ate(noisy.transformed(G), gt).rmse == pytest.approx(ate(noisy, gt).rmse, abs=1e-9)


def test_alignment_matches_constructed_transform(rng):
    src = rng.normal(size=(30, 3))
    G = SE3(random_quat(rng), rng.normal(size=3))
    d_t, d_r = align_se3(src, G.apply(src)).distance(G)
    assert d_t < 1e-12 and d_r < 1e-12


def test_ate_association_errors():
    gt = wiggly(10)
    one = Trajectory([gt.stamps[3]], [gt.poses[3]])
    with pytest.raises(AssociationError):
        ate(one, gt)
    far = Trajectory(gt.stamps + 100.0, gt.poses)
    with pytest.raises(AssociationError):
        ate(far, gt)
    with pytest.raises(LioSelectError):
        ate(gt, gt, "sim3")


def test_ate_associates_within_10ms():
    gt = wiggly(20)
    est = Trajectory(gt.stamps + 0.009, gt.poses)
    assert ate(est, gt, "none").count == 20
    est = Trajectory(gt.stamps + 0.011, gt.poses)
    with pytest.raises(AssociationError):
        ate(est, gt)


def test_rpe_zero_and_offset_invariant(rng):
    gt = wiggly(30)
    t, r = rpe(gt, gt)
    assert t.max < 1e-12 and r.max < 1e-12
    G = SE3(random_quat(rng), rng.normal(scale=5, size=3))
    t, r = rpe(gt.transformed(G), gt, 3)
    assert t.max < 1e-9 and r.max < 1e-9


@pytest.mark.parametrize("delta", [1, 2, 4])
def test_rpe_corruption_touches_only_its_windows(delta):
    gt = wiggly(25)
    poses = list(gt.poses)
    k = 11
    poses[k] = poses[k] @ SE3.exp([0.0, 0.01, 0.0, 0.05, 0.0, 0.0])
    t, r = rpe(Trajectory(gt.stamps, poses), gt, delta)
    nonzero = set(np.flatnonzero(t.errors > 1e-9).tolist())
    assert nonzero == {a for a in range(25 - delta) if a == k or a + delta == k}
    assert set(np.flatnonzero(r.errors > 1e-12).tolist()) == nonzero


def test_roc_auc(rng):
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5] * 4, [0, 1, 0, 1]) == 0.5
    s, y = rng.random(300), rng.random(300) > 0.5
    pairs = np.mean([(a > b) + 0.5 * (a == b) for a in s[y] for b in s[~y]])
    assert roc_auc(s, y) == pytest.approx(pairs, abs=1e-12)
    with pytest.raises(LioSelectError):
        roc_auc([0.1, 0.2], [1, 1])


# -- file formats ------------------------------------------------------------------------

def f32_cloud(rng, n=500, ring=True):
    xyz = rng.normal(scale=10, size=(n, 3)).astype(np.float32).astype(float)
    inten = rng.uniform(0, 255, n).astype(np.float32).astype(float)
    toff = np.sort(rng.uniform(0, 0.05, n)).astype(np.float32).astype(float)
    return PointCloud(xyz, inten, toff, rng.integers(0, 16, n) if ring else None, 1234.5678, 0.05)


def test_scan_round_trip_is_bit_exact(tmp_path, rng):
    for ring in (True, False):
        c = f32_cloud(rng, ring=ring)
        io.write_scan(tmp_path / "a.dfsn", c)
        back = io.read_scan(tmp_path / "a.dfsn")
        assert np.array_equal(back.xyz, c.xyz) and np.array_equal(back.intensity, c.intensity)
        assert np.array_equal(back.t_offset, c.t_offset) and back.stamp == c.stamp
        assert (back.ring is None) == (not ring)
        assert ring is False or np.array_equal(back.ring, c.ring)
        assert io.encode_scan(back) == (tmp_path / "a.dfsn").read_bytes()


def test_scan_layout(rng):
    buf = io.encode_scan(f32_cloud(rng, n=3))
    assert buf[:4] == b"DFSN" and len(buf) == 24 + 3 * 24


def test_truncated_scan_raises_with_offset(rng):
    buf = io.encode_scan(f32_cloud(rng, n=10))
    for cut in (3, 20, len(buf) - 1):
        with pytest.raises(FormatError) as ei:
            io.decode_scan(buf[:cut])
        assert ei.value.offset is not None
    with pytest.raises(FormatError) as ei:
        io.decode_scan(b"XXXX" + buf[4:])
    assert ei.value.offset == 0
    with pytest.raises(FormatError):
        io.decode_scan(buf + b"\0")


def test_imu_round_trip(tmp_path, rng):
    gt = straight_trajectory((0, 0, 0), (1, 2, 0), 1.0)
    imu = imu_from_trajectory(gt, SensorRig(gyro_noise_density=1e-3, accel_noise_density=1e-2), rng)
    io.write_imu(tmp_path / "imu.csv", imu)
    back = io.read_imu(tmp_path / "imu.csv")
    assert np.array_equal(back.stamps, imu.stamps)
    assert np.array_equal(back.gyro, imu.gyro) and np.array_equal(back.accel, imu.accel)


def test_tum_line():
    stamp, pose = io.parse_tum_line("0.05 1.0 2.0 3.0 0 0 0 1")
    assert stamp == 0.05
    assert np.array_equal(pose.translation, [1.0, 2.0, 3.0])
    assert np.array_equal(pose.rotation, [1.0, 0.0, 0.0, 0.0])
    with pytest.raises(FormatError):
        io.parse_tum_line("0.05 1 2 3 0 0 1")


def test_trajectory_round_trip(tmp_path):
    gt = wiggly(40)
    io.write_trajectory(tmp_path / "t.tum", gt)
    back = io.read_trajectory(tmp_path / "t.tum")
    assert np.array_equal(back.stamps, gt.stamps)
    assert np.array_equal(back.translations(), gt.translations())
    assert np.array_equal(back.quaternions(), gt.quaternions())


def test_labels_round_trip(tmp_path, rng):
    t = LabelTable()
    for s in (0, 3):
        idx = rng.choice(1000, 200, replace=False)
        t.add(s, idx, rng.random(200) > 0.5, rng.random(200) > 0.8)
    io.write_labels(tmp_path / "l.csv", t)
    back = io.read_labels(tmp_path / "l.csv")
    assert back.scan_indices() == [0, 3]
    for s in (0, 3):
        for a, b in zip(t.get(s), back.get(s)):
            assert np.array_equal(a, b)
    (tmp_path / "bad.csv").write_text("scan_index,point_index,salient,unique\n0,1,2,0\n")
    with pytest.raises(FormatError):
        io.read_labels(tmp_path / "bad.csv")


def test_model_round_trip_and_truncation(tmp_path):
    m = init_model((10, 8, 2), seed=2, alpha=0.25)
    m32 = m.with_flat(m.flat().astype(np.float32).astype(float))
    io.write_model(tmp_path / "m.dfsc", m32)
    back = io.read_model(tmp_path / "m.dfsc")
    assert np.array_equal(back.flat(), m32.flat()) and back.alpha == 0.25
    buf = io.encode_model(m32)
    assert buf[:4] == b"DFSC"
    with pytest.raises(FormatError) as ei:
        io.decode_model(buf[:-3])
    assert ei.value.offset is not None
    with pytest.raises(FormatError):
        io.decode_model(b"NOPE" + buf[4:])


# -- config -----------------------------------------------------------------------------

def test_config_parsing(tmp_path):
    parts = parse_config("budget = 0.3  # fraction\nbeams=32\nscene = corridor\ndynamic = off\n")
    assert parts["pipeline"] == {"budget": 0.3}
    assert parts["rig"] == {"beams": 32}
    assert parts["scene"] == {"scene": "corridor", "dynamic": False}
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("budgett = 0.2")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("budget = 0.2\nbudget = 0.3")
    with pytest.raises(ConfigError):
        parse_config("beams = many")
    p = tmp_path / "c.txt"
    p.write_text("budget = 2.0\n")
    with pytest.raises(ConfigError):
        load_settings(str(p))


def test_config_dump_round_trip(tmp_path):
    s = Settings()
    p = tmp_path / "c.txt"
    p.write_text(dump_settings(s))
    assert load_settings(str(p)) == s


# -- CLI ---------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "sim.txt"
    cfg.write_text("scene = three-plane\nduration = 1.5\nn_scans = 12\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(d / "ds"), "--seed", "2"]) == 0
    return d


def test_cli_eval_self_is_zero(cli_dataset, capsys):
    gt = str(cli_dataset / "ds" / "gt.tum")
    assert main(["eval", "--est", gt, "--gt", gt]) == 0
    assert "ATE 0.000 m" in capsys.readouterr().out


def test_cli_run_reports_budget(cli_dataset):
    out, stats = cli_dataset / "t.tum", cli_dataset / "s.json"
    assert main(["run", "--scans", str(cli_dataset / "ds"), "--selector", "random", "--budget", "0.2",
                 "--out", str(out), "--stats", str(stats)]) == 0
    doc = json.loads(stats.read_text())
    assert doc["config"]["budget"] == 0.2
    for row in doc["scans"]:
        assert abs(row["realized_budget"] - 0.2) <= 1.0 / row["n_voxel"]
    assert abs(doc["realized_budget"] - 0.2) <= 1.0 / min(r["n_voxel"] for r in doc["scans"])
    assert len(io.read_trajectory(out)) == 12


def test_cli_label_train_ablate(cli_dataset, capsys):
    ds = str(cli_dataset / "ds")
    labels, model = str(cli_dataset / "l.csv"), str(cli_dataset / "m.dfsc")
    assert main(["label", "--dataset", ds, "--out", labels]) == 0
    assert main(["train", "--dataset", ds, "--labels", labels, "--out", model, "--epochs", "2"]) == 0
    capsys.readouterr()
    table = cli_dataset / "ablate.json"
    assert main(["ablate", "--dataset", ds, "--model", model, "--labels", labels, "--json", str(table)]) == 0
    out = capsys.readouterr().out.splitlines()
    rows = json.loads(table.read_text())
    assert [r["selector"] for r in rows] == ["full", "learned", "salient-unique-labels", "loam", "random"]
    assert out[0].split()[:4] == ["selector", "ATE_m", "ATE_vs_full", "map_bytes"]
    assert "ms_per_scan" in out[0]
    assert len(out) == 2 + 5
    for r in rows:
        assert r["ATE_m"] >= 0 and r["map_bytes"] > 0 and r["ms_per_scan"] > 0


def test_cli_errors_are_actionable(cli_dataset, capsys):
    ds = str(cli_dataset / "ds")
    assert main(["run", "--scans", ds, "--selector", "learned", "--out", "x.tum", "--stats", "x.json"]) == 1
    assert "--model" in capsys.readouterr().err
    assert main(["run", "--scans", str(cli_dataset / "nowhere"), "--out", "x.tum", "--stats", "x.json"]) == 1
    assert "error" in capsys.readouterr().err
    bad = cli_dataset / "bad.txt"
    bad.write_text("warp_factor = 9\n")
    assert main(["simulate", "--config", str(bad), "--out", str(cli_dataset / "x")]) == 1
    assert "unknown key" in capsys.readouterr().err
