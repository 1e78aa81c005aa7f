"""Command line entry point: ``lioselect {run,simulate,label,train,eval,ablate}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

from .. import _accel
from ..errors import LioSelectError
from ..features.scorer import TrainConfig, scorer_train
from ..odometry import SELECTORS, run_sequence
from . import io
from .config import dump_settings, load_settings
from .datasets import label_sequence, labeled_from_table, load_dataset, simulate_scene, write_dataset
from .metrics import ate, rpe

log = logging.getLogger("lioselect")


def _dump_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _table(rows: List[dict], columns: List[str]) -> str:
    cells = [[c for c in columns]] + [[_cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(v.rjust(w) if j else v.ljust(w) for j, (v, w) in enumerate(zip(row, widths)))
             for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _cell(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return "" if v is None else str(v)


def _resolve_scans(scans_dir: str):
    d = Path(scans_dir)
    if (d / "scans").is_dir():
        return d / "scans", d
    return d, d.parent


def _load_inputs(args):
    scans_dir, root = _resolve_scans(args.scans)
    scans = io.read_scans(scans_dir)
    imu_path = args.imu
    if imu_path is None:
        for cand in (root / "imu.csv", scans_dir / "imu.csv"):
            if cand.is_file():
                imu_path = cand
                break
    imu = io.read_imu(imu_path) if imu_path is not None else None
    if imu is None:
        log.warning("no IMU file; falling back to constant-velocity prediction")
    return scans, imu


def _pipeline_settings(args):
    settings = load_settings(args.config)
    return settings.replace(selector=args.selector, budget=args.budget, seed=args.seed,
                            model_path=args.model)


def _run_once(cfg, scans, imu, labels_path=None):
    model = None
    if cfg.selector == "learned":
        if not cfg.model_path:
            raise LioSelectError("selector 'learned' needs --model FILE (train one with `lioselect train`)")
        model = io.read_model(cfg.model_path)
    labels = None
    if cfg.selector == "salient-unique-labels":
        if not labels_path:
            raise LioSelectError("selector 'salient-unique-labels' needs --labels FILE "
                                 "(generate one with `lioselect label`)")
        labels = io.read_labels(labels_path)
    return run_sequence(scans, imu, cfg, model, labels)


def _stats_document(cfg, stats):
    return {"config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
            "summary": stats.summary(),
            "realized_budget": stats.summary().get("realized_budget"),
            "scans": [r.deterministic() for r in stats.rows]}


def cmd_run(args):
    settings = _pipeline_settings(args)
    cfg = settings.pipeline
    scans, imu = _load_inputs(args)
    _accel.warmup()
    t0 = time.perf_counter()
    est, stats, _ = _run_once(cfg, scans, imu, args.labels)
    wall = time.perf_counter() - t0
    io.write_trajectory(args.out, est)
    _dump_json(args.stats, _stats_document(cfg, stats))
    timing = stats.timing()
    timing["wall_s"] = wall
    if args.timing:
        _dump_json(args.timing, timing)
    s = stats.summary()
    rows = [{"metric": k, "value": v} for k, v in s.items()]
    rows.append({"metric": "mean_ms_per_scan", "value": timing["mean_ms_per_scan"]})
    rows += [{"metric": f"  {k} ms", "value": v} for k, v in timing["stage_mean_ms"].items()]
    print(_table(rows, ["metric", "value"]))
    return 0


def cmd_simulate(args):
    settings = load_settings(args.config)
    seq = simulate_scene(settings.scene, settings.rig, args.seed)
    out = write_dataset(args.out, seq.scans, seq.imu, seq.gt)
    (out / "config.txt").write_text(dump_settings(settings))
    print(f"wrote {len(seq.scans)} scans, {len(seq.imu)} IMU samples and gt.tum to {out}")
    return 0


def cmd_label(args):
    settings = load_settings(args.config)
    ds = load_dataset(args.dataset)
    if ds.gt is None:
        raise LioSelectError(f"{args.dataset} has no gt.tum; labels need posed scans")
    _accel.warmup()
    labeled = label_sequence(ds.scans, ds.gt, settings.pipeline, args.window, args.radius, args.quorum,
                             sequence_id=str(args.dataset))
    io.write_labels(args.out, labeled.table)
    sal, uni = labeled.positive_rates()
    print(_table([{"scans": len(ds.scans), "salient_rate": sal, "unique_rate": uni}],
                 ["scans", "salient_rate", "unique_rate"]))
    return 0


def cmd_train(args):
    if len(args.dataset) != len(args.labels):
        raise LioSelectError("give one --labels file per --dataset")
    settings = load_settings(args.config)
    _accel.warmup()
    data = []
    for d, lab in zip(args.dataset, args.labels):
        ds = load_dataset(d)
        data += labeled_from_table(ds.scans, io.read_labels(lab), settings.pipeline, ds.gt, str(d))
    tc = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate, batch_size=args.batch_size,
                     seed=args.seed, alpha=settings.pipeline.alpha)
    res = scorer_train(data, tc)
    io.write_model(args.out, res.model)
    print(_table([{"epoch": i + 1, "loss": v} for i, v in enumerate(res.history)], ["epoch", "loss"]))
    return 0


def cmd_eval(args):
    est = io.read_trajectory(args.est)
    gt = io.read_trajectory(args.gt)
    a = ate(est, gt, args.align)
    doc = {"ate_rmse": a.rmse, "ate_mean": a.mean, "ate_max": a.max, "associated": a.count, "align": args.align}
    if len(est) > args.delta:
        t, r = rpe(est, gt, args.delta)
        doc.update(rpe_trans_rmse=t.rmse, rpe_rot_rmse=r.rmse, rpe_delta=args.delta)
    if args.json:
        _dump_json(args.json, doc)
    print(_table([{"metric": k, "value": v} for k, v in doc.items()], ["metric", "value"]))
    print(f"ATE {a.rmse:.3f} m")
    return 0


def cmd_ablate(args):
    settings = load_settings(args.config)
    ds = load_dataset(args.dataset)
    if ds.gt is None:
        raise LioSelectError(f"{args.dataset} has no gt.tum; ablation reports ATE against it")
    _accel.warmup()
    rows = []
    for sel in args.selectors:
        if sel == "learned" and not args.model:
            log.warning("skipping learned: no --model")
            continue
        if sel == "salient-unique-labels" and not args.labels:
            log.warning("skipping salient-unique-labels: no --labels")
            continue
        cfg = settings.replace(selector=sel, budget=args.budget if sel != "full" else 1.0,
                               seed=args.seed, model_path=args.model).pipeline
        est, stats, _ = _run_once(cfg, ds.scans, ds.imu, args.labels)
        s = stats.summary()
        rows.append({"selector": sel, "ATE_m": ate(est, ds.gt).rmse, "map_bytes": s["map_bytes"],
                     "ms_per_scan": stats.timing()["mean_ms_per_scan"], "budget": s["realized_budget"]})
    full = next((r for r in rows if r["selector"] == "full"), None)
    for r in rows:
        if full:
            r["ATE_vs_full"] = r["ATE_m"] / full["ATE_m"]
            r["mem_vs_full"] = r["map_bytes"] / full["map_bytes"]
    if args.json:
        _dump_json(args.json, rows)
    print(_table(rows, ["selector", "ATE_m", "ATE_vs_full", "map_bytes", "mem_vs_full", "ms_per_scan", "budget"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lioselect", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the odometry pipeline over a scan directory")
    r.add_argument("--scans", required=True, help="directory of .dfsn scans (or a dataset directory)")
    r.add_argument("--imu", help="IMU CSV (default: imu.csv next to the scans)")
    r.add_argument("--config", help="key = value config file")
    r.add_argument("--selector", choices=SELECTORS)
    r.add_argument("--budget", type=float)
    r.add_argument("--model", help="scorer model (.dfsc) for the learned selector")
    r.add_argument("--labels", help="label CSV for the salient-unique-labels selector")
    r.add_argument("--out", required=True, help="output trajectory (TUM)")
    r.add_argument("--stats", required=True, help="output stats JSON (deterministic)")
    r.add_argument("--timing", help="optional wall-clock timing JSON")
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    lab = sub.add_parser("label", help="generate salient/unique labels from a posed dataset")
    lab.add_argument("--dataset", required=True)
    lab.add_argument("--config")
    lab.add_argument("--out", required=True)
    lab.add_argument("--window", type=int, default=5)
    lab.add_argument("--radius", type=float, default=0.3)
    lab.add_argument("--quorum", type=int, default=3)
    lab.set_defaults(func=cmd_label)

    t = sub.add_parser("train", help="train a scorer model from labels")
    t.add_argument("--dataset", action="append", required=True)
    t.add_argument("--labels", action="append", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    t.add_argument("--learning-rate", type=float, default=TrainConfig.learning_rate)
    t.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="ATE/RPE between two TUM trajectories")
    e.add_argument("--est", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--align", choices=("se3", "none"), default="se3")
    e.add_argument("--delta", type=int, default=1)
    e.add_argument("--json")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="compare selectors on one dataset")
    a.add_argument("--dataset", required=True)
    a.add_argument("--config")
    a.add_argument("--model")
    a.add_argument("--labels")
    a.add_argument("--budget", type=float, default=0.2)
    a.add_argument("--seed", type=int)
    a.add_argument("--selectors", nargs="+", default=list(SELECTORS), choices=SELECTORS)
    a.add_argument("--json")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LioSelectError as exc:
        print(f"lioselect {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"lioselect {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
