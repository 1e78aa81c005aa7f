"""On-disk formats: binary scans and models, CSV IMU/labels, TUM trajectories.

Binary files are little-endian. Scans (``.dfsn``)::

    "DFSN" u32 version f64 stamp f32 scan_duration u32 count
    count * (f32 x y z intensity t_offset, u16 ring, u16 pad)

Models (``.dfsc``)::

    "DFSC" u32 version u32 n_layers
    n_layers * (u32 rows u32 cols, f32 W[rows*cols] row-major, f32 b[rows])
    f32 alpha
"""
from __future__ import annotations

import csv
import os
import struct
from pathlib import Path
from typing import List, Union

import numpy as np

from ..core import SE3, PointCloud
from ..errors import FormatError
from ..features.scorer import MODEL_VERSION, ScorerModel
from ..odometry import LabelTable
from ..preprocess import ImuBuffer
from .trajectory import Trajectory

PathLike = Union[str, os.PathLike]

SCAN_MAGIC = b"DFSN"
SCAN_VERSION = 1
MODEL_MAGIC = b"DFSC"
NO_RING = 0xFFFF

_SCAN_HEADER = struct.Struct("<4sIdfI")
_POINT = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("intensity", "<f4"),
                   ("t_offset", "<f4"), ("ring", "<u2"), ("pad", "<u2")])
IMU_HEADER = ["stamp", "gx", "gy", "gz", "ax", "ay", "az"]
LABEL_HEADER = ["scan_index", "point_index", "salient", "unique"]


# -- scans -----------------------------------------------------------------

def encode_scan(cloud: PointCloud) -> bytes:
    n = len(cloud)
    rec = np.zeros(n, dtype=_POINT)
    for i, name in enumerate("xyz"):
        rec[name] = cloud.xyz[:, i]
    rec["intensity"] = cloud.intensity
    rec["t_offset"] = cloud.t_offset
    if cloud.ring is None:
        rec["ring"] = NO_RING
    else:
        if n and (cloud.ring.min() < 0 or cloud.ring.max() >= NO_RING):
            raise FormatError(f"ring index outside [0, {NO_RING})")
        rec["ring"] = cloud.ring
    # the duration is stored as f32; never let rounding put t_offsets past it
    dur = np.float32(cloud.scan_duration)
    if n and rec["t_offset"].max() > dur:
        dur = rec["t_offset"].max()
    return _SCAN_HEADER.pack(SCAN_MAGIC, SCAN_VERSION, cloud.stamp, dur, n) + rec.tobytes()


def decode_scan(buf: bytes) -> PointCloud:
    if len(buf) < _SCAN_HEADER.size:
        raise FormatError(f"scan header truncated: {len(buf)} of {_SCAN_HEADER.size} bytes", len(buf))
    magic, version, stamp, dur, n = _SCAN_HEADER.unpack_from(buf, 0)
    if magic != SCAN_MAGIC:
        raise FormatError(f"bad scan magic {magic!r}, expected {SCAN_MAGIC!r}", 0)
    if version != SCAN_VERSION:
        raise FormatError(f"unsupported scan version {version}", 4)
    need = _SCAN_HEADER.size + n * _POINT.itemsize
    if len(buf) != need:
        raise FormatError(f"scan declares {n} points ({need} bytes) but has {len(buf)} bytes",
                          min(len(buf), need))
    rec = np.frombuffer(buf, dtype=_POINT, count=n, offset=_SCAN_HEADER.size)
    xyz = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(float)
    bad = ~np.isfinite(xyz).all(axis=1)
    if bad.any():
        raise FormatError("non-finite point coordinate", _SCAN_HEADER.size + int(np.argmax(bad)) * _POINT.itemsize)
    ring = rec["ring"].astype(np.int64)
    has_ring = ring != NO_RING
    if n and has_ring.any() and not has_ring.all():
        raise FormatError("ring present on some points but not others",
                          _SCAN_HEADER.size + int(np.argmin(has_ring)) * _POINT.itemsize + 20)
    return PointCloud(xyz, rec["intensity"].astype(float), rec["t_offset"].astype(float),
                      ring if (n and has_ring.all()) else None, stamp, float(dur))


def write_scan(path: PathLike, cloud: PointCloud) -> None:
    Path(path).write_bytes(encode_scan(cloud))


def read_scan(path: PathLike) -> PointCloud:
    try:
        return decode_scan(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def scan_paths(directory: PathLike) -> List[Path]:
    paths = sorted(Path(directory).glob("*.dfsn"))
    if not paths:
        raise FormatError(f"no .dfsn scans in {directory}")
    return paths


def read_scans(directory: PathLike) -> List[PointCloud]:
    return [read_scan(p) for p in scan_paths(directory)]


def write_scans(directory: PathLike, scans) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, cloud in enumerate(scans):
        write_scan(d / f"{i:06d}.dfsn", cloud)


# -- text formats ------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def write_imu(path: PathLike, imu: ImuBuffer) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IMU_HEADER)
        for t, g, a in zip(imu.stamps, imu.gyro, imu.accel):
            w.writerow([_fmt(t)] + [_fmt(v) for v in g] + [_fmt(v) for v in a])


def read_imu(path: PathLike) -> ImuBuffer:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and row[0].strip() == "stamp":
                continue
            if len(row) != 7:
                raise FormatError(f"{path}:{lineno}: expected 7 IMU columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric IMU field") from None
    arr = np.array(rows, dtype=float).reshape(-1, 7)
    return ImuBuffer(arr[:, 0], arr[:, 1:4], arr[:, 4:7])


def format_tum_line(stamp: float, pose: SE3) -> str:
    w, x, y, z = pose.rotation
    return " ".join(_fmt(v) for v in (stamp, *pose.translation, x, y, z, w))


def parse_tum_line(line: str):
    parts = line.split()
    if len(parts) != 8:
        raise FormatError(f"TUM line needs 8 fields, got {len(parts)}")
    try:
        stamp, tx, ty, tz, qx, qy, qz, qw = (float(p) for p in parts)
    except ValueError:
        raise FormatError("non-numeric TUM field") from None
    return stamp, SE3([qw, qx, qy, qz], [tx, ty, tz])


def write_trajectory(path: PathLike, traj: Trajectory) -> None:
    with open(path, "w") as fh:
        for stamp, pose in traj:
            fh.write(format_tum_line(stamp, pose) + "\n")


def read_trajectory(path: PathLike) -> Trajectory:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                rows.append(parse_tum_line(line))
            except FormatError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return Trajectory.from_rows(rows)


def write_labels(path: PathLike, labels: LabelTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for s in labels.scan_indices():
            pidx, sal, uni = labels.get(s)
            for p, a, b in zip(pidx.tolist(), sal.tolist(), uni.tolist()):
                w.writerow([s, p, a, b])


def read_labels(path: PathLike) -> LabelTable:
    per_scan = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LABEL_HEADER:
            raise FormatError(f"{path}: label header must be {','.join(LABEL_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            try:
                s, p, a, b = (int(v) for v in row)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: expected 4 integer columns") from None
            if a not in (0, 1) or b not in (0, 1):
                raise FormatError(f"{path}:{lineno}: labels must be 0 or 1")
            per_scan.setdefault(s, []).append((p, a, b))
    table = LabelTable()
    for s, rows in per_scan.items():
        arr = np.array(rows, dtype=np.int64)
        table.add(s, arr[:, 0], arr[:, 1], arr[:, 2])
    return table


# -- models ------------------------------------------------------------------

def encode_model(model: ScorerModel) -> bytes:
    out = [MODEL_MAGIC, struct.pack("<II", model.version, len(model.layers))]
    for W, b in model.layers:
        out.append(struct.pack("<II", *W.shape))
        out.append(np.ascontiguousarray(W, dtype="<f4").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    out.append(struct.pack("<f", model.alpha))
    return b"".join(out)


def decode_model(buf: bytes) -> ScorerModel:
    def need(off, size, what):
        if off + size > len(buf):
            raise FormatError(f"model truncated reading {what}", off)

    need(0, 12, "header")
    if buf[:4] != MODEL_MAGIC:
        raise FormatError(f"bad model magic {bytes(buf[:4])!r}, expected {MODEL_MAGIC!r}", 0)
    version, n_layers = struct.unpack_from("<II", buf, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}", 4)
    off = 12
    layers = []
    for _ in range(n_layers):
        need(off, 8, "layer shape")
        rows, cols = struct.unpack_from("<II", buf, off)
        off += 8
        need(off, 4 * (rows * cols + rows), "layer weights")
        W = np.frombuffer(buf, "<f4", rows * cols, off).reshape(rows, cols).astype(float)
        off += 4 * rows * cols
        b = np.frombuffer(buf, "<f4", rows, off).astype(float)
        off += 4 * rows
        layers.append((W, b))
    need(off, 4, "alpha")
    (alpha,) = struct.unpack_from("<f", buf, off)
    off += 4
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after model", off)
    try:
        return ScorerModel(layers, float(alpha), version)
    except Exception as exc:
        raise FormatError(f"invalid model contents: {exc}") from None


def write_model(path: PathLike, model: ScorerModel) -> None:
    Path(path).write_bytes(encode_model(model))


def read_model(path: PathLike) -> ScorerModel:
    try:
        return decode_model(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None
