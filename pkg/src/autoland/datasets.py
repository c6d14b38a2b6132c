"""On-disk dataset formats: rendered sequences and depth datasets.

Marker sequences: one binary PGM (8-bit) per frame plus ``manifest.csv``
with columns frame_index, timestamp_s, path, qw, qx, qy, qz, tx, ty, tz,
id (the truth pose is the marker in the camera frame).

Depth datasets: one 16-bit PGM (millimeters, big-endian) per frame plus
``manifest.csv`` with columns timestamp_s, depth_path, ax, ay, az, gx,
gy, gz, a ``camera.json`` sidecar with the intrinsics, and, when ground
truth is available, ``labels.pgm`` (palette: plateau 0, crack 64, rough
128, slope 192), ``heights.pgm`` (millimeters + 32768 offset), and
``truth.json`` with grid geometry and per-frame camera poses.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, Pose
from .marker import RenderedFrame
from .pgm import read_pgm, write_pgm
from .synth_terrain import TerrainLabel, TerrainTruth
from .terrain import DepthFrame

SEQUENCE_HEADER = ["frame_index", "timestamp_s", "path", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "id"]
DEPTH_HEADER = ["timestamp_s", "depth_path", "ax", "ay", "az", "gx", "gy", "gz"]

LABEL_PALETTE = {
    TerrainLabel.PLATEAU: 0,
    TerrainLabel.CRACK: 64,
    TerrainLabel.ROUGH: 128,
    TerrainLabel.SLOPE: 192,
}
HEIGHT_OFFSET_MM = 32768


def save_camera(path, K: CameraIntrinsics) -> None:
    meta = {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height}
    with open(path, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_camera(path) -> CameraIntrinsics:
    with open(path) as f:
        meta = json.load(f)
    return CameraIntrinsics(**meta)


def save_sequence(frames: list[RenderedFrame], out_dir, K: CameraIntrinsics) -> Path:
    """Write rendered frames + manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_camera(out / "camera.json", K)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SEQUENCE_HEADER)
        for i, fr in enumerate(frames):
            name = f"frame_{i:05d}.pgm"
            write_pgm(out / name, fr.image)
            q = fr.truth_pose.rotation
            t = fr.truth_pose.translation
            writer.writerow(
                [i, repr(fr.timestamp), name]
                + [repr(float(v)) for v in (q[0], q[1], q[2], q[3], t[0], t[1], t[2])]
                + [fr.truth_id]
            )
    return manifest


def load_sequence(manifest_path) -> tuple[list[RenderedFrame], CameraIntrinsics]:
    """Read a rendered sequence back, including truth poses."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    K = load_camera(base / "camera.json")
    frames = []
    with open(manifest_path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != SEQUENCE_HEADER:
            raise ValueError(f"{manifest_path}: unexpected manifest columns {reader.fieldnames}")
        for row in reader:
            pose = Pose(
                np.array([float(row[k]) for k in ("qw", "qx", "qy", "qz")]),
                np.array([float(row[k]) for k in ("tx", "ty", "tz")]),
            )
            frames.append(
                RenderedFrame(
                    image=read_pgm(base / row["path"]).astype(np.uint8),
                    truth_pose=pose,
                    truth_id=int(row["id"]),
                    timestamp=float(row["timestamp_s"]),
                )
            )
    return frames, K


def save_depth_dataset(
    out_dir,
    frames: list[DepthFrame],
    poses: list[Pose],
    truth: TerrainTruth | None = None,
) -> Path:
    """Write depth frames + manifest (+ truth when given)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_camera(out / "camera.json", frames[0].K)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(DEPTH_HEADER)
        for i, fr in enumerate(frames):
            name = f"depth_{i:05d}.pgm"
            write_pgm(out / name, fr.depth)
            writer.writerow(
                [repr(fr.timestamp), name]
                + [repr(float(v)) for v in (*fr.accel, *fr.gyro)]
            )
    if truth is not None:
        palette = np.zeros(256, dtype=np.uint8)
        for label, value in LABEL_PALETTE.items():
            palette[int(label)] = value
        write_pgm(out / "labels.pgm", palette[truth.labels])
        heights_mm = np.clip(np.rint(truth.heights * 1000.0) + HEIGHT_OFFSET_MM, 0, 65535).astype(np.uint16)
        write_pgm(out / "heights.pgm", heights_mm)
        meta = {
            "cell_size_m": truth.cell_size,
            "extent_m": truth.extent,
            "seed": truth.seed,
            "height_offset_mm": HEIGHT_OFFSET_MM,
            "poses": [
                {"q": [float(v) for v in p.rotation], "t": [float(v) for v in p.translation]}
                for p in poses
            ],
        }
        with open(out / "truth.json", "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write("\n")
    return manifest


def load_depth_dataset(dataset_dir) -> tuple[list[DepthFrame], TerrainTruth | None, list[Pose]]:
    """Read a depth dataset; truth fields are None when absent."""
    base = Path(dataset_dir)
    K = load_camera(base / "camera.json")
    frames = []
    with open(base / "manifest.csv", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != DEPTH_HEADER:
            raise ValueError(f"{base}/manifest.csv: unexpected columns {reader.fieldnames}")
        for row in reader:
            frames.append(
                DepthFrame(
                    depth=read_pgm(base / row["depth_path"]),
                    K=K,
                    accel=np.array([float(row[k]) for k in ("ax", "ay", "az")]),
                    gyro=np.array([float(row[k]) for k in ("gx", "gy", "gz")]),
                    timestamp=float(row["timestamp_s"]),
                )
            )

    truth = None
    poses: list[Pose] = []
    truth_path = base / "truth.json"
    if truth_path.exists():
        with open(truth_path) as f:
            meta = json.load(f)
        labels_raw = read_pgm(base / "labels.pgm")
        inverse = np.zeros(256, dtype=np.uint8)
        for label, value in LABEL_PALETTE.items():
            inverse[value] = int(label)
        heights = (read_pgm(base / "heights.pgm").astype(np.float64) - meta["height_offset_mm"]) / 1000.0
        truth = TerrainTruth(
            heights=heights,
            labels=inverse[labels_raw.astype(np.uint8)],
            cell_size=meta["cell_size_m"],
            extent=meta["extent_m"],
            seed=meta["seed"],
        )
        poses = [Pose(np.array(p["q"]), np.array(p["t"])) for p in meta["poses"]]
    return frames, truth, poses
