"""Procedural terrain oracle: labeled heightfields and synthetic depth.

Terrain is a function z = h(east, north) (no overhangs): a gently
undulating plateau, optionally sloped, carved by crack polylines and
peppered with patches of high-frequency roughness. Every cell carries a
ground-truth label so hazard masks can be scored with per-cell
precision/recall.

``render_depth`` ray-casts the heightfield from a camera pose by
fixed-point iteration on the vertical-relief equation (valid for gentle
terrain viewed near nadir) and synthesizes IMU samples consistent with
the camera attitude, closing the loop with the pipeline's attitude
estimator.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .geometry import CameraIntrinsics, Pose, attitude_to_rotation, quat_to_matrix
from .terrain import GRAVITY, SENSOR_LEVEL_FRAME, DepthFrame


class CameraBelowTerrain(ValueError):
    """The camera sits at or below the terrain surface."""


class TerrainLabel(enum.IntEnum):
    PLATEAU = 0
    CRACK = 1
    ROUGH = 2
    SLOPE = 3


@dataclass(frozen=True)
class TerrainParams:
    extent: float = 10.0  # m, square side
    cell_size: float = 0.05  # m
    undulation_amplitude: float = 0.08  # m, total plateau relief
    undulation_cycles: float = 2.0  # waves across the extent
    slope_east: float = 0.0  # regional slope, rise/run
    slope_north: float = 0.0
    num_cracks: int = 2
    crack_width_range: tuple[float, float] = (0.2, 0.6)
    crack_depth_range: tuple[float, float] = (0.3, 1.0)
    num_rough_patches: int = 2
    rough_radius_range: tuple[float, float] = (0.6, 1.5)
    # Blocky rubble relief: large std over a short correlation length, as
    # on a blocky solidified flow. Gentler values slip under the slope
    # threshold once the map is smoothed.
    rough_sigma: float = 0.28  # m, height std inside a patch
    rough_correlation: float = 1.2  # cells
    label_slope_threshold: float = math.tan(math.radians(30.0))


@dataclass(frozen=True, eq=False)
class TerrainTruth:
    """Heightfield plus per-cell labels; deterministic in the seed."""

    heights: np.ndarray  # (n, n) m
    labels: np.ndarray  # (n, n) uint8 of TerrainLabel
    cell_size: float
    extent: float
    seed: int

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """East/north cell-center coordinate grids, centered on 0."""
        n = self.heights.shape[0]
        c = (np.arange(n) + 0.5) * self.cell_size - self.extent / 2.0
        return np.meshgrid(c, c)

    def height_at(self, east: np.ndarray, north: np.ndarray) -> np.ndarray:
        """Bilinear height lookup; NaN outside the grid."""
        n = self.heights.shape[0]
        fe = (np.asarray(east) + self.extent / 2.0) / self.cell_size - 0.5
        fn = (np.asarray(north) + self.extent / 2.0) / self.cell_size - 0.5
        out = np.full(np.broadcast(fe, fn).shape, np.nan)
        inside = (fe >= 0) & (fn >= 0) & (fe <= n - 1) & (fn <= n - 1)
        fe_c = np.clip(fe, 0, n - 1.001)
        fn_c = np.clip(fn, 0, n - 1.001)
        i0 = fn_c.astype(np.int64)
        j0 = fe_c.astype(np.int64)
        dv = fn_c - i0
        du = fe_c - j0
        h = self.heights
        top = h[i0, j0] * (1 - du) + h[i0, j0 + 1] * du
        bot = h[i0 + 1, j0] * (1 - du) + h[i0 + 1, j0 + 1] * du
        vals = top * (1 - dv) + bot * dv
        out[inside] = vals[inside] if vals.shape else float(vals)
        return out

    def label_at(self, east: np.ndarray, north: np.ndarray) -> np.ndarray:
        """Nearest-cell label lookup; 255 outside the grid."""
        n = self.labels.shape[0]
        j = np.rint((np.asarray(east) + self.extent / 2.0) / self.cell_size - 0.5).astype(np.int64)
        i = np.rint((np.asarray(north) + self.extent / 2.0) / self.cell_size - 0.5).astype(np.int64)
        inside = (i >= 0) & (j >= 0) & (i < n) & (j < n)
        out = np.full(np.broadcast(i, j).shape, 255, dtype=np.uint8)
        out[inside] = self.labels[np.clip(i, 0, n - 1), np.clip(j, 0, n - 1)][inside]
        return out

    @property
    def hazardous(self) -> np.ndarray:
        """Ground-truth positive class: cracks, rough patches, steep base."""
        return self.labels != TerrainLabel.PLATEAU


def generate_terrain(params: TerrainParams, seed: int) -> TerrainTruth:
    """Build one labeled synthetic terrain."""
    rng = np.random.default_rng(seed)
    n = int(round(params.extent / params.cell_size))
    c = (np.arange(n) + 0.5) * params.cell_size - params.extent / 2.0
    east, north = np.meshgrid(c, c)

    # Plateau undulation: a few random low-frequency sinusoids scaled so
    # the summed amplitude stays within the configured relief.
    base = np.zeros((n, n))
    amps = rng.uniform(0.4, 1.0, 3)
    amps *= (params.undulation_amplitude / 2.0) / amps.sum()
    for amp in amps:
        heading = rng.uniform(0, 2 * math.pi)
        cycles = rng.uniform(0.5, params.undulation_cycles)
        phase = rng.uniform(0, 2 * math.pi)
        k = 2 * math.pi * cycles / params.extent
        base += amp * np.sin(k * (east * math.cos(heading) + north * math.sin(heading)) + phase)
    base += params.slope_east * east + params.slope_north * north

    # Base-slope label before any carving.
    gn, ge = np.gradient(base, params.cell_size)
    labels = np.where(
        np.hypot(ge, gn) > params.label_slope_threshold, int(TerrainLabel.SLOPE), int(TerrainLabel.PLATEAU)
    ).astype(np.uint8)
    heights = base.copy()

    # Rough patches: band-limited noise, tapered at the patch rim so the
    # patch boundary itself is not an artificial cliff.
    for _ in range(params.num_rough_patches):
        radius = rng.uniform(*params.rough_radius_range)
        margin = params.extent / 2.0 - radius - 0.2
        if margin <= 0:
            continue
        cx, cy = rng.uniform(-margin, margin, 2)
        noise = ndimage.gaussian_filter(rng.standard_normal((n, n)), sigma=params.rough_correlation, mode="nearest")
        noise *= params.rough_sigma / max(noise.std(), 1e-9)
        dist = np.hypot(east - cx, north - cy)
        taper = np.clip((radius - dist) / (0.2 * radius), 0.0, 1.0)
        heights += noise * taper
        # Label only where the relief is substantially present; the thin
        # tapered rim reads as plateau to any slope-based detector.
        labels[dist <= 0.9 * radius] = int(TerrainLabel.ROUGH)

    # Cracks: random polylines carved to a constant depth over their width.
    for _ in range(params.num_cracks):
        width = rng.uniform(*params.crack_width_range)
        depth = rng.uniform(*params.crack_depth_range)
        heading = rng.uniform(0, 2 * math.pi)
        start = rng.uniform(-params.extent / 2.5, params.extent / 2.5, 2)
        pts = [np.array(start, dtype=float)]
        step = params.cell_size
        for _ in range(int(1.6 * params.extent / step)):
            heading += rng.normal(0.0, 0.06)
            nxt = pts[-1] + step * np.array([math.cos(heading), math.sin(heading)])
            if np.max(np.abs(nxt)) > params.extent / 2.0:
                break
            pts.append(nxt)
        tree = cKDTree(np.array(pts))
        dist, _ = tree.query(np.column_stack([east.ravel(), north.ravel()]), workers=1)
        carved = (dist <= width / 2.0).reshape(n, n)
        heights[carved] = base[carved] - depth
        labels[carved] = int(TerrainLabel.CRACK)

    return TerrainTruth(
        heights=heights, labels=labels, cell_size=params.cell_size, extent=params.extent, seed=seed
    )


def camera_pose_from_attitude(pitch: float, roll: float, position: np.ndarray) -> Pose:
    """World pose of a depth camera with the given attitude (yaw = 0).

    Inverse of the rectification mapping: v_world = D @ Rx(p) @ Ry(r) @ v_cam.
    """
    R_tilt = quat_to_matrix(attitude_to_rotation(pitch, roll))
    return Pose.from_matrix(SENSOR_LEVEL_FRAME @ R_tilt, np.asarray(position, dtype=float))


def synth_imu(pitch: float, roll: float, gyro_rates: tuple[float, float] = (0.0, 0.0), rng=None):
    """Accelerometer/gyro samples consistent with a camera attitude."""
    R_tilt = quat_to_matrix(attitude_to_rotation(pitch, roll))
    R_wc = SENSOR_LEVEL_FRAME @ R_tilt
    accel = R_wc.T @ np.array([0.0, 0.0, GRAVITY])
    gyro = np.array([gyro_rates[0], gyro_rates[1], 0.0])
    if rng is not None:
        # Per-frame noise of an IMU already averaged over the frame interval.
        accel = accel + rng.normal(0.0, 0.01, 3)
        gyro = gyro + rng.normal(0.0, 0.001, 3)
    return accel, gyro


def render_depth(
    truth: TerrainTruth,
    camera: Pose,
    K: CameraIntrinsics,
    noise_scale: float = 0.001,
    seed: int = 0,
    timestamp: float = 0.0,
) -> DepthFrame:
    """Ray-cast the heightfield into a 16-bit depth frame (millimeters).

    Depth noise is zero-mean Gaussian with sigma = noise_scale * z^2
    (range-proportional, like a stereo depth sensor). Rays that miss the
    grid, diverge upward, or originate below the surface produce 0
    (invalid). Raises CameraBelowTerrain when the camera starts under the
    surface; requires a view direction within 60 degrees of nadir.
    """
    R = camera.matrix()
    cam_pos = camera.translation
    ground = truth.height_at(np.array(cam_pos[0]), np.array(cam_pos[1]))
    if np.isfinite(ground) and cam_pos[2] <= float(ground) + 0.05:
        raise CameraBelowTerrain(f"camera z {cam_pos[2]:.2f} under terrain {float(ground):.2f}")
    forward = R[:, 2]
    if forward[2] > -0.5:  # more than 60 degrees off nadir
        raise ValueError("camera must look within 60 degrees of nadir")

    us = ((np.arange(K.width) - K.cx) / K.fx).astype(np.float32)
    vs = ((np.arange(K.height) - K.cy) / K.fy).astype(np.float32)
    ug, vg = np.meshgrid(us, vs)
    dirs = np.stack([ug, vg, np.ones_like(ug)], axis=0).reshape(3, -1)
    dirs_w = (R @ dirs).astype(np.float64)
    dz = dirs_w[2]
    valid = dz < -1e-6
    safe_dz = np.where(valid, dz, -1.0)

    grid = truth.heights
    n_cells = grid.shape[0]
    inv_cell = 1.0 / truth.cell_size
    half = truth.extent / 2.0

    def sample_height(t):
        fe = (cam_pos[0] + t * dirs_w[0] + half) * inv_cell - 0.5
        fn = (cam_pos[1] + t * dirs_w[1] + half) * inv_cell - 0.5
        inside = (fe >= 0) & (fn >= 0) & (fe <= n_cells - 1) & (fn <= n_cells - 1)
        fe = np.clip(fe, 0, n_cells - 1.001)
        fn = np.clip(fn, 0, n_cells - 1.001)
        j0 = fe.astype(np.int64)
        i0 = fn.astype(np.int64)
        du = fe - j0
        dv = fn - i0
        h = (
            grid[i0, j0] * (1 - du) * (1 - dv)
            + grid[i0, j0 + 1] * du * (1 - dv)
            + grid[i0 + 1, j0] * (1 - du) * dv
            + grid[i0 + 1, j0 + 1] * du * dv
        )
        return h, inside

    # First-crossing march from just above the highest terrain downward in
    # sub-cell vertical steps: rays stop at the first surface they meet, so
    # crack walls occlude the floor behind them exactly as a real depth
    # sensor would see it.
    h_max = float(np.max(grid))
    h_min = float(np.min(grid))
    t_top = (h_max + 1e-3 - cam_pos[2]) / safe_dz
    step = truth.cell_size / np.abs(safe_dz)  # one cell of vertical descent
    n_steps = int(math.ceil((h_max - h_min) / truth.cell_size)) + 2

    t_lo = t_top.copy()
    t_hi = np.full_like(t_top, np.nan)
    crossed = np.zeros(t_top.shape, dtype=bool)
    ever_inside = np.zeros(t_top.shape, dtype=bool)
    t_prev = t_top.copy()
    for k in range(1, n_steps + 1):
        t_k = t_top + k * step
        h, inside = sample_height(t_k)
        ever_inside |= inside & valid
        z_ray = cam_pos[2] + t_k * dz
        below = inside & (z_ray <= h) & ~crossed & valid
        t_lo = np.where(below, t_prev, t_lo)
        t_hi = np.where(below, t_k, t_hi)
        crossed |= below
        t_prev = t_k

    valid &= crossed & ever_inside
    # Bisection refinement of the bracketed crossing.
    t_lo = np.where(valid, t_lo, 1.0)
    t_hi = np.where(valid, t_hi, 2.0)
    for _ in range(8):
        t_mid = 0.5 * (t_lo + t_hi)
        h, _ = sample_height(t_mid)
        z_ray = cam_pos[2] + t_mid * dz
        over = z_ray > h
        t_lo = np.where(over, t_mid, t_lo)
        t_hi = np.where(over, t_hi, t_mid)
    t = 0.5 * (t_lo + t_hi)
    valid &= np.isfinite(t) & (t > 0)

    depth_m = np.where(valid, t, 0.0)  # dir_cam z-component is 1: t is z-depth
    if noise_scale > 0:
        rng = np.random.default_rng(seed)
        depth_m = depth_m + np.where(valid, rng.normal(0.0, 1.0, depth_m.shape) * noise_scale * depth_m**2, 0.0)
    depth_mm = np.clip(np.rint(depth_m * 1000.0), 0, 65535).astype(np.uint16)
    depth_mm[~valid.reshape(-1)] = 0  # noise cannot resurrect invalid rays
    depth_mm = depth_mm.reshape(K.height, K.width)

    # IMU consistent with the pose: recover tilt from R = (D @ Rt)^T.
    R_tilt = SENSOR_LEVEL_FRAME @ R  # == Rx(pitch) @ Ry(roll) transposed back
    pitch = math.atan2(R_tilt[2, 1], R_tilt[1, 1])
    roll = math.atan2(R_tilt[0, 2], R_tilt[0, 0])
    rng_imu = np.random.default_rng(seed + 1)
    accel, gyro = synth_imu(pitch, roll, rng=rng_imu)
    return DepthFrame(depth=depth_mm, K=K, accel=accel, gyro=gyro, timestamp=timestamp)
