"""Depth-image terrain pipeline for unprepared landing sites.

Stages: estimate the sensor's pitch/roll from its IMU (complementary
filter), deproject the depth raster and rotate it into a gravity-aligned
frame, bin into a height map, mask cells whose smoothed slope exceeds a
threshold, and extract large flat regions by robust plane fitting.

Heights are relative to the sensor (the ground sits around minus the
flight altitude) unless the caller rebases them; invalid data stays
invalid throughout — no terrain is fabricated under a landing decision.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import CameraIntrinsics, quat_to_matrix, attitude_to_rotation
from .targets import PositionTarget

GRAVITY = 9.81

# Camera-to-level axis relabeling for a nadir-pointing sensor
# (x right -> East, y down -> -North, z forward -> -Up).
SENSOR_LEVEL_FRAME = np.diag([1.0, -1.0, -1.0])


class EmptyFrame(ValueError):
    """Too few valid depth pixels to build a height map."""


class CellClass(enum.IntEnum):
    """Hazard-mask cell labels (values double as the PGM palette)."""

    SAFE = 0
    UNKNOWN = 128
    HAZARD = 255


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """One synced depth + IMU sample.

    ``depth`` is uint16 z-range in millimeters, 0 marking invalid pixels.
    """

    depth: np.ndarray
    K: CameraIntrinsics
    accel: np.ndarray  # m/s^2, sensor frame
    gyro: np.ndarray  # rad/s, sensor frame
    timestamp: float = 0.0

    def __post_init__(self):
        if self.depth.shape != (self.K.height, self.K.width):
            raise ValueError("depth raster does not match intrinsics dims")
        if self.depth.dtype != np.uint16:
            raise ValueError("depth must be uint16 millimeters")
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(3))
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float).reshape(3))


@dataclass
class HeightMap:
    """Gravity-aligned grid of mean heights (m), camera at the origin."""

    cell_size: float
    origin: np.ndarray  # (2,) east/north of cell (0, 0)'s lower corner
    heights: np.ndarray  # (rows, cols) float, NaN where invalid
    valid: np.ndarray  # (rows, cols) bool

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """East and north coordinates of all cell centers."""
        rows, cols = self.heights.shape
        east = self.origin[0] + (np.arange(cols) + 0.5) * self.cell_size
        north = self.origin[1] + (np.arange(rows) + 0.5) * self.cell_size
        return np.meshgrid(east, north)


@dataclass
class HazardMask:
    """Per-cell safety labels, congruent with its height map."""

    classes: np.ndarray  # (rows, cols) uint8 of CellClass values

    @property
    def safe(self) -> np.ndarray:
        return self.classes == CellClass.SAFE

    @property
    def hazard(self) -> np.ndarray:
        return self.classes == CellClass.HAZARD

    @property
    def unknown(self) -> np.ndarray:
        return self.classes == CellClass.UNKNOWN


@dataclass(frozen=True)
class LandingSite:
    """One ranked flat-smooth-level candidate region."""

    centroid_east: float
    centroid_north: float
    height: float
    area: float  # m^2
    normal: tuple[float, float, float]  # unit, z > 0 (points up)
    tilt: float  # rad from vertical
    roughness_rms: float  # m
    inlier_fraction: float

    def to_dict(self) -> dict:
        return {
            "centroid_east_m": self.centroid_east,
            "centroid_north_m": self.centroid_north,
            "height_m": self.height,
            "area_m2": self.area,
            "normal": list(self.normal),
            "tilt_rad": self.tilt,
            "roughness_rms_m": self.roughness_rms,
            "inlier_fraction": self.inlier_fraction,
        }


@dataclass
class TerrainConfig:
    cell_size: float = 0.05  # m
    smooth_sigma: float = 2.0  # cells
    slope_max: float = math.tan(math.radians(30.0))  # rise/run
    min_area: float = 1.0  # m^2
    max_tilt: float = math.radians(10.0)
    max_roughness: float = 0.04  # m
    min_inlier_fraction: float = 0.8
    min_valid_fraction: float = 0.01  # of pixels, else EmptyFrame


# --- attitude estimation ---------------------------------------------------


def accel_attitude(accel: np.ndarray) -> tuple[float, float]:
    """Pitch/roll implied by a static accelerometer reading.

    A nadir-pointing sensor at rest reads (0, 0, -g); tilting by
    Rx(pitch) @ Ry(roll) moves gravity to
    g * (sin(roll) cos(pitch), -sin(pitch), -cos(roll) cos(pitch)).
    """
    ax, ay, az = accel
    pitch = math.atan2(-ay, math.hypot(ax, az))
    roll = math.atan2(ax, -az)
    return pitch, roll


def estimate_attitude(
    accel: np.ndarray,
    gyro: np.ndarray,
    previous: tuple[float, float] = (0.0, 0.0),
    dt: float = 0.1,
    alpha: float = 0.9,
) -> tuple[float, float]:
    """One complementary-filter update of (pitch, roll).

    Gyro rates are integrated for the high-frequency path; the estimate is
    pulled toward the accelerometer's gravity direction with weight
    ``1 - alpha`` whenever the specific force is plausibly static (within
    [0.5 g, 1.5 g]); otherwise the update is gyro-only. Yaw is never
    estimated: the sensor's yaw is slaved to the vehicle's.
    """
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    pitch = previous[0] + gyro[0] * dt
    roll = previous[1] + gyro[1] * dt
    norm = float(np.linalg.norm(accel))
    if 0.5 * GRAVITY <= norm <= 1.5 * GRAVITY:
        a_pitch, a_roll = accel_attitude(accel)
        pitch = alpha * pitch + (1.0 - alpha) * a_pitch
        roll = alpha * roll + (1.0 - alpha) * a_roll
    return pitch, roll


# --- rectification ----------------------------------------------------------


def rectify_depth(
    frame: DepthFrame,
    pitch: float,
    roll: float,
    cell_size: float = 0.05,
    min_valid_fraction: float = 0.01,
) -> HeightMap:
    """Deproject valid depth pixels, undo the sensor attitude, and bin
    into a gravity-aligned height grid (mean height per cell).

    Raises EmptyFrame when fewer than ``min_valid_fraction`` of the
    pixels carry valid depth.
    """
    depth_m = frame.depth.astype(np.float32) / 1000.0
    valid = frame.depth > 0
    if valid.sum() < min_valid_fraction * frame.depth.size:
        raise EmptyFrame(f"only {int(valid.sum())} valid depth pixels")

    K = frame.K
    vs, us = np.nonzero(valid)
    z = depth_m[vs, us]
    x = (us.astype(np.float32) - K.cx) / K.fx * z
    y = (vs.astype(np.float32) - K.cy) / K.fy * z
    pts = np.stack([x, y, z], axis=0)

    # Sensor attitude R = Rx(pitch) @ Ry(roll) relative to nadir; undo it,
    # then relabel nadir-sensor axes to East/North/Up.
    R_tilt = quat_to_matrix(attitude_to_rotation(pitch, roll))
    level = SENSOR_LEVEL_FRAME @ R_tilt
    enu = level @ pts

    east, north, up = enu[0], enu[1], enu[2]
    e_lo = math.floor(east.min() / cell_size) * cell_size
    n_lo = math.floor(north.min() / cell_size) * cell_size
    cols = int(math.floor((east.max() - e_lo) / cell_size)) + 1
    rows = int(math.floor((north.max() - n_lo) / cell_size)) + 1
    ci = np.clip(((east - e_lo) / cell_size).astype(np.int64), 0, cols - 1)
    ri = np.clip(((north - n_lo) / cell_size).astype(np.int64), 0, rows - 1)
    flat = ri * cols + ci
    counts = np.bincount(flat, minlength=rows * cols)
    sums = np.bincount(flat, weights=up, minlength=rows * cols)
    with np.errstate(invalid="ignore"):
        means = sums / counts
    heights = means.reshape(rows, cols)
    valid_cells = counts.reshape(rows, cols) > 0
    heights[~valid_cells] = np.nan
    return HeightMap(
        cell_size=cell_size,
        origin=np.array([e_lo, n_lo]),
        heights=heights,
        valid=valid_cells,
    )


# --- hazard masking ---------------------------------------------------------


def hazard_mask(hm: HeightMap, sigma: float = 2.0, slope_max: float = math.tan(math.radians(30.0))) -> HazardMask:
    """Label cells hazardous where the smoothed terrain slope exceeds
    ``slope_max`` (rise over run).

    Smoothing uses normalized (mask-aware) Gaussian convolution so
    invalid cells contribute nothing; cells with no valid data stay
    Unknown. Gradients are central differences scaled by the cell size.
    """
    if not hm.valid.any():
        raise ValueError("height map has no valid cells")
    filled = np.where(hm.valid, hm.heights, 0.0)
    mask = hm.valid.astype(np.float64)
    num = ndimage.gaussian_filter(filled * mask, sigma=sigma, mode="nearest")
    den = ndimage.gaussian_filter(mask, sigma=sigma, mode="nearest")
    smoothed = np.where(den > 1e-6, num / np.maximum(den, 1e-12), 0.0)

    gn, ge = np.gradient(smoothed, hm.cell_size)
    slope = np.hypot(ge, gn)
    classes = np.full(hm.heights.shape, int(CellClass.UNKNOWN), dtype=np.uint8)
    classes[hm.valid & (slope <= slope_max)] = int(CellClass.SAFE)
    classes[hm.valid & (slope > slope_max)] = int(CellClass.HAZARD)
    return HazardMask(classes=classes)


# --- landing sites ----------------------------------------------------------


def _irls_plane(points: np.ndarray, rounds: int = 3) -> tuple[np.ndarray, float]:
    """Robust plane fit h = a e + b n + c via iteratively reweighted least
    squares with Tukey-style weights. Returns (coeffs (a, b, c), scale)."""
    A = np.column_stack([points[:, 0], points[:, 1], np.ones(len(points))])
    h = points[:, 2]
    w = np.ones(len(points))
    coeffs = np.zeros(3)
    scale = 1.0
    for _ in range(rounds):
        Aw = A * w[:, None]
        coeffs, *_ = np.linalg.lstsq(Aw, h * w, rcond=None)
        r = h - A @ coeffs
        scale = max(1.4826 * float(np.median(np.abs(r - np.median(r)))), 1e-6)
        k = 4.685 * scale
        u = np.clip(r / k, -1.0, 1.0)
        w = (1.0 - u * u) ** 2
    return coeffs, scale


def find_landing_sites(
    hm: HeightMap,
    mask: HazardMask,
    min_area: float = 1.0,
    max_tilt: float = math.radians(10.0),
    max_roughness: float = 0.04,
    min_inlier_fraction: float = 0.8,
) -> list[LandingSite]:
    """Extract flat landing candidates from the safe cells.

    Safe cells are grouped into 4-connected components; components of
    sufficient area get a robust plane fit, and survive only if level,
    smooth, and mostly inliers. Ranked by area descending, ties by lower
    roughness. An empty list is a valid "abort" answer.
    """
    if mask.classes.shape != hm.heights.shape:
        raise ValueError("mask and height map are not congruent")
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    labels, n = ndimage.label(mask.safe, structure=four)
    if n == 0:
        return []
    east, north = hm.cell_centers()
    cell_area = hm.cell_size**2
    sites = []
    for idx in range(1, n + 1):
        sel = labels == idx
        area = float(sel.sum()) * cell_area
        if area < min_area:
            continue
        pts = np.column_stack([east[sel], north[sel], hm.heights[sel]])
        coeffs, scale = _irls_plane(pts)
        normal = np.array([-coeffs[0], -coeffs[1], 1.0])
        normal /= np.linalg.norm(normal)
        tilt = math.acos(min(max(normal[2], -1.0), 1.0))
        residuals = pts[:, 2] - (coeffs[0] * pts[:, 0] + coeffs[1] * pts[:, 1] + coeffs[2])
        inliers = np.abs(residuals) <= max(3.0 * scale, max_roughness)
        inlier_fraction = float(inliers.mean())
        roughness = float(np.sqrt(np.mean(residuals[inliers] ** 2))) if inliers.any() else math.inf
        if tilt > max_tilt or roughness > max_roughness or inlier_fraction < min_inlier_fraction:
            continue
        ce, cn = float(east[sel].mean()), float(north[sel].mean())
        sites.append(
            LandingSite(
                centroid_east=ce,
                centroid_north=cn,
                height=float(coeffs[0] * ce + coeffs[1] * cn + coeffs[2]),
                area=area,
                normal=tuple(normal),
                tilt=tilt,
                roughness_rms=roughness,
                inlier_fraction=inlier_fraction,
            )
        )
    sites.sort(key=lambda s: (-s.area, s.roughness_rms))
    return sites


def score_hazard_mask(
    mask: HazardMask,
    truth_positive: np.ndarray,
    known: np.ndarray | None = None,
    tolerance_cells: int = 3,
) -> dict:
    """Precision/recall of a hazard mask against per-cell truth labels.

    Cells the sensor never observed (Unknown) are excluded: they cannot
    be scored and are treated as non-landable downstream anyway. Matching
    uses a boundary tolerance of ``tolerance_cells``: a true hazard
    counts as recalled if a hazard was flagged within that radius, and a
    flagged cell counts as correct if a true hazard lies within it. The
    radius reflects the physical reach of both the Gaussian band
    widening and the vehicle footprint: a cell that close to a real
    hazard is genuinely unusable.
    """
    if known is None:
        known = np.ones_like(truth_positive, dtype=bool)
    known = known & ~mask.unknown
    pred = mask.hazard
    structure = ndimage.iterate_structure(ndimage.generate_binary_structure(2, 1), tolerance_cells)
    pred_dilated = ndimage.binary_dilation(pred, structure=structure)
    truth_dilated = ndimage.binary_dilation(truth_positive & known, structure=structure)

    tp_recall = int((truth_positive & known & pred_dilated).sum())
    fn = int((truth_positive & known & ~pred_dilated).sum())
    tp_precision = int((pred & known & truth_dilated).sum())
    fp = int((pred & known & ~truth_dilated).sum())
    recall = tp_recall / max(tp_recall + fn, 1)
    precision = tp_precision / max(tp_precision + fp, 1)
    f1 = 2 * precision * recall / max(precision + recall, 1e-12)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "true_positive": tp_recall,
        "false_negative": fn,
        "false_positive": fp,
        "scored_cells": int(known.sum()),
    }


def site_target(site: LandingSite, drone_altitude: float) -> PositionTarget:
    """Displacement command toward a landing site.

    ``drone_altitude`` and the site height must share a vertical datum;
    with camera-relative height maps the camera sits at altitude 0. Lava
    sites carry no yaw, so the yaw error is identically zero.
    """
    return PositionTarget(
        east=site.centroid_east,
        north=site.centroid_north,
        up=-(drone_altitude - site.height),
        yaw_error=0.0,
    )
