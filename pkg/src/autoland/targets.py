"""Position targets, tracking coordinates, and evaluation metrics.

A position target is the displacement the drone must fly, expressed in a
level East/North/Up frame centered on the landing pad: how far to move
right/left, forward/backward, and up/down. Two frame constructions are
supported:

- ``MarkerOrientation`` builds the frame from the detection's chosen
  plane normal and decoded in-plane spin. This inherits the one-circle
  orientation ambiguity: a wrong hypothesis flips the east/north signs.
- ``CameraOrientation`` ignores the marker's orientation entirely and
  levels the camera-frame displacement using the gimbal's known pitch and
  roll under the flat-pad assumption, which is ambiguity-free.

Discontinuity detection flags frame-to-frame velocity spikes in a target
stream; those spikes are the observable signature of wrong-hypothesis
selections.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .bundle import BundlePose
from .detector import Detection
from .geometry import CameraIntrinsics, plane_basis, rot_x, rot_y, wrap_angle

# Nadir reference: camera x -> East, y -> -North, z -> -Up. A camera
# with zero pitch/roll looks straight down with image-right = East.
CAMERA_LEVEL_FRAME = np.diag([1.0, -1.0, -1.0])


class EmptyStream(ValueError):
    """A stream operation needs at least two time-ordered entries."""


class ZeroDuration(ValueError):
    """Detection rate is undefined for a zero-length video."""


class ParseError(ValueError):
    """A target CSV failed to parse; the message carries row/column."""


@dataclass(frozen=True)
class MarkerOrientation:
    """Build the target frame from the marker's own detected orientation."""


@dataclass(frozen=True)
class CameraOrientation:
    """Build the target frame from the camera attitude (flat-pad assumption).

    ``pitch``/``roll`` are the camera's deviation from straight-down, in
    the conventions of :func:`autoland.geometry.attitude_to_rotation`.
    """

    pitch: float = 0.0
    roll: float = 0.0


OrientationSource = MarkerOrientation | CameraOrientation


@dataclass(frozen=True)
class PositionTarget:
    """Marker-centric displacement command (m) plus yaw misalignment."""

    east: float
    north: float
    up: float
    yaw_error: float
    timestamp: float = 0.0

    def __post_init__(self):
        vals = (self.east, self.north, self.up, self.yaw_error, self.timestamp)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite position target {vals}")
        object.__setattr__(self, "yaw_error", wrap_angle(self.yaw_error))


@dataclass(frozen=True)
class TrackingPoint:
    """Normalized pad pixel position, in [-1, 1] on both axes."""

    u_n: float
    v_n: float
    timestamp: float = 0.0


@dataclass(frozen=True)
class DiscontinuityEvent:
    timestamp: float
    axis: str  # east / north / yaw
    magnitude: float  # m/s or rad/s


@dataclass
class MetricsReport:
    """Stream-level evaluation metrics."""

    detection_rate: float = 0.0  # Hz
    discontinuity_rate: float = 0.0  # events per detection interval
    discontinuity_rate_hz: float = 0.0  # events per second (secondary)
    landing_radius: float | None = None  # m
    events: list[DiscontinuityEvent] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "detection_rate_hz": self.detection_rate,
            "discontinuity_rate": self.discontinuity_rate,
            "discontinuity_rate_hz": self.discontinuity_rate_hz,
            "landing_radius_m": self.landing_radius,
            "events": [
                {"timestamp_s": e.timestamp, "axis": e.axis, "magnitude": e.magnitude}
                for e in self.events
            ],
        }


def _pad_axes(normal: np.ndarray, spin: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pad east/north/up axes (camera frame) from a plane normal and spin."""
    u, v = plane_basis(normal)
    east = math.cos(spin) * u + math.sin(spin) * v
    up = normal
    north = np.cross(up, east)
    return east, north, up


def position_target(
    det: Detection | BundlePose,
    source: OrientationSource = MarkerOrientation(),
    timestamp: float | None = None,
) -> PositionTarget:
    """Convert a detection into a level ENU displacement command.

    The returned components are the camera-to-pad displacement expressed
    in the chosen level frame, i.e. the motion that brings the drone over
    the pad; ``up`` is minus the height above the pad.
    """
    if isinstance(det, BundlePose):
        position = det.position
        normal = det.normal
        if det.yaw_direction is not None:
            east_dir = det.yaw_direction
            u, v = plane_basis(normal)
            spin = math.atan2(np.dot(east_dir, v), np.dot(east_dir, u))
        else:
            spin = 0.0
        ts = 0.0 if timestamp is None else timestamp
    else:
        position = det.position
        normal = det.candidates.normal(det.chosen)
        spin = det.spin
        ts = det.timestamp if timestamp is None else timestamp

    if isinstance(source, CameraOrientation):
        # Coordinates in the nadir-reference camera basis, then relabeled
        # to right/forward/up: v_level = D @ (R_nadir^T R_cam) @ v_cam.
        R_tilt = rot_x(source.pitch) @ rot_y(source.roll)
        level = CAMERA_LEVEL_FRAME @ R_tilt
        enu = level @ position
        east, north, up = float(enu[0]), float(enu[1]), float(enu[2])
        yaw_error = 0.0
    else:
        e_ax, n_ax, u_ax = _pad_axes(normal, spin)
        east = float(np.dot(e_ax, position))
        north = float(np.dot(n_ax, position))
        up = float(np.dot(u_ax, position))
        # Yaw misalignment: angle from the drone's forward direction (the
        # camera's image-up, projected into the pad plane) to the pad's
        # east axis. Zero means the drone heading matches the pad yaw.
        cam_fwd = np.array([0.0, -1.0, 0.0])
        proj = cam_fwd - np.dot(cam_fwd, u_ax) * u_ax
        if np.linalg.norm(proj) < 1e-9:
            yaw_error = 0.0
        else:
            proj /= np.linalg.norm(proj)
            yaw_error = math.atan2(np.dot(np.cross(proj, e_ax), u_ax), np.dot(proj, e_ax))
    return PositionTarget(east=east, north=north, up=up, yaw_error=yaw_error, timestamp=ts)


def tracking_point(det: Detection | BundlePose, K: CameraIntrinsics, timestamp: float | None = None) -> TrackingPoint:
    """Normalized pad pixel center: (0, 0) at the principal point,
    +-1 at the image edges, clamped."""
    if isinstance(det, BundlePose):
        from .geometry import project

        uv = project(K, det.position)
        u, v = float(uv[0]), float(uv[1])
        ts = 0.0 if timestamp is None else timestamp
    else:
        u, v = det.ellipse.u, det.ellipse.v
        ts = det.timestamp if timestamp is None else timestamp
    u_n = min(max(2.0 * (u - K.cx) / K.width, -1.0), 1.0)
    v_n = min(max(2.0 * (v - K.cy) / K.height, -1.0), 1.0)
    return TrackingPoint(u_n=u_n, v_n=v_n, timestamp=ts)


def detect_discontinuities(
    stream: list[PositionTarget],
    v_thresh: float = 2.0,
    w_thresh: float = 2.0,
    nominal_period: float | None = None,
    max_gap_periods: float = 3.0,
) -> MetricsReport:
    """Flag frame-to-frame velocity spikes in a position-target stream.

    Finite-difference velocities are computed per consecutive pair; a
    pair contributes at most one event (logged on its worst axis), so a
    sign flip that spikes both east and north still counts once. Pairs
    separated by more than ``max_gap_periods`` nominal frame periods are
    treated as dropouts and skipped.
    """
    if len(stream) < 2:
        raise EmptyStream("need at least two targets to difference")
    ordered = sorted(stream, key=lambda t: t.timestamp)
    dts = [b.timestamp - a.timestamp for a, b in zip(ordered, ordered[1:])]
    if nominal_period is None:
        positive = sorted(dt for dt in dts if dt > 0)
        nominal_period = positive[len(positive) // 2] if positive else 0.1

    events = []
    for a, b in zip(ordered, ordered[1:]):
        dt = b.timestamp - a.timestamp
        if dt <= 0 or dt > max_gap_periods * nominal_period:
            continue
        rates = {
            "east": abs(b.east - a.east) / dt,
            "north": abs(b.north - a.north) / dt,
            "yaw": abs(wrap_angle(b.yaw_error - a.yaw_error)) / dt,
        }
        ratios = {
            "east": rates["east"] / v_thresh,
            "north": rates["north"] / v_thresh,
            "yaw": rates["yaw"] / w_thresh,
        }
        worst = max(ratios, key=ratios.get)
        if ratios[worst] > 1.0:
            events.append(DiscontinuityEvent(timestamp=b.timestamp, axis=worst, magnitude=rates[worst]))

    duration = ordered[-1].timestamp - ordered[0].timestamp
    return MetricsReport(
        detection_rate=len(ordered) / duration if duration > 0 else 0.0,
        discontinuity_rate=len(events) / (len(ordered) - 1),
        discontinuity_rate_hz=len(events) / duration if duration > 0 else 0.0,
        events=events,
    )


def detection_rate(num_detections: int, video_duration_s: float) -> float:
    """Detections per second of video."""
    if video_duration_s <= 0.0:
        raise ZeroDuration("video duration must be positive")
    return num_detections / video_duration_s


def landing_radius(final_camera_pos: np.ndarray, marker_center: np.ndarray) -> float:
    """Horizontal camera-to-pad distance after touchdown (m); both
    positions must share one world frame."""
    a = np.asarray(final_camera_pos, dtype=float)
    b = np.asarray(marker_center, dtype=float)
    return float(math.hypot(a[0] - b[0], a[1] - b[1]))


TARGET_CSV_HEADER = ["timestamp_s", "east_m", "north_m", "up_m", "yaw_error_rad"]


def save_position_targets(path, stream: list[PositionTarget]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TARGET_CSV_HEADER)
        for t in stream:
            writer.writerow(
                [repr(t.timestamp), repr(t.east), repr(t.north), repr(t.up), repr(t.yaw_error)]
            )


def load_external_pose_stream(path) -> list[PositionTarget]:
    """Load a position-target stream written by this package or by an
    external detector, so foreign pose pipelines can be scored with the
    same metrics. Returns the stream sorted by timestamp.

    Raises ParseError with row and column diagnostics on malformed input.
    """
    stream = []
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header != TARGET_CSV_HEADER:
            raise ParseError(
                f"{path}: row 1: expected header {','.join(TARGET_CSV_HEADER)}, got {','.join(header)}"
            )
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(TARGET_CSV_HEADER):
                raise ParseError(f"{path}: row {row_no}: expected {len(TARGET_CSV_HEADER)} fields, got {len(row)}")
            values = []
            for col, cell in zip(TARGET_CSV_HEADER, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}: row {row_no}: column {col}: not a number: {cell!r}") from None
            try:
                stream.append(
                    PositionTarget(
                        timestamp=values[0], east=values[1], north=values[2], up=values[3], yaw_error=values[4]
                    )
                )
            except ValueError as exc:
                raise ParseError(f"{path}: row {row_no}: {exc}") from None
    return sorted(stream, key=lambda t: t.timestamp)
