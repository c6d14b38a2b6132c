"""Synthetic circular-marker rendering: the ground-truth oracle.

Markers are concentric disks: a black outer disk, a white center, and an
annulus of Manchester-coded teeth carrying a binary ID. Because an
in-plane spin of the printed marker is physically unobservable, IDs index
rotation-equivalence classes of the bit string (binary necklaces): the
encoder writes the class representative and the decoder canonicalizes by
minimizing over cyclic rotations, so any spin decodes to the same ID.

``render_marker`` inverse-maps every pixel onto the marker plane, which
makes the renderer an exact, seed-deterministic oracle for the detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import CameraIntrinsics, Pose, project, project_circle, rot_x, rot_z

BACKGROUND_LEVEL = 128
WHITE_LEVEL = 230
BLACK_LEVEL = 25


class BehindCamera(ValueError):
    """The marker plane lies behind the camera."""


class InfeasibleTrajectory(ValueError):
    """A motion sequence leaves the marker out of view too often."""


# --- necklace ID codec ----------------------------------------------------


def rotate_bits(value: int, shift: int, num_bits: int) -> int:
    """Cyclically rotate a bit string left by ``shift``."""
    shift %= num_bits
    mask = (1 << num_bits) - 1
    return ((value << shift) | (value >> (num_bits - shift))) & mask


def canonical_pattern(value: int, num_bits: int) -> int:
    """Minimal value over all cyclic bit rotations.

    The all-ones string is identified with all-zeros: the two render to
    the same alternating tooth ring, spun by half a sector.
    """
    mask = (1 << num_bits) - 1
    if value & mask == mask:
        return 0
    return min(rotate_bits(value, s, num_bits) for s in range(num_bits))


@lru_cache(maxsize=None)
def necklace_table(num_bits: int) -> tuple[int, ...]:
    """Sorted canonical bit patterns; the index of a pattern is the ID."""
    reps = sorted({canonical_pattern(v, num_bits) for v in range(1 << num_bits)})
    return tuple(reps)


def marker_id_count(num_bits: int) -> int:
    """Number of distinct encodable IDs for a bit count."""
    return len(necklace_table(num_bits))


def encode_id(marker_id: int, num_bits: int) -> int:
    """Bit pattern (canonical representative) for an ID."""
    table = necklace_table(num_bits)
    if not 0 <= marker_id < len(table):
        raise ValueError(
            f"id {marker_id} out of range: {num_bits}-bit markers encode {len(table)} ids"
        )
    return table[marker_id]


def pattern_to_id(pattern: int, num_bits: int) -> int:
    """ID whose equivalence class contains ``pattern``."""
    return necklace_table(num_bits).index(canonical_pattern(pattern, num_bits))


# --- marker geometry ------------------------------------------------------


@dataclass(frozen=True)
class MarkerSpec:
    """Printed-marker geometry and identity.

    Radial layout (fractions of ``outer_radius``): white center disk out
    to ``inner_radius_ratio``, tooth annulus between the id-ring ratios,
    black elsewhere inside the outer disk.
    """

    outer_radius: float = 0.10
    inner_radius_ratio: float = 0.40
    id_ring_inner_ratio: float = 0.55
    id_ring_outer_ratio: float = 0.80
    num_id_bits: int = 8
    id: int = 20

    def __post_init__(self):
        if not (0.0 < self.inner_radius_ratio < self.id_ring_inner_ratio < self.id_ring_outer_ratio < 1.0):
            raise ValueError("require 0 < inner < id_inner < id_outer < 1")
        if self.outer_radius <= 0.0:
            raise ValueError("outer_radius must be positive")
        if self.num_id_bits < 1:
            raise ValueError("need at least one id bit")
        if not 0 <= self.id < (1 << self.num_id_bits):
            raise ValueError(f"id {self.id} out of range for {self.num_id_bits} bits")
        encode_id(self.id, self.num_id_bits)  # must be an encodable class index

    @property
    def bit_pattern(self) -> int:
        return encode_id(self.id, self.num_id_bits)

    def half_sector_colors(self) -> np.ndarray:
        """Tooth colors as 2*num_id_bits booleans (True = white), reading
        in increasing marker angle from the canonical origin; bit 1 is a
        white-then-black pair, bit 0 black-then-white."""
        pattern = self.bit_pattern
        n = self.num_id_bits
        bits = [(pattern >> (n - 1 - i)) & 1 for i in range(n)]
        colors = []
        for b in bits:
            colors.extend([bool(b), not bool(b)])
        return np.array(colors, dtype=bool)


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    """One synthetic frame plus its ground truth."""

    image: np.ndarray  # uint8, (height, width)
    truth_pose: Pose  # marker in camera frame
    truth_id: int
    timestamp: float

    @property
    def truth_normal(self) -> np.ndarray:
        """Marker-plane up normal in the camera frame (faces the camera)."""
        n = self.truth_pose.matrix()[:, 2]
        return -n if n[2] > 0 else n


def marker_plane_intensity(spec: MarkerSpec, mx: np.ndarray, my: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Intensity and inside-the-disk mask at marker-plane coordinates (m)."""
    rho = np.hypot(mx, my) / spec.outer_radius
    phi = np.nan_to_num(np.mod(np.arctan2(my, mx), 2.0 * math.pi))
    colors = spec.half_sector_colors()
    n_half = len(colors)
    sector_idx = np.clip((phi / (2.0 * math.pi) * n_half).astype(np.int64), 0, n_half - 1)
    tooth_white = colors[sector_idx]

    inside = rho <= 1.0
    out = np.full(rho.shape, float(BLACK_LEVEL), dtype=np.float32)
    out[rho < spec.inner_radius_ratio] = WHITE_LEVEL
    ring = (rho >= spec.id_ring_inner_ratio) & (rho < spec.id_ring_outer_ratio)
    out[ring & tooth_white] = WHITE_LEVEL
    return out, inside


def render_marker(
    K: CameraIntrinsics,
    spec: MarkerSpec,
    pose: Pose,
    supersample: int = 2,
    seed: int | None = 0,
    noise_sigma: float = 2.0,
    timestamp: float = 0.0,
) -> RenderedFrame:
    """Render one marker under a camera pose (marker frame -> camera frame).

    Every output pixel is inverse-mapped through the ray/marker-plane
    intersection; ``supersample`` renders on a finer grid and box-filters
    down for anti-aliased edges. Deterministic for a given seed.
    """
    frame = render_scene(K, [(spec, pose)], supersample=supersample, seed=seed, noise_sigma=noise_sigma)
    return RenderedFrame(image=frame, truth_pose=pose, truth_id=spec.id, timestamp=timestamp)


def render_scene(
    K: CameraIntrinsics,
    markers: list[tuple[MarkerSpec, Pose]],
    supersample: int = 2,
    seed: int | None = 0,
    noise_sigma: float = 2.0,
) -> np.ndarray:
    """Render several coplanar or non-overlapping markers into one frame."""
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    height, width = K.height, K.width
    canvas = np.full((height, width), float(BACKGROUND_LEVEL), dtype=np.float32)

    for spec, pose in markers:
        R = pose.matrix()
        t = pose.translation
        if t[2] <= 0.0:
            raise BehindCamera("marker center at or behind the camera plane")
        normal = R[:, 2]
        if normal[2] > 0:
            normal = -normal
        # Image-space bounding box from sampled boundary points; robust to
        # partial visibility and near-edge-on views where the projected
        # conic degenerates.
        phi = np.linspace(0.0, 2.0 * math.pi, 48, endpoint=False)
        boundary = t + spec.outer_radius * (np.outer(np.cos(phi), R[:, 0]) + np.outer(np.sin(phi), R[:, 1]))
        front = boundary[boundary[:, 2] > 1e-6]
        if len(front) < 3:
            continue
        bu = K.fx * front[:, 0] / front[:, 2] + K.cx
        bv = K.fy * front[:, 1] / front[:, 2] + K.cy
        u_lo = max(int(math.floor(bu.min())) - 2, 0)
        u_hi = min(int(math.ceil(bu.max())) + 3, width)
        v_lo = max(int(math.floor(bv.min())) - 2, 0)
        v_hi = min(int(math.ceil(bv.max())) + 3, height)
        if u_lo >= u_hi or v_lo >= v_hi:
            continue

        ss = supersample
        # Supersample pixel centers: pixel p covers [p-0.5, p+0.5).
        us = (np.arange(u_lo * ss, u_hi * ss, dtype=np.float32) + 0.5) / ss - 0.5
        vs = (np.arange(v_lo * ss, v_hi * ss, dtype=np.float32) + 0.5) / ss - 0.5
        ug, vg = np.meshgrid(us, vs)
        dx = (ug - K.cx) / K.fx
        dy = (vg - K.cy) / K.fy
        # Ray-plane intersection: s * (dx, dy, 1) on plane n.(p - t) = 0.
        denom = normal[0] * dx + normal[1] * dy + normal[2]
        num = float(np.dot(normal, t))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = num / denom
        px = s * dx - t[0]
        py = s * dy - t[1]
        pz = s - t[2]
        mx = R[0, 0] * px + R[1, 0] * py + R[2, 0] * pz
        my = R[0, 1] * px + R[1, 1] * py + R[2, 1] * pz
        tile, inside = marker_plane_intensity(spec, mx, my)
        inside &= np.isfinite(s) & (s > 0.0)
        tile[~inside] = 0.0
        cov = inside.astype(np.float32)
        if ss > 1:
            shape = (v_hi - v_lo, ss, u_hi - u_lo, ss)
            tile = tile.reshape(shape).mean(axis=(1, 3))
            cov = cov.reshape(shape).mean(axis=(1, 3))
        region = canvas[v_lo:v_hi, u_lo:u_hi]
        # Alpha-composite by sub-pixel coverage so edges anti-alias and
        # neighboring markers' bounding boxes cannot stomp each other.
        region[...] = tile + (1.0 - cov) * region

    if noise_sigma > 0.0 and seed is not None:
        rng = np.random.default_rng(seed)
        canvas = canvas + rng.standard_normal(canvas.shape, dtype=np.float32) * noise_sigma
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


# --- motion sequences -----------------------------------------------------

MOTION_KINDS = ("translation", "rotation", "orbit_vertical", "orbit_horizontal")


@dataclass(frozen=True)
class MotionParams:
    """Trajectory parameters for the camera-motion test sequences."""

    n_frames: int = 200
    frame_rate: float = 10.0
    range_m: float = 2.0
    deflection: float = math.radians(20.0)  # marker tilt away from the view axis
    sweep: float = math.radians(25.0)  # arc amplitude for orbit kinds
    lateral: float = 0.5  # translation amplitude, m
    supersample: int = 2
    noise_sigma: float = 2.0
    min_in_view_fraction: float = 0.95


def marker_pose(
    range_m: float,
    deflection: float = 0.0,
    azimuth: float = 0.0,
    spin: float = 0.0,
    offset: tuple[float, float] = (0.0, 0.0),
) -> Pose:
    """Marker-in-camera pose: marker at ``offset + (0, 0, range)``, face
    toward the camera, plane tilted by ``deflection`` about an axis set by
    ``azimuth``, spun in plane by ``spin``.

    The base orientation flips the marker's +z (printed-face normal) onto
    the -z camera axis so the tooth pattern keeps its printed handedness.
    """
    face_camera = rot_x(math.pi)
    R = rot_z(azimuth) @ rot_x(deflection) @ rot_z(-azimuth) @ face_camera @ rot_z(spin)
    t = np.array([offset[0], offset[1], range_m])
    return Pose.from_matrix(R, t)


def generate_motion_sequence(
    kind: str,
    params: MotionParams,
    seed: int,
    K: CameraIntrinsics | None = None,
    spec: MarkerSpec | None = None,
) -> list[RenderedFrame]:
    """Render one of the four standard camera motions around a marker.

    Trajectories are C1-smooth in time; the truth pose is recorded on
    every frame. Raises InfeasibleTrajectory if the marker would leave
    the view on more than the allowed fraction of frames.
    """
    if kind not in MOTION_KINDS:
        raise ValueError(f"unknown motion kind {kind!r}; expected one of {MOTION_KINDS}")
    K = K or CameraIntrinsics.from_hfov()
    spec = spec or MarkerSpec()
    rng = np.random.default_rng(seed)
    spin0 = rng.uniform(0.0, 2.0 * math.pi)
    az0 = rng.uniform(0.0, 2.0 * math.pi)

    poses = []
    for i in range(params.n_frames):
        ts = i / params.frame_rate
        u = i / max(params.n_frames - 1, 1)  # 0..1 progress
        if kind == "translation":
            x = params.lateral * (2.0 * u - 1.0)
            pose = marker_pose(params.range_m, params.deflection, az0, spin0, offset=(x, 0.0))
        elif kind == "rotation":
            pose = marker_pose(params.range_m, params.deflection, az0, spin0 + 2.0 * math.pi * u)
        elif kind == "orbit_vertical":
            # Smooth sweep of the deflection arc: cosine ease between bounds.
            tilt = params.deflection + params.sweep * 0.5 * (1.0 - math.cos(2.0 * math.pi * u))
            pose = marker_pose(params.range_m, tilt, az0, spin0)
        else:  # orbit_horizontal
            az = az0 + 2.0 * math.pi * u
            pose = marker_pose(params.range_m, params.deflection, az, spin0)
        poses.append((ts, pose))

    in_view = 0
    margin = 2.0
    for _, pose in poses:
        t = pose.translation
        if t[2] <= 0:
            continue
        uv = project(K, t)
        r_img = K.fx * spec.outer_radius / t[2]
        if (
            r_img + margin <= uv[0] <= K.width - r_img - margin
            and r_img + margin <= uv[1] <= K.height - r_img - margin
        ):
            in_view += 1
    if in_view < params.min_in_view_fraction * params.n_frames:
        raise InfeasibleTrajectory(
            f"marker in view on {in_view}/{params.n_frames} frames "
            f"(need >= {params.min_in_view_fraction:.0%})"
        )

    frames = []
    for i, (ts, pose) in enumerate(poses):
        frame_seed = int(rng.integers(0, 2**63 - 1)) if params.noise_sigma > 0 else 0
        frames.append(
            RenderedFrame(
                image=render_scene(
                    K,
                    [(spec, pose)],
                    supersample=params.supersample,
                    seed=frame_seed,
                    noise_sigma=params.noise_sigma,
                ),
                truth_pose=pose,
                truth_id=spec.id,
                timestamp=ts,
            )
        )
    return frames


def generate_protocol_frames(
    n_frames: int,
    seed: int,
    K: CameraIntrinsics | None = None,
    spec: MarkerSpec | None = None,
    ranges: tuple[float, float] = (1.0, 3.0),
    deflections_deg: tuple[float, ...] = (0.0, 30.0),
    supersample: int = 2,
    noise_sigma: float = 2.0,
) -> list[RenderedFrame]:
    """Static evaluation frames: ranges swept across ``ranges`` and
    deflection alternating among ``deflections_deg``, with randomized
    azimuth, spin, and image offset."""
    K = K or CameraIntrinsics.from_hfov()
    spec = spec or MarkerSpec()
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(n_frames):
        range_m = rng.uniform(*ranges)
        deflection = math.radians(deflections_deg[i % len(deflections_deg)])
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        spin = rng.uniform(0.0, 2.0 * math.pi)
        max_off = 0.25 * range_m
        offset = (rng.uniform(-max_off, max_off), rng.uniform(-max_off * 0.7, max_off * 0.7))
        pose = marker_pose(range_m, deflection, azimuth, spin, offset)
        frame_seed = int(rng.integers(0, 2**63 - 1))
        frames.append(
            RenderedFrame(
                image=render_scene(K, [(spec, pose)], supersample=supersample, seed=frame_seed, noise_sigma=noise_sigma),
                truth_pose=pose,
                truth_id=spec.id,
                timestamp=i * 0.1,
            )
        )
    return frames
