"""Pinhole camera model, rigid transforms, and circle pose recovery.

Coordinate conventions used throughout the package:

- Camera frame: x right, y down, z forward along the optical axis (pixels
  grow right/down). Standard computer-vision convention.
- World frame: ENU (x East, y North, z Up), ground plane z = 0.
- Rotations are unit quaternions (w, x, y, z) internally; pitch/roll/yaw
  appear only at API edges, applied in ZYX order (yaw, then pitch, then
  roll).

A circle seen under perspective projects to an ellipse. Inverting that
projection from a single view yields the circle center ray and *two*
plane-normal hypotheses (the classical one-circle pose ambiguity); both
are returned so downstream code can disambiguate or sidestep them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonPositiveDepth(ValueError):
    """A point at or behind the camera plane cannot be projected."""


class DegenerateConic(ValueError):
    """The conic is not a real, finite ellipse seen from the front."""


# --- small rotation helpers ---------------------------------------------


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    # Canonical sign: w >= 0 keeps serialized poses reproducible.
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
            )
        elif i == 1:
            s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
    return quat_normalize(q)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return quat_normalize(np.concatenate([[math.cos(half)], math.sin(half) * axis]))


# --- domain types --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: rotation (unit quaternion w,x,y,z) + translation (m).

    ``transform(p)`` maps points from the pose's *local* frame into its
    parent frame: ``p_parent = R @ p_local + t``.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {np.linalg.norm(q)} not within 1e-9 of 1")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, R: np.ndarray, t: np.ndarray) -> "Pose":
        return cls(quat_from_matrix(R), np.asarray(t, dtype=float))

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def inverse(self) -> "Pose":
        qc = quat_conjugate(self.rotation)
        Rt = quat_to_matrix(qc)
        return Pose(quat_normalize(qc), -(Rt @ self.translation))

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        q = quat_normalize(quat_multiply(self.rotation, other.rotation))
        t = self.matrix() @ other.translation + self.translation
        return Pose(q, t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.matrix().T + self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels; imagery is assumed undistorted."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point outside the raster")

    @classmethod
    def from_hfov(cls, width: int = 640, height: int = 480, hfov_deg: float = 77.0) -> "CameraIntrinsics":
        """Square-pixel intrinsics from a horizontal field of view."""
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


DEFAULT_INTRINSICS = CameraIntrinsics.from_hfov()


@dataclass(frozen=True)
class Ellipse:
    """Image ellipse: center (u, v), semi-axes a >= b > 0, orientation
    theta in [0, pi) measured from the +u axis to the major axis."""

    u: float
    v: float
    a: float
    b: float
    theta: float

    def __post_init__(self):
        if not (self.a >= self.b > 0.0):
            raise ValueError(f"require a >= b > 0, got a={self.a}, b={self.b}")
        object.__setattr__(self, "theta", float(self.theta) % math.pi)

    def conic_matrix(self) -> np.ndarray:
        """3x3 symmetric matrix C with p^T C p = 0 on the ellipse
        (p homogeneous pixel coords)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        a2, b2 = self.a * self.a, self.b * self.b
        A = a2 * s * s + b2 * c * c
        B = 2.0 * (b2 - a2) * s * c
        C = a2 * c * c + b2 * s * s
        D = -2.0 * A * self.u - B * self.v
        E = -B * self.u - 2.0 * C * self.v
        F = A * self.u**2 + B * self.u * self.v + C * self.v**2 - a2 * b2
        return np.array([[A, B / 2.0, D / 2.0], [B / 2.0, C, E / 2.0], [D / 2.0, E / 2.0, F]])

    def boundary_points(self, n: int = 64) -> np.ndarray:
        """n points along the ellipse boundary, shape (n, 2)."""
        phi = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
        c, s = math.cos(self.theta), math.sin(self.theta)
        x = self.a * np.cos(phi)
        y = self.b * np.sin(phi)
        return np.stack([self.u + x * c - y * s, self.v + x * s + y * c], axis=1)


@dataclass(frozen=True, eq=False)
class OrientationCandidates:
    """The two plane-normal hypotheses for an observed circle.

    ``normal0``/``normal1`` are unit normals in the camera frame, both
    flipped to face the camera (z < 0). ``position`` is the circle center
    (midpoint of the two per-hypothesis centers, which differ only at
    second order); ``center0``/``center1`` keep the exact per-hypothesis
    centers for reprojection-accurate prediction.
    """

    normal0: np.ndarray
    normal1: np.ndarray
    position: np.ndarray
    center0: np.ndarray = field(repr=False, default=None)
    center1: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        for name in ("normal0", "normal1", "position"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        if self.center0 is None:
            object.__setattr__(self, "center0", self.position.copy())
        if self.center1 is None:
            object.__setattr__(self, "center1", self.position.copy())
        for n in (self.normal0, self.normal1):
            if abs(np.linalg.norm(n) - 1.0) > 1e-6:
                raise ValueError("candidate normals must be unit vectors")
            if n[2] >= 0.0:
                raise ValueError("candidate normals must face the camera (z < 0)")
        if self.position[2] <= 0.0:
            raise ValueError("circle position must be in front of the camera")

    def normal(self, index: int) -> np.ndarray:
        return self.normal0 if index == 0 else self.normal1

    def center(self, index: int) -> np.ndarray:
        return self.center0 if index == 0 else self.center1

    @property
    def separation_angle(self) -> float:
        """Angle between the two candidate normals, radians."""
        d = float(np.clip(np.dot(self.normal0, self.normal1), -1.0, 1.0))
        return math.acos(d)


# --- projection ----------------------------------------------------------


def project(K: CameraIntrinsics, points: np.ndarray) -> np.ndarray:
    """Project camera-frame points (..., 3) to pixels (..., 2).

    Raises NonPositiveDepth if any point has z <= 0.
    """
    points = np.asarray(points, dtype=float)
    z = points[..., 2]
    if np.any(z <= 0.0):
        raise NonPositiveDepth("point at or behind the camera plane")
    u = K.fx * points[..., 0] / z + K.cx
    v = K.fy * points[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def deproject(K: CameraIntrinsics, pixels: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Back-project pixels (..., 2) at z-depth ``depth`` (m) to camera-frame
    points (..., 3)."""
    pixels = np.asarray(pixels, dtype=float)
    depth = np.asarray(depth, dtype=float)
    x = (pixels[..., 0] - K.cx) / K.fx * depth
    y = (pixels[..., 1] - K.cy) / K.fy * depth
    return np.stack([x, y, depth], axis=-1)


def plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal in-plane basis (u, v) for a plane normal."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    seed = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, seed)
    u = u / np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def ellipse_from_conic(C: np.ndarray) -> Ellipse:
    """Geometric ellipse parameters from a 3x3 conic matrix.

    Raises DegenerateConic if the conic is not a real ellipse.
    """
    C = np.asarray(C, dtype=float)
    A = C[0, 0]
    B = 2.0 * C[0, 1]
    Cc = C[1, 1]
    D = 2.0 * C[0, 2]
    E = 2.0 * C[1, 2]
    F = C[2, 2]

    T = B * B - 4.0 * A * Cc
    if T >= 0.0:
        raise DegenerateConic("conic is not an ellipse (non-negative discriminant)")
    u = (2.0 * Cc * D - B * E) / T
    v = (2.0 * A * E - B * D) / T

    S = A * E * E + Cc * D * D - B * D * E + T * F
    U = math.sqrt((A - Cc) ** 2 + B * B)
    ra2 = 2.0 * S * (A + Cc + U)
    rb2 = 2.0 * S * (A + Cc - U)
    if ra2 <= 0.0 or rb2 <= 0.0:
        raise DegenerateConic("conic has no real semi-axes")
    a = math.sqrt(ra2) / abs(T)
    b = math.sqrt(rb2) / abs(T)
    theta = math.atan2(Cc - A - U, B) % math.pi
    if a < b:
        a, b = b, a
        theta = (theta + math.pi / 2.0) % math.pi
    return Ellipse(u=u, v=v, a=a, b=b, theta=theta)


def project_circle(K: CameraIntrinsics, center: np.ndarray, normal: np.ndarray, radius: float) -> Ellipse:
    """Exact perspective projection of a 3-D circle to its image ellipse.

    ``center``/``normal`` are in the camera frame; the circle must be in
    front of the camera. This is the forward map that
    ``circle_pose_from_ellipse`` inverts, so it doubles as a test oracle.
    """
    center = np.asarray(center, dtype=float)
    normal = np.asarray(normal, dtype=float)
    if center[2] <= 0.0:
        raise NonPositiveDepth("circle center behind the camera")
    u, v = plane_basis(normal)
    # Homography from plane coords (alpha, beta, 1) to homogeneous pixels.
    H = K.K @ np.column_stack([u, v, center])
    C_plane = np.diag([1.0, 1.0, -radius * radius])
    Hinv = np.linalg.inv(H)
    C_img = Hinv.T @ C_plane @ Hinv
    return ellipse_from_conic(C_img)


def circle_pose_from_ellipse(K: CameraIntrinsics, e: Ellipse, radius: float) -> OrientationCandidates:
    """Recover a circle's pose from its image ellipse.

    Eigen-decomposes the back-projection cone Q = K^T C K of the image
    conic C. The cone admits exactly two planes cutting it in a circle of
    the given radius in front of the camera, giving two (normal, center)
    hypotheses that only a second observation or prior could separate.
    Both normals are flipped toward the camera; the two hypotheses
    coincide exactly when the ellipse is a circle (a == b).
    """
    if radius <= 0.0:
        raise ValueError("circle radius must be positive")
    Q = K.K.T @ e.conic_matrix() @ K.K
    w, V = np.linalg.eigh(Q)
    # Need signature (+, +, -): flip overall sign if two eigenvalues are negative.
    if np.sum(w > 0.0) == 1:
        w, V = -w[::-1], V[:, ::-1]
    idx = np.argsort(w)[::-1]  # descending: l1 >= l2 > 0 > l3
    w, V = w[idx], V[:, idx]
    l1, l2, l3 = w
    if not (l1 >= l2 > 0.0 > l3):
        raise DegenerateConic("back-projection cone has no real circular sections")
    # Deterministic eigenvector signs (replay-stable candidate ordering).
    for j in range(3):
        k = int(np.argmax(np.abs(V[:, j])))
        if V[k, j] < 0.0:
            V[:, j] = -V[:, j]

    g = math.sqrt(max(l1 - l2, 0.0) / (l1 - l3))
    h = math.sqrt(max(l2 - l3, 0.0) / (l1 - l3))
    dist = radius * l2 / math.sqrt(-l1 * l3)

    normals = []
    centers = []
    for s in (1.0, -1.0):
        sin_a, cos_a = s * g, h
        x0 = dist * sin_a * cos_a * (l1 - l3) / l2
        center_e = np.array(
            [cos_a * x0 - sin_a * dist, 0.0, sin_a * x0 + cos_a * dist]
        )
        normal_e = np.array([-sin_a, 0.0, cos_a])
        center = V @ center_e
        normal = V @ normal_e
        if center[2] < 0.0:
            center = -center
        if normal[2] > 0.0:
            normal = -normal
        elif normal[2] == 0.0 and (normal[0] < 0.0 or (normal[0] == 0.0 and normal[1] < 0.0)):
            normal = -normal
        normals.append(normal / np.linalg.norm(normal))
        centers.append(center)

    position = 0.5 * (centers[0] + centers[1])
    return OrientationCandidates(
        normal0=normals[0],
        normal1=normals[1],
        position=position,
        center0=centers[0],
        center1=centers[1],
    )


def attitude_to_rotation(pitch: float, roll: float) -> np.ndarray:
    """Zero-yaw attitude quaternion: R = Rx(pitch) @ Ry(roll).

    Pitch tilts about the sensor's x (image-right) axis, roll about its y
    (image-down) axis. Composing the result with the rotation of the
    negated angles' inverse order yields identity.
    """
    if not (abs(pitch) < math.pi / 2 and abs(roll) < math.pi / 2):
        raise ValueError("pitch and roll must lie in (-pi/2, pi/2)")
    qx = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), pitch)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), roll)
    return quat_normalize(quat_multiply(qx, qy))


def angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two vectors, radians."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.acos(min(1.0, max(-1.0, d)))


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = (angle + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if a == -math.pi else a
