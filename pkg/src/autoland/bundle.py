"""Multi-marker bundle pose: position-only fusion of 3+ coplanar markers.

The bundle position is the mean of the member positions and its
orientation is the least-squares plane through them. Individual marker
orientation hypotheses are deliberately ignored; triangulating the plane
from positions alone is what makes the bundle immune to the one-circle
orientation ambiguity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detector import Detection


class InsufficientMarkers(ValueError):
    """Fewer than three distinct marker IDs: no unique plane exists."""


class PlanarityViolation(ValueError):
    """Member positions deviate too far from any single plane."""


@dataclass(frozen=True, eq=False)
class BundlePose:
    """Fused pose of a marker bundle in the camera frame."""

    position: np.ndarray  # (3,), m
    normal: np.ndarray  # unit, faces the camera (z < 0)
    member_ids: tuple[int, ...]
    rms_planarity: float  # m
    yaw_direction: np.ndarray | None = None  # in-plane unit vector, see bundle_pose

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float).reshape(3))
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise ValueError("bundle normal must be a unit vector")
        if self.normal[2] >= 0.0:
            raise ValueError("bundle normal must face the camera")
        if len(set(self.member_ids)) < 3:
            raise ValueError("a bundle needs at least 3 distinct members")


def bundle_pose(
    detections: list[Detection],
    max_rms_planarity: float = 0.05,
) -> BundlePose:
    """Fuse marker detections into one bundle pose.

    Position is the arithmetic mean of member positions; the normal is
    the smallest-singular-direction of the centered position matrix,
    flipped toward the camera. Only positions enter the fit.

    Raises InsufficientMarkers with fewer than 3 distinct IDs and
    PlanarityViolation when the RMS point-to-plane residual exceeds
    ``max_rms_planarity`` (a rigid pad should be flat).
    """
    by_id: dict[int, Detection] = {}
    for det in detections:
        by_id.setdefault(det.id, det)
    if len(by_id) < 3:
        raise InsufficientMarkers(
            f"{len(by_id)} distinct marker ids; need 3+ to regress a unique plane"
        )

    members = sorted(by_id.items())
    ids = tuple(mid for mid, _ in members)
    positions = np.array([det.position for _, det in members])
    centroid = positions.mean(axis=0)
    centered = positions - centroid
    _, svals, vt = np.linalg.svd(centered, full_matrices=True)
    normal = vt[2]
    if normal[2] > 0.0:
        normal = -normal
    residuals = centered @ normal
    rms = float(math.sqrt(np.mean(residuals**2)))
    if rms > max_rms_planarity:
        raise PlanarityViolation(
            f"rms point-to-plane residual {rms:.4f} m exceeds {max_rms_planarity} m"
        )

    # Yaw reference: the two lowest member IDs, projected into the plane.
    p0, p1 = by_id[ids[0]].position, by_id[ids[1]].position
    baseline = p1 - p0
    in_plane = baseline - np.dot(baseline, normal) * normal
    norm = np.linalg.norm(in_plane)
    yaw_dir = in_plane / norm if norm > 1e-9 else None

    return BundlePose(
        position=centroid,
        normal=normal / np.linalg.norm(normal),
        member_ids=ids,
        rms_planarity=rms,
        yaw_direction=yaw_dir,
    )
