"""Circular-marker detector: segmentation, ellipse fit, ID decode, pose.

Pipeline per frame: global Otsu threshold, flood-fill segmentation,
concentric black-ring/white-core test, ellipse from intensity-weighted
second-order region moments, Manchester ID decode along the tooth
annulus, circle pose recovery, then one of two orientation-disambiguation
strategies:

- ``Variant.ORIGINAL`` scores each pose hypothesis by the arclength of
  its predicted sampling ellipse that lands on the wrong side of the
  tooth boundaries (binary mismatch, best in-plane phase).
- ``Variant.ELLIPSE`` additionally predicts where each white tooth's
  outer edge should sit radially and scores hypotheses by the mean
  squared offset between predicted and observed edge radii, which keeps
  sub-pixel information the binary mismatch throws away.

Both scores are lower-is-better; exact ties resolve to hypothesis 0 so a
replayed frame always yields the same detection.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import (
    CameraIntrinsics,
    DegenerateConic,
    Ellipse,
    OrientationCandidates,
    circle_pose_from_ellipse,
    plane_basis,
    project,
)
from .marker import MarkerSpec, canonical_pattern, pattern_to_id, rotate_bits


class InvalidManchester(ValueError):
    """A tooth pair failed the opposite-polarity test."""


class Variant(enum.Enum):
    """Orientation-disambiguation strategy."""

    ORIGINAL = "original"
    ELLIPSE = "ellipse"


@dataclass
class DetectorConfig:
    min_region_area: int = 64  # px, outer region; smaller pose is too noisy
    max_centroid_offset: float = 0.15  # of outer semi-minor axis
    area_ratio_tolerance: float = 0.30  # relative, white core vs prediction
    decode_samples: int = 5  # radial-ring samples averaged per half-sector
    dense_samples_per_half_sector: int = 16
    radial_samples: int = 32
    min_border_margin: int = 1  # px; regions touching the border are dropped


@dataclass
class DetectStats:
    """Debug counters for rejected candidate regions."""

    regions: int = 0
    rejected_size: int = 0
    rejected_border: int = 0
    rejected_no_core: int = 0
    rejected_centroid: int = 0
    rejected_area_ratio: int = 0
    rejected_decode: int = 0
    rejected_pose: int = 0


@dataclass(frozen=True, eq=False)
class Detection:
    """One detected marker with both orientation hypotheses."""

    id: int
    ellipse: Ellipse
    position: np.ndarray  # camera frame, m
    candidates: OrientationCandidates
    chosen: int  # index of the better-scoring hypothesis
    score0: float
    score1: float
    timestamp: float = 0.0
    spin: float = 0.0  # in-plane rotation of the marker's canonical origin
    confidence: float = 0.0  # Manchester decode contrast

    @property
    def normal(self) -> np.ndarray:
        """Chosen plane normal (camera frame, faces the camera)."""
        return self.candidates.normal(self.chosen)


def otsu_threshold(image: np.ndarray) -> float:
    """Classic between-class-variance threshold for an 8-bit image."""
    hist = np.bincount(image.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    w0 = np.cumsum(hist)
    w1 = total - w0
    cum = np.cumsum(hist * np.arange(256))
    mean0 = np.divide(cum, w0, out=np.zeros(256), where=w0 > 0)
    mean1 = np.divide(cum[-1] - cum, w1, out=np.zeros(256), where=w1 > 0)
    between = w0 * w1 * (mean0 - mean1) ** 2
    return float(np.argmax(between)) + 0.5


def bilinear_sample(image: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Sample a 2-D image at float pixel coordinates (u, v), clamped."""
    h, w = image.shape
    u = np.clip(uv[..., 0], 0.0, w - 1.001)
    v = np.clip(uv[..., 1], 0.0, h - 1.001)
    u0 = u.astype(np.int64)
    v0 = v.astype(np.int64)
    fu = u - u0
    fv = v - v0
    img = image.astype(np.float32, copy=False)
    top = img[v0, u0] * (1 - fu) + img[v0, u0 + 1] * fu
    bot = img[v0 + 1, u0] * (1 - fu) + img[v0 + 1, u0 + 1] * fu
    return top * (1 - fv) + bot * fv


def _weighted_moments_ellipse(weights: np.ndarray, u0: int, v0: int) -> Ellipse:
    """Ellipse from second-order moments of a weight raster (solid support)."""
    m00 = weights.sum()
    vs, us = np.mgrid[0 : weights.shape[0], 0 : weights.shape[1]]
    cu = float((weights * us).sum() / m00)
    cv = float((weights * vs).sum() / m00)
    du = us - cu
    dv = vs - cv
    mu20 = float((weights * du * du).sum() / m00)
    mu11 = float((weights * du * dv).sum() / m00)
    mu02 = float((weights * dv * dv).sum() / m00)
    cov = np.array([[mu20, mu11], [mu11, mu02]])
    evals, evecs = np.linalg.eigh(cov)
    # For a solid ellipse the covariance eigenvalues are (a/2)^2, (b/2)^2.
    a = 2.0 * math.sqrt(max(evals[1], 1e-12))
    b = 2.0 * math.sqrt(max(evals[0], 1e-12))
    theta = math.atan2(evecs[1, 1], evecs[0, 1]) % math.pi
    return Ellipse(u=cu + u0, v=cv + v0, a=a, b=b, theta=theta)


def ellipse_param_point(e: Ellipse, s: np.ndarray, radial_scale: float = 1.0) -> np.ndarray:
    """Points on a scaled copy of the ellipse at parametric angles ``s``."""
    c, sn = math.cos(e.theta), math.sin(e.theta)
    x = radial_scale * e.a * np.cos(s)
    y = radial_scale * e.b * np.sin(s)
    return np.stack([e.u + x * c - y * sn, e.v + x * sn + y * c], axis=-1)


def decode_id(
    image: np.ndarray,
    ellipse: Ellipse,
    spec: MarkerSpec,
    white_ref: float | None = None,
    black_ref: float | None = None,
    config: DetectorConfig | None = None,
) -> tuple[int, int, float]:
    """Manchester-decode the tooth annulus through the fitted ellipse.

    Samples each half-sector at the annulus mid-radius (affine circle ->
    ellipse map), pairs half-sectors into bits, canonicalizes the bit
    string by minimizing over cyclic rotations, and maps the canonical
    pattern to its ID. Returns (id, rotation_offset, confidence) where
    confidence is the worst per-bit contrast, normalized.

    Raises InvalidManchester if any half-sector pair thresholds to the
    same polarity.
    """
    config = config or DetectorConfig()
    n_bits = spec.num_id_bits
    n_half = 2 * n_bits
    per = config.dense_samples_per_half_sector
    n_dense = n_half * per
    ratio_mid = 0.5 * (spec.id_ring_inner_ratio + spec.id_ring_outer_ratio)

    if white_ref is None or black_ref is None:
        inner = bilinear_sample(image, ellipse_param_point(ellipse, np.linspace(0, 2 * math.pi, 16), 0.15))
        body = bilinear_sample(
            image,
            ellipse_param_point(
                ellipse, np.linspace(0, 2 * math.pi, 32), 0.5 * (spec.inner_radius_ratio + spec.id_ring_inner_ratio)
            ),
        )
        white_ref = float(np.median(inner))
        black_ref = float(np.median(body))
    threshold = 0.5 * (white_ref + black_ref)
    contrast_scale = max(white_ref - black_ref, 1.0)

    # The marker's in-plane angle runs opposite the image parametric angle
    # (image v points down), so sample the ellipse clockwise.
    marker_angle = (np.arange(n_dense) + 0.5) * (2 * math.pi / n_dense)
    pts = ellipse_param_point(ellipse, -marker_angle, ratio_mid)
    dense = bilinear_sample(image, pts)

    # Tooth boundaries only occur on the half-sector grid; the offsets of
    # the observed transitions (mod one half-sector) vote for the grid
    # phase via a circular mean.
    white = dense > threshold
    transitions = np.flatnonzero(white != np.roll(white, 1))
    if len(transitions) == 0:
        raise InvalidManchester("no transitions in the tooth ring")
    frac = (transitions % per) * (2 * math.pi / per)
    phase = (math.atan2(np.sin(frac).sum(), np.cos(frac).sum()) % (2 * math.pi)) / (2 * math.pi) * per

    # Mean level of the central 60% of each half-sector.
    centers = np.linspace(0.2, 0.8, max(config.decode_samples, 3))
    idx = (np.rint(phase + (np.arange(n_half)[:, None] + centers[None, :]) * per).astype(int)) % n_dense
    level = dense[idx].mean(axis=1)

    # Manchester framing: try both pairings of half-sectors into bits.
    for start in (0, 1):
        rolled = np.roll(level, -start)
        first, second = rolled[0::2], rolled[1::2]
        if np.all((first > threshold) != (second > threshold)):
            break
    else:
        raise InvalidManchester("half-sector pair with matching polarity")

    bits = (first > second).astype(int)
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    canonical = canonical_pattern(value, n_bits)
    # All-ones is the all-zeros ring spun half a sector; it reaches its
    # canonical form through that half-sector shift, not a bit rotation.
    offsets = [s for s in range(n_bits) if rotate_bits(value, s, n_bits) == canonical]
    rotation_offset = offsets[0] if offsets else 0
    confidence = float(np.min(np.abs(first - second)) / contrast_scale)
    return pattern_to_id(value, n_bits), rotation_offset, confidence


def _predict_ring_points(
    K: CameraIntrinsics,
    center: np.ndarray,
    normal: np.ndarray,
    radius: float,
    angles: np.ndarray,
) -> np.ndarray:
    """Project points of a circle of ``radius`` on the hypothesis plane."""
    u, v = plane_basis(normal)
    pts3 = center + radius * (np.outer(np.cos(angles), u) + np.outer(np.sin(angles), v))
    return project(K, pts3)


def _hypothesis_pattern_score(
    image: np.ndarray,
    K: CameraIntrinsics,
    spec: MarkerSpec,
    center: np.ndarray,
    normal: np.ndarray,
    colors: np.ndarray,
    threshold: float,
    config: DetectorConfig,
) -> tuple[float, float]:
    """Arclength-weighted tooth-pattern mismatch for one pose hypothesis.

    Returns (score, phase) where phase is the in-plane angle aligning the
    expected pattern to the observations (nuisance, minimized over).
    """
    n_half = len(colors)
    per = config.dense_samples_per_half_sector
    n_dense = n_half * per
    ratio_mid = 0.5 * (spec.id_ring_inner_ratio + spec.id_ring_outer_ratio)
    angles = (np.arange(n_dense) + 0.5) * (2 * math.pi / n_dense)
    pts = _predict_ring_points(K, center, normal, ratio_mid * spec.outer_radius, angles)
    observed_white = bilinear_sample(image, pts) > threshold
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    arc_w = 0.5 * (seg + np.roll(seg, 1))
    expected = np.repeat(colors, per)

    # All cyclic phase shifts at once: expected[(k - shift) mod n] per row.
    idx = (np.arange(n_dense)[None, :] - np.arange(n_dense)[:, None]) % n_dense
    mismatch = observed_white[None, :] != expected[idx]
    scores = mismatch @ arc_w
    best_shift = int(np.argmin(scores))
    phase = best_shift * (2 * math.pi / n_dense)
    return float(scores[best_shift]) / float(arc_w.sum()), phase


def disambiguate_original(
    image: np.ndarray,
    ellipse: Ellipse,
    spec: MarkerSpec,
    candidates: OrientationCandidates,
    K: CameraIntrinsics,
    colors: np.ndarray,
    threshold: float,
    config: DetectorConfig | None = None,
) -> tuple[int, float, float, float]:
    """Pick the hypothesis whose predicted sampling ellipse crosses the
    teeth with the least wrong-polarity arclength.

    Returns (chosen, score0, score1, phase_of_chosen).
    """
    config = config or DetectorConfig()
    scores = []
    phases = []
    for i in (0, 1):
        s, p = _hypothesis_pattern_score(
            image, K, spec, candidates.center(i), candidates.normal(i), colors, threshold, config
        )
        scores.append(s)
        phases.append(p)
    chosen = 0 if scores[0] <= scores[1] else 1
    return chosen, scores[0], scores[1], phases[chosen]


def _last_crossing(row: np.ndarray, t: np.ndarray, threshold: float, downward: bool) -> float | None:
    """Sub-pixel radius of the outermost threshold crossing along a scan."""
    above = row > threshold
    flips = np.flatnonzero((above[:-1] & ~above[1:]) if downward else (~above[:-1] & above[1:]))
    if len(flips) == 0:
        return None
    j = int(flips[-1])
    denom = row[j] - row[j + 1] if downward else row[j + 1] - row[j]
    frac = (row[j] - threshold) / denom if downward else (threshold - row[j]) / denom
    frac = min(max(frac, 0.0), 1.0)
    return float(t[j] + (t[j + 1] - t[j]) * frac)


def _hypothesis_edge_score(
    image: np.ndarray,
    K: CameraIntrinsics,
    spec: MarkerSpec,
    center: np.ndarray,
    normal: np.ndarray,
    colors: np.ndarray,
    threshold: float,
    phase: float,
    config: DetectorConfig,
) -> float:
    """Mean squared radial offset between predicted and observed tooth
    edges, normalized by the annulus width.

    Each white tooth is scanned along three radial rays; the inner
    (black-to-white) and outer (white-to-black) edge offsets are taken as
    the per-ray median so a single corner-clipping ray cannot hijack the
    tooth's vote.
    """
    n_half = len(colors)
    white_idx = np.flatnonzero(colors)
    if len(white_idx) == 0:
        return 1.0
    sector = 2 * math.pi / n_half
    ray_frac = np.array([0.3, 0.5, 0.7])
    angles = (phase + (white_idx[:, None] + ray_frac[None, :]) * sector).ravel()
    width = spec.id_ring_outer_ratio - spec.id_ring_inner_ratio
    t = np.linspace(
        max(spec.id_ring_inner_ratio - 0.5 * width, spec.inner_radius_ratio + 0.02),
        min(spec.id_ring_outer_ratio + 0.6 * width, 0.98),
        config.radial_samples,
    )
    u, v = plane_basis(normal)
    dirs = np.outer(np.cos(angles), u) + np.outer(np.sin(angles), v)
    pts3 = center[None, None, :] + spec.outer_radius * t[None, :, None] * dirs[:, None, :]
    pts = project(K, pts3)
    profile = bilinear_sample(image, pts).reshape(len(white_idx), len(ray_frac), len(t))

    half = len(t) // 2
    offsets = []
    for tooth in profile:
        outer = [_last_crossing(row[half:], t[half:], threshold, downward=True) for row in tooth]
        inner = [_last_crossing(row[: half + 1], t[: half + 1], threshold, downward=False) for row in tooth]
        outer = [o for o in outer if o is not None]
        inner = [o for o in inner if o is not None]
        if outer:
            offsets.append((float(np.median(outer)) - spec.id_ring_outer_ratio) / width)
        else:
            offsets.append(1.0)
        if inner:
            offsets.append((float(np.median(inner)) - spec.id_ring_inner_ratio) / width)
        else:
            offsets.append(1.0)
    return float(np.mean(np.square(offsets)))


def disambiguate_ellipse(
    image: np.ndarray,
    ellipse: Ellipse,
    spec: MarkerSpec,
    candidates: OrientationCandidates,
    K: CameraIntrinsics,
    colors: np.ndarray,
    threshold: float,
    config: DetectorConfig | None = None,
) -> tuple[int, float, float, float]:
    """Pick the hypothesis whose predicted tooth edges are better centered
    on the observed radial white-to-black transitions.

    Returns (chosen, score0, score1, phase_of_chosen).
    """
    config = config or DetectorConfig()
    scores = []
    phases = []
    for i in (0, 1):
        _, phase = _hypothesis_pattern_score(
            image, K, spec, candidates.center(i), candidates.normal(i), colors, threshold, config
        )
        s = _hypothesis_edge_score(
            image, K, spec, candidates.center(i), candidates.normal(i), colors, threshold, phase, config
        )
        scores.append(s)
        phases.append(phase)
    chosen = 0 if scores[0] <= scores[1] else 1
    return chosen, scores[0], scores[1], phases[chosen]


def detect(
    image: np.ndarray,
    K: CameraIntrinsics,
    spec: MarkerSpec,
    variant: Variant = Variant.ELLIPSE,
    timestamp: float = 0.0,
    config: DetectorConfig | None = None,
    stats: DetectStats | None = None,
) -> list[Detection]:
    """Find all markers in an 8-bit grayscale frame.

    Returns detections sorted by image area, largest first. Rejected
    candidate regions are tallied in ``stats`` when provided.
    """
    if image.shape != (K.height, K.width):
        raise ValueError(f"image shape {image.shape} does not match intrinsics {(K.height, K.width)}")
    config = config or DetectorConfig()
    stats = stats if stats is not None else DetectStats()
    img_f = image.astype(np.float32)

    threshold = otsu_threshold(image)
    black = image < threshold
    labels, n_regions = ndimage.label(black)
    stats.regions = n_regions
    detections = []
    slices = ndimage.find_objects(labels)

    for region_idx, sl in enumerate(slices, start=1):
        if sl is None:
            continue
        v_sl, u_sl = sl
        region = labels[sl] == region_idx
        area = int(region.sum())
        if area < config.min_region_area:
            stats.rejected_size += 1
            continue
        m = config.min_border_margin
        if (
            v_sl.start < m
            or u_sl.start < m
            or v_sl.stop > K.height - m
            or u_sl.stop > K.width - m
        ):
            stats.rejected_border += 1
            continue

        filled = ndimage.binary_fill_holes(region)
        holes, n_holes = ndimage.label(filled & ~region)
        if n_holes == 0:
            stats.rejected_no_core += 1
            continue
        hole_sizes = ndimage.sum_labels(np.ones_like(holes), holes, index=np.arange(1, n_holes + 1))
        core_label = int(np.argmax(hole_sizes)) + 1
        core = holes == core_label

        # Intensity-weighted moments: interior cells count fully, the
        # two-pixel boundary band by its darkness against the local
        # background, recovering the anti-aliased sub-pixel edge.
        tile = img_f[sl]
        interior = ndimage.binary_erosion(filled)
        dil1 = ndimage.binary_dilation(filled)
        ring = dil1 & ~interior
        outside = ndimage.binary_dilation(dil1) & ~dil1
        black_ref = float(np.median(tile[region]))
        bg_ref = float(np.median(tile[outside])) if outside.any() else 128.0
        weights = interior.astype(np.float32)
        denom = max(bg_ref - black_ref, 1.0)
        weights[ring] = np.clip((bg_ref - tile[ring]) / denom, 0.0, 1.0)
        try:
            ell = _weighted_moments_ellipse(weights, u_sl.start, v_sl.start)
        except ValueError:
            stats.rejected_pose += 1
            continue

        # Concentric-pair test: the white core must sit on the outer
        # centroid and have the area the radial layout predicts.
        cu, cv = ndimage.center_of_mass(core)
        cu, cv = cv + u_sl.start, cu + v_sl.start
        if math.hypot(cu - ell.u, cv - ell.v) > config.max_centroid_offset * ell.b:
            stats.rejected_centroid += 1
            continue
        predicted_ratio = spec.inner_radius_ratio**2
        core_ratio = float(core.sum()) / float(filled.sum())
        if abs(core_ratio - predicted_ratio) > config.area_ratio_tolerance * predicted_ratio:
            stats.rejected_area_ratio += 1
            continue

        white_ref = float(np.median(tile[core]))
        try:
            marker_id, rotation_offset, confidence = decode_id(
                image, ell, spec, white_ref=white_ref, black_ref=black_ref, config=config
            )
        except InvalidManchester:
            stats.rejected_decode += 1
            continue

        try:
            cand = circle_pose_from_ellipse(K, ell, spec.outer_radius)
        except DegenerateConic:
            stats.rejected_pose += 1
            continue

        # Canonical tooth colors; the scoring phase search absorbs both the
        # marker's physical spin and the necklace rotation offset.
        colors = spec.half_sector_colors()
        sample_threshold = 0.5 * (white_ref + black_ref)
        disambiguate = disambiguate_original if variant is Variant.ORIGINAL else disambiguate_ellipse
        chosen, score0, score1, phase = disambiguate(
            image, ell, spec, cand, K, colors, sample_threshold, config
        )
        spin = (-phase) % (2 * math.pi)

        detections.append(
            Detection(
                id=marker_id,
                ellipse=ell,
                position=cand.position,
                candidates=cand,
                chosen=chosen,
                score0=score0,
                score1=score1,
                timestamp=timestamp,
                spin=spin,
                confidence=confidence,
            )
        )

    detections.sort(key=lambda d: d.ellipse.a * d.ellipse.b, reverse=True)
    return detections
