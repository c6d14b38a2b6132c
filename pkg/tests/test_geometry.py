"""Tests for the camera model and circle pose recovery."""

import math

import numpy as np
import pytest

from autoland.geometry import (
    CameraIntrinsics,
    DegenerateConic,
    Ellipse,
    NonPositiveDepth,
    Pose,
    angle_between,
    attitude_to_rotation,
    circle_pose_from_ellipse,
    deproject,
    ellipse_from_conic,
    project,
    project_circle,
    quat_multiply,
    quat_to_matrix,
    rot_x,
    rot_y,
    wrap_angle,
)

K = CameraIntrinsics.from_hfov(640, 480, 77.0)


def tilted_normal(tilt: float, azimuth: float = 0.0) -> np.ndarray:
    """Camera-facing unit normal tilted away from the optical axis."""
    n = np.array([math.sin(tilt) * math.cos(azimuth), math.sin(tilt) * math.sin(azimuth), -math.cos(tilt)])
    return n


class TestProject:
    def test_optical_axis_maps_to_principal_point(self):
        uv = project(K, np.array([0.0, 0.0, 2.0]))
        assert uv == pytest.approx([320.0, 240.0])

    def test_default_focal_length_matches_fov(self):
        # 77 deg horizontal FOV at 640 px: f = 320 / tan(38.5 deg) ~ 402.2 px
        assert K.fx == pytest.approx(320.0 / math.tan(math.radians(38.5)))
        assert K.fx == pytest.approx(402.2, abs=0.15)

    def test_hand_computed_offset_point(self):
        K2 = CameraIntrinsics(fx=402.2, fy=402.2, cx=320, cy=240, width=640, height=480)
        uv = project(K2, np.array([0.5, 0.0, 2.0]))
        # u = 402.2 * 0.25 + 320 = 420.55
        assert uv[0] == pytest.approx(420.55)

    def test_nonpositive_depth_rejected(self):
        with pytest.raises(NonPositiveDepth):
            project(K, np.array([0.0, 0.0, 0.0]))
        with pytest.raises(NonPositiveDepth):
            project(K, np.array([[0.0, 0.0, 1.0], [0.1, 0.1, -2.0]]))

    def test_round_trip_exact(self):
        rng = np.random.default_rng(7)
        pts = np.column_stack(
            [rng.uniform(-2, 2, 200), rng.uniform(-2, 2, 200), rng.uniform(0.2, 10, 200)]
        )
        uv = project(K, pts)
        back = deproject(K, uv, pts[:, 2])
        assert np.max(np.abs(back - pts)) < 1e-9


class TestPose:
    def test_identity_round_trip(self):
        p = Pose.identity()
        x = np.array([1.0, 2.0, 3.0])
        assert np.allclose(p.transform(x), x)

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            p = Pose(q, rng.normal(size=3))
            ident = p.compose(p.inverse())
            assert np.allclose(quat_to_matrix(ident.rotation), np.eye(3), atol=1e-9)
            assert np.allclose(ident.translation, 0.0, atol=1e-9)

    def test_non_unit_quaternion_rejected(self):
        with pytest.raises(ValueError):
            Pose(np.array([1.0, 0.1, 0.0, 0.0]), np.zeros(3))

    def test_rotation_matrix_is_special_orthogonal(self):
        rng = np.random.default_rng(11)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        R = Pose(q, np.zeros(3)).matrix()
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)


class TestEllipseConic:
    def test_conic_round_trip(self):
        e = Ellipse(u=123.4, v=210.0, a=55.0, b=21.0, theta=0.7)
        e2 = ellipse_from_conic(e.conic_matrix())
        assert e2.u == pytest.approx(e.u)
        assert e2.v == pytest.approx(e.v)
        assert e2.a == pytest.approx(e.a)
        assert e2.b == pytest.approx(e.b)
        assert e2.theta == pytest.approx(e.theta)

    def test_boundary_points_satisfy_conic(self):
        e = Ellipse(u=300.0, v=200.0, a=40.0, b=25.0, theta=1.1)
        C = e.conic_matrix()
        pts = e.boundary_points(128)
        hom = np.column_stack([pts, np.ones(len(pts))])
        residual = np.einsum("ni,ij,nj->n", hom, C, hom)
        scale = np.abs(C).max()
        assert np.max(np.abs(residual)) / scale < 1e-6

    def test_hyperbola_rejected(self):
        C = np.diag([1.0, -1.0, -1.0])
        with pytest.raises(DegenerateConic):
            ellipse_from_conic(C)


class TestProjectCircle:
    def test_sampled_circle_points_land_on_ellipse(self):
        # Independent check: project 3-D boundary points and verify they
        # satisfy the implicit equation of the predicted ellipse.
        rng = np.random.default_rng(5)
        for _ in range(25):
            tilt = rng.uniform(0.0, 1.0)
            n = tilted_normal(tilt, rng.uniform(0, 2 * math.pi))
            c = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4), rng.uniform(0.8, 4.0)])
            r = rng.uniform(0.05, 0.2)
            e = project_circle(K, c, n, r)
            u = np.cross(n, [0.0, 1.0, 0.0])
            u /= np.linalg.norm(u)
            v = np.cross(n, u)
            phi = np.linspace(0, 2 * math.pi, 60, endpoint=False)
            pts3 = c + r * (np.outer(np.cos(phi), u) + np.outer(np.sin(phi), v))
            uv = project(K, pts3)
            C = e.conic_matrix()
            hom = np.column_stack([uv, np.ones(len(uv))])
            residual = np.einsum("ni,ij,nj->n", hom, C, hom)
            assert np.max(np.abs(residual)) / np.abs(C).max() < 1e-6


class TestCirclePose:
    def test_fronto_parallel_on_axis(self):
        z, r = 2.0, 0.1
        a = K.fx * r / z
        e = Ellipse(u=K.cx, v=K.cy, a=a, b=a, theta=0.0)
        cand = circle_pose_from_ellipse(K, e, r)
        assert np.allclose(cand.position, [0.0, 0.0, z], atol=1e-9)
        assert np.allclose(cand.normal0, [0.0, 0.0, -1.0], atol=1e-9)
        assert np.allclose(cand.normal1, [0.0, 0.0, -1.0], atol=1e-9)
        assert cand.separation_angle < 1e-9

    def test_doubling_distance_halves_semi_axis(self):
        r = 0.1
        for z in (1.0, 2.0):
            e = project_circle(K, np.array([0.0, 0.0, z]), np.array([0.0, 0.0, -1.0]), r)
            assert e.a == pytest.approx(K.fx * r / z, rel=1e-12)

    def test_tilted_circle_recovers_true_normal_and_mirror(self):
        r, z = 0.1, 1.5
        n_true = rot_x(math.radians(25.0)) @ np.array([0.0, 0.0, -1.0])
        e = project_circle(K, np.array([0.0, 0.0, z]), n_true, r)
        cand = circle_pose_from_ellipse(K, e, r)
        errs = [math.degrees(angle_between(cand.normal(i), n_true)) for i in (0, 1)]
        assert min(errs) < 0.5
        assert max(errs) > 5.0  # the mirror solution is distinct

    def test_candidate_centers_reproject_exactly(self):
        r = 0.1
        rng = np.random.default_rng(21)
        for _ in range(40):
            tilt = rng.uniform(0.05, 1.0)
            n = tilted_normal(tilt, rng.uniform(0, 2 * math.pi))
            c = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3), rng.uniform(0.8, 4.0)])
            e = project_circle(K, c, n, r)
            cand = circle_pose_from_ellipse(K, e, r)
            for i in (0, 1):
                e2 = project_circle(K, cand.center(i), cand.normal(i), r)
                assert abs(e2.u - e.u) < 0.5
                assert abs(e2.v - e.v) < 0.5
                assert abs(e2.a - e.a) < 0.5
                assert abs(e2.b - e.b) < 0.5

    def test_reprojection_closure_sweep(self):
        # 1000 random poses, tilt <= 60 deg, z in [0.5, 5]: the candidate
        # pair contains the true normal within 0.5 deg and the true
        # position within 1% of z.
        rng = np.random.default_rng(42)
        r = 0.1
        for _ in range(1000):
            tilt = rng.uniform(0.0, math.radians(60.0))
            n = tilted_normal(tilt, rng.uniform(0, 2 * math.pi))
            z = rng.uniform(0.5, 5.0)
            c = np.array([rng.uniform(-0.2, 0.2) * z, rng.uniform(-0.15, 0.15) * z, z])
            e = project_circle(K, c, n, r)
            cand = circle_pose_from_ellipse(K, e, r)
            best_normal = min(angle_between(cand.normal(i), n) for i in (0, 1))
            best_pos = min(np.linalg.norm(cand.center(i) - c) for i in (0, 1))
            assert best_normal < math.radians(0.5)
            assert best_pos < 0.01 * z

    def test_ambiguity_mirror_structure(self):
        # The two normals are reflections across the plane spanned by the
        # optical ray to the circle center and the circle's tilt axis (the
        # image direction about which the circle is inclined).
        rng = np.random.default_rng(9)
        r = 0.1
        for _ in range(50):
            tilt = rng.uniform(0.1, 1.0)
            az = rng.uniform(0, 2 * math.pi)
            n = tilted_normal(tilt, az)
            c = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2), rng.uniform(1.0, 3.0)])
            e = project_circle(K, c, n, r)
            cand = circle_pose_from_ellipse(K, e, r)
            ray = cand.position / np.linalg.norm(cand.position)
            axis = np.cross(n, ray)
            if np.linalg.norm(axis) < 1e-6:
                continue
            axis /= np.linalg.norm(axis)
            w = np.cross(ray, axis)
            w /= np.linalg.norm(w)
            reflected = cand.normal0 - 2.0 * np.dot(cand.normal0, w) * w
            assert angle_between(reflected, cand.normal1) < math.radians(0.6)

    def test_separation_zero_iff_circular(self):
        e_circ = Ellipse(u=320, v=240, a=30.0, b=30.0, theta=0.0)
        assert circle_pose_from_ellipse(K, e_circ, 0.1).separation_angle < 1e-9
        e_ell = Ellipse(u=320, v=240, a=30.0, b=24.0, theta=0.3)
        assert circle_pose_from_ellipse(K, e_ell, 0.1).separation_angle > math.radians(5)

    def test_degenerate_radius_rejected(self):
        e = Ellipse(u=320, v=240, a=30.0, b=30.0, theta=0.0)
        with pytest.raises(ValueError):
            circle_pose_from_ellipse(K, e, -0.1)


class TestAttitude:
    def test_zero_attitude_is_identity(self):
        q = attitude_to_rotation(0.0, 0.0)
        assert np.allclose(quat_to_matrix(q), np.eye(3), atol=1e-12)

    def test_inverse_property(self):
        p = 0.37
        q1 = attitude_to_rotation(p, 0.0)
        q2 = attitude_to_rotation(-p, 0.0)
        assert np.allclose(quat_to_matrix(quat_multiply(q1, q2)), np.eye(3), atol=1e-9)

    def test_matches_hand_built_matrices(self):
        pitch, roll = 0.1, 0.2
        R = quat_to_matrix(attitude_to_rotation(pitch, roll))
        R_ref = rot_x(pitch) @ rot_y(roll)
        assert np.allclose(R, R_ref, atol=1e-12)
        gravity = np.array([0.0, 0.0, -9.81])
        assert np.allclose(R @ gravity, R_ref @ gravity, atol=1e-12)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            attitude_to_rotation(math.pi / 2, 0.0)


def test_wrap_angle():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
