"""Camera model, SE(3) poses and rigid flow."""

from __future__ import annotations

import numpy as np
import pytest

from depthsup.core.errors import BehindCameraError, GeometryError, InvalidDepthError
from depthsup.core.geometry import (
    CameraIntrinsics,
    DepthMap,
    FlowField,
    PoseSE3,
    backproject,
    backproject_depth,
    project,
    rigid_flow,
    rigid_flow_jacobians,
)

from conftest import SMALL_SHAPE


def _K() -> CameraIntrinsics:
    return CameraIntrinsics(fx=100.0, fy=110.0, cx=31.5, cy=23.5, width=64, height=48)


def _depth(value: float = 2.0) -> DepthMap:
    return DepthMap(np.full(SMALL_SHAPE, value))


# ── Camera model ─────────────────────────────────────────────────────────

class TestProjection:

    @pytest.mark.parametrize("p", [(0.0, 0.0), (31.5, 23.5), (63.0, 47.0), (10.25, 40.75)])
    @pytest.mark.parametrize("d", [0.1, 1.0, 7.3])
    def test_project_inverts_backproject(self, p, d):
        K = _K()
        q = project(backproject(p, d, K), K)
        np.testing.assert_allclose(q, p, atol=1e-9)

    def test_random_round_trips(self):
        K = _K()
        rng = np.random.default_rng(2)
        for _ in range(1000):
            p = (rng.uniform(0.0, 63.0), rng.uniform(0.0, 47.0))
            d = float(np.exp(rng.uniform(np.log(0.05), np.log(80.0))))
            X = backproject(p, d, K)
            assert X[2] == pytest.approx(d)
            np.testing.assert_allclose(project(X, K), p, atol=1e-9)

    def test_backproject_hand_computed(self):
        K = _K()
        X = backproject((41.5, 13.5), 3.0, K)
        np.testing.assert_allclose(X, [3.0 * 10.0 / 100.0, 3.0 * -10.0 / 110.0, 3.0])

    @pytest.mark.parametrize("d", [0.0, -1.0])
    def test_backproject_rejects_non_positive_depth(self, d):
        with pytest.raises(InvalidDepthError):
            backproject((1.0, 1.0), d, _K())

    def test_backproject_rejects_pixel_outside_image(self):
        with pytest.raises(GeometryError):
            backproject((64.0, 1.0), 1.0, _K())

    @pytest.mark.parametrize("z", [0.0, -2.0])
    def test_project_rejects_points_behind_camera(self, z):
        with pytest.raises(BehindCameraError):
            project([0.1, 0.2, z], _K())

    def test_intrinsics_validation(self):
        with pytest.raises(GeometryError):
            CameraIntrinsics(0.0, 1.0, 1.0, 1.0, 4, 4)
        with pytest.raises(GeometryError):
            CameraIntrinsics(1.0, 1.0, 5.0, 1.0, 4, 4)

    def test_backproject_depth_matches_pointwise(self):
        K = _K()
        depth = np.linspace(1.0, 3.0, 48 * 64).reshape(SMALL_SHAPE)
        grid = backproject_depth(depth, K)
        np.testing.assert_allclose(grid[7, 11], backproject((11.0, 7.0), depth[7, 11], K))


# ── Poses ────────────────────────────────────────────────────────────────

class TestPoseSE3:

    def test_compose_with_inverse_is_identity(self):
        T = PoseSE3.from_axis_angle([0.1, -0.2, 0.05], [0.3, 0.1, -0.4])
        I = T.compose(T.inverse())
        np.testing.assert_allclose(I.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(I.translation, np.zeros(3), atol=1e-12)

    def test_apply_matches_matrix(self):
        T = PoseSE3.from_axis_angle([0.0, 0.3, 0.0], [1.0, 2.0, 3.0])
        X = np.array([0.5, -0.25, 2.0])
        np.testing.assert_allclose(T.apply(X), (T.matrix @ np.append(X, 1.0))[:3])

    def test_chart_inverts_from_chart(self):
        chart = np.array([0.02, -0.01, 0.03, 0.1, 0.2, -0.3])
        np.testing.assert_allclose(PoseSE3.from_chart(chart).chart, chart, atol=1e-12)

    def test_zero_perturbation_is_noop(self):
        T = PoseSE3.from_axis_angle([0.1, 0.0, 0.0], [0.0, 0.5, 0.0])
        P = T.perturbed(np.zeros(6))
        np.testing.assert_allclose(P.matrix, T.matrix, atol=1e-12)

    def test_perturbed_is_left_composition(self):
        T = PoseSE3.from_axis_angle([0.1, 0.2, 0.0], [0.0, 0.5, 1.0])
        xi = np.array([0.01, -0.02, 0.03, 0.1, 0.0, -0.1])
        expected = PoseSE3.from_axis_angle(xi[:3], xi[3:]).compose(T)
        np.testing.assert_allclose(T.perturbed(xi).matrix, expected.matrix, atol=1e-12)

    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(GeometryError):
            PoseSE3(np.diag([1.0, 1.0, 1.1]), np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(GeometryError):
            PoseSE3(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_dict_form(self):
        T = PoseSE3.from_axis_angle([0.0, 0.0, 0.2], [1.0, 0.0, 0.0])
        data = T.to_dict()
        assert set(data) == {"axis_angle", "t"}
        np.testing.assert_allclose(PoseSE3.from_dict(data).matrix, T.matrix, atol=1e-12)


class TestDepthMap:

    def test_default_validity_is_positive_values(self):
        D = DepthMap(np.array([[1.0, 0.0], [-1.0, 2.0]]))
        np.testing.assert_array_equal(D.valid, [[True, False], [False, True]])

    def test_rejects_non_positive_valid_pixels(self):
        with pytest.raises(InvalidDepthError):
            DepthMap(np.array([[1.0, 0.0]]), np.array([[True, True]]))

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidDepthError):
            DepthMap(np.array([[1.0, np.nan]]))


# ── Rigid flow ───────────────────────────────────────────────────────────

class TestRigidFlow:

    def test_identity_pose_gives_zero_flow(self):
        flow = rigid_flow(_depth(), PoseSE3.identity(), _K())
        assert np.all(flow.valid)
        assert np.all(flow.u == 0.0) and np.all(flow.v == 0.0)

    def test_pure_translation_on_constant_depth(self):
        K = _K()
        flow = rigid_flow(_depth(2.0), PoseSE3(np.eye(3), [0.1, -0.05, 0.0]), K)
        np.testing.assert_allclose(flow.u, K.fx * 0.1 / 2.0, atol=1e-12)
        np.testing.assert_allclose(flow.v, K.fy * -0.05 / 2.0, atol=1e-12)

    def test_points_moved_behind_camera_are_invalid(self):
        flow = rigid_flow(_depth(2.0), PoseSE3(np.eye(3), [0.0, 0.0, -3.0]), _K())
        assert not np.any(flow.valid)
        assert np.all(flow.u == 0.0)

    def test_invalid_depth_pixels_are_invalid(self):
        values = np.full(SMALL_SHAPE, 2.0)
        values[3, 4] = 0.0
        flow = rigid_flow(DepthMap(values), PoseSE3(np.eye(3), [0.1, 0.0, 0.0]), _K())
        assert not flow.valid[3, 4]
        assert flow.valid.sum() == values.size - 1

    def test_shape_mismatch_raises(self):
        with pytest.raises(GeometryError):
            rigid_flow(DepthMap(np.ones((4, 4))), PoseSE3.identity(), _K())

    def test_log_depth_jacobian_matches_finite_differences(self):
        K = _K()
        rng = np.random.default_rng(3)
        log_depth = np.log(rng.uniform(1.0, 4.0, SMALL_SHAPE))
        T = PoseSE3.from_axis_angle([0.01, -0.02, 0.015], [0.2, -0.1, 0.05])
        jac = rigid_flow_jacobians(DepthMap.from_log_depth(log_depth), T, K)
        h = 1e-6
        upper = rigid_flow(DepthMap.from_log_depth(log_depth + h), T, K)
        lower = rigid_flow(DepthMap.from_log_depth(log_depth - h), T, K)
        np.testing.assert_allclose(jac.d_log_depth[..., 0], (upper.u - lower.u) / (2 * h), atol=1e-5)
        np.testing.assert_allclose(jac.d_log_depth[..., 1], (upper.v - lower.v) / (2 * h), atol=1e-5)

    @pytest.mark.parametrize("k", range(6))
    def test_pose_jacobian_matches_finite_differences(self, k):
        K = _K()
        D = DepthMap(np.random.default_rng(4).uniform(1.0, 4.0, SMALL_SHAPE))
        T = PoseSE3.from_axis_angle([0.01, -0.02, 0.015], [0.2, -0.1, 0.05])
        jac = rigid_flow_jacobians(D, T, K)
        h = 1e-6
        xi = np.zeros(6)
        xi[k] = h
        upper = rigid_flow(D, T.perturbed(xi), K)
        lower = rigid_flow(D, T.perturbed(-xi), K)
        np.testing.assert_allclose(jac.d_pose[..., 0, k], (upper.u - lower.u) / (2 * h), atol=1e-4)
        np.testing.assert_allclose(jac.d_pose[..., 1, k], (upper.v - lower.v) / (2 * h), atol=1e-4)

    def test_jacobian_flow_equals_rigid_flow(self):
        K = _K()
        D = _depth(3.0)
        T = PoseSE3.from_axis_angle([0.0, 0.05, 0.0], [0.1, 0.0, 0.2])
        expected = rigid_flow(D, T, K)
        jac = rigid_flow_jacobians(D, T, K)
        np.testing.assert_array_equal(jac.flow.u, expected.u)
        np.testing.assert_array_equal(jac.flow.v, expected.v)


class TestFlowField:

    def test_masked_keeps_values_and_intersects_validity(self):
        flow = FlowField.constant(2, 2, 1.0, -1.0)
        masked = flow.masked(np.array([[True, False], [True, True]]))
        assert masked.valid.sum() == 3
        np.testing.assert_array_equal(masked.u, flow.u)

    def test_rejects_non_finite(self):
        with pytest.raises(GeometryError):
            FlowField(np.array([[np.inf]]), np.array([[0.0]]))
