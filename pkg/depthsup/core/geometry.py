#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : pinhole camera, rigid pose, backprojection / projection and rigid flow

Pixel convention: integer coordinates address pixel centers, so a W x H image
spans x in [-0.5, W - 0.5) and y in [-0.5, H - 0.5).
"""

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial.transform import Rotation

from depthsup.core.errors import (
    BehindCameraError,
    ConfigError,
    GeometryError,
    InvalidDepthError,
)

ORTHONORMAL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics K plus the image size they belong to."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ],
            dtype=np.float64,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def contains(self, x: float, y: float) -> bool:
        return -0.5 <= x < self.width - 0.5 and -0.5 <= y < self.height - 0.5

    def to_dict(self) -> dict[str, Any]:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(
        cls, data: dict[str, Any], width: int | None = None, height: int | None = None
    ) -> "CameraIntrinsics":
        """Build from {"fx","fy","cx","cy"} plus size, either in the dict or given explicitly."""
        try:
            return cls(
                fx=float(data["fx"]),
                fy=float(data["fy"]),
                cx=float(data["cx"]),
                cy=float(data["cy"]),
                width=int(data["width"] if width is None else width),
                height=int(data["height"] if height is None else height),
            )
        except KeyError as e:
            raise ConfigError(f"intrinsics missing field {e}") from e


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform X' = R X + t, mapping target-camera points into the source camera."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rotation.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {rotation.shape}")
        if not np.all(np.isfinite(rotation)) or not np.all(np.isfinite(translation)):
            raise GeometryError("pose contains non-finite values")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > ORTHONORMAL_TOLERANCE:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise GeometryError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis_angle, translation) -> "PoseSE3":
        rotation = Rotation.from_rotvec(np.asarray(axis_angle, dtype=np.float64)).as_matrix()
        return cls(rotation, np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_chart(cls, chart) -> "PoseSE3":
        """Inverse of ``chart``: 6-vector (axis-angle, translation)."""
        chart = np.asarray(chart, dtype=np.float64).reshape(6)
        return cls.from_axis_angle(chart[:3], chart[3:])

    @property
    def axis_angle(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    @property
    def chart(self) -> np.ndarray:
        return np.concatenate([self.axis_angle, self.translation])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self ∘ other: apply ``other`` first."""
        return PoseSE3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "PoseSE3":
        return PoseSE3(self.rotation.T, -self.rotation.T @ self.translation)

    def perturbed(self, xi) -> "PoseSE3":
        """Left perturbation (Exp(omega), v) ∘ self with xi = (omega, v)."""
        xi = np.asarray(xi, dtype=np.float64).reshape(6)
        delta = Rotation.from_rotvec(xi[:3]).as_matrix()
        rotation = Rotation.from_matrix(delta @ self.rotation).as_matrix()
        return PoseSE3(rotation, delta @ self.translation + xi[3:])

    def with_translation(self, translation) -> "PoseSE3":
        return PoseSE3(self.rotation, np.asarray(translation, dtype=np.float64))

    def to_dict(self) -> dict[str, Any]:
        return {"axis_angle": self.axis_angle.tolist(), "t": self.translation.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PoseSE3":
        try:
            return cls.from_axis_angle(data["axis_angle"], data["t"])
        except KeyError as e:
            raise ConfigError(f"pose missing field {e}") from e

    def __repr__(self) -> str:
        return f"PoseSE3(axis_angle={self.axis_angle.tolist()}, t={self.translation.tolist()})"


@dataclass(eq=False)
class DepthMap:
    """Per-pixel depth in meters with a validity mask."""

    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidDepthError(f"depth map must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidDepthError("depth map contains non-finite values")
        if self.valid is None:
            self.valid = self.values > 0
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.values.shape:
                raise InvalidDepthError("depth mask shape does not match depth values")
            if np.any(self.values[self.valid] <= 0):
                raise InvalidDepthError("depth must be strictly positive on valid pixels")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def from_log_depth(cls, log_depth: np.ndarray) -> "DepthMap":
        return cls(np.exp(log_depth))


@dataclass(eq=False)
class FlowField:
    """Per-pixel displacement (u, v) in pixels, with a validity mask."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise GeometryError(f"flow components must be equal 2-D grids, got {self.u.shape}, {self.v.shape}")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise GeometryError("flow contains non-finite values")
        if self.valid is None:
            self.valid = np.ones(self.u.shape, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def constant(cls, height: int, width: int, du: float, dv: float) -> "FlowField":
        return cls(np.full((height, width), float(du)), np.full((height, width), float(dv)))

    @classmethod
    def from_stacked(cls, data: np.ndarray, valid: np.ndarray | None = None) -> "FlowField":
        return cls(data[..., 0], data[..., 1], valid)

    def stacked(self) -> np.ndarray:
        return np.stack([self.u, self.v], axis=-1)

    def negated(self) -> "FlowField":
        return FlowField(-self.u, -self.v, self.valid.copy())

    def masked(self, mask: np.ndarray) -> "FlowField":
        return FlowField(self.u, self.v, self.valid & np.asarray(mask, dtype=bool))


@dataclass(eq=False)
class RigidFlowJacobians:
    """Rigid flow plus its derivatives w.r.t. log-depth and the left pose chart."""

    flow: FlowField
    d_log_depth: np.ndarray  # (H, W, 2)
    d_pose: np.ndarray  # (H, W, 2, 6)


def backproject(p, d: float, K: CameraIntrinsics) -> np.ndarray:
    """X = d · K⁻¹ · (x, y, 1)."""
    x, y = float(p[0]), float(p[1])
    if not d > 0:
        raise InvalidDepthError(f"depth must be positive, got {d}")
    if not K.contains(x, y):
        raise GeometryError(f"pixel ({x}, {y}) outside {K.width}x{K.height} image")
    return d * np.array([(x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0])


def project(X, K: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection with homogeneous normalization; may fall outside the image."""
    X = np.asarray(X, dtype=np.float64)
    if not X[2] > 0:
        raise BehindCameraError(f"point z={X[2]} is not in front of the camera")
    return np.array([K.fx * X[0] / X[2] + K.cx, K.fy * X[1] / X[2] + K.cy])


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates (xs, ys), each H x W."""
    ys, xs = np.meshgrid(
        np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij"
    )
    return xs, ys


def pixel_rays(K: CameraIntrinsics) -> np.ndarray:
    """K⁻¹ (x, y, 1) for every pixel, shape (H, W, 3), unit z."""
    xs, ys = pixel_grid(K.height, K.width)
    return np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)], axis=-1)


def backproject_depth(depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized backprojection of a whole depth grid, shape (H, W, 3)."""
    return pixel_rays(K) * np.asarray(depth, dtype=np.float64)[..., None]


def _check_dimensions(D: DepthMap, K: CameraIntrinsics) -> None:
    if D.shape != K.shape:
        raise GeometryError(f"depth map {D.shape} does not match intrinsics {K.shape}")


def _transform_grid(D: DepthMap, T: PoseSE3, K: CameraIntrinsics):
    points = backproject_depth(np.where(D.valid, D.values, 1.0), K)
    transformed = T.apply(points)
    valid = D.valid & (transformed[..., 2] > 0)
    z = np.where(valid, transformed[..., 2], 1.0)
    return points, transformed, z, valid


def rigid_flow(D: DepthMap, T: PoseSE3, K: CameraIntrinsics) -> FlowField:
    """f(p) = project(T · backproject(p, D(p))) − p; invalid where depth is invalid or z' <= 0."""
    _check_dimensions(D, K)
    _, transformed, z, valid = _transform_grid(D, T, K)
    xs, ys = pixel_grid(K.height, K.width)
    u = np.where(valid, K.fx * transformed[..., 0] / z + K.cx - xs, 0.0)
    v = np.where(valid, K.fy * transformed[..., 1] / z + K.cy - ys, 0.0)
    return FlowField(u, v, valid)


def rigid_flow_jacobians(D: DepthMap, T: PoseSE3, K: CameraIntrinsics) -> RigidFlowJacobians:
    """Rigid flow with ∂f/∂log D and ∂f/∂ξ for the left perturbation (Exp(ω), v) ∘ T."""
    _check_dimensions(D, K)
    points, transformed, z, valid = _transform_grid(D, T, K)
    xs, ys = pixel_grid(K.height, K.width)
    yx, yy = transformed[..., 0], transformed[..., 1]

    u = np.where(valid, K.fx * yx / z + K.cx - xs, 0.0)
    v = np.where(valid, K.fy * yy / z + K.cy - ys, 0.0)

    # d(pixel)/dY, shape (H, W, 2, 3)
    j_proj = np.zeros(points.shape[:2] + (2, 3))
    j_proj[..., 0, 0] = K.fx / z
    j_proj[..., 0, 2] = -K.fx * yx / z**2
    j_proj[..., 1, 1] = K.fy / z
    j_proj[..., 1, 2] = -K.fy * yy / z**2

    # dY/dlogD = R X
    d_y_d_log = points @ T.rotation.T
    d_log_depth = np.einsum("hwij,hwj->hwi", j_proj, d_y_d_log)

    # dY/domega = -[Y]x, dY/dv = I
    yz = transformed[..., 2]
    d_y_d_xi = np.zeros(points.shape[:2] + (3, 6))
    d_y_d_xi[..., 0, 1] = yz
    d_y_d_xi[..., 0, 2] = -yy
    d_y_d_xi[..., 1, 0] = -yz
    d_y_d_xi[..., 1, 2] = yx
    d_y_d_xi[..., 2, 0] = yy
    d_y_d_xi[..., 2, 1] = -yx
    d_y_d_xi[..., 0, 3] = 1.0
    d_y_d_xi[..., 1, 4] = 1.0
    d_y_d_xi[..., 2, 5] = 1.0
    d_pose = np.einsum("hwij,hwjk->hwik", j_proj, d_y_d_xi)

    invalid = ~valid
    d_log_depth[invalid] = 0.0
    d_pose[invalid] = 0.0
    return RigidFlowJacobians(FlowField(u, v, valid), d_log_depth, d_pose)
