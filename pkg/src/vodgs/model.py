"""Scene parameters and the view-dependent opacity they define."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from vodgs.core_math import (
    MAX_SH_DEGREE,
    logit,
    matrix_to_quaternion,
    quadratic_form,
    rgb_to_sh0,
    sh_coeff_count,
    sigmoid,
)

PARAM_NAMES = ("means", "log_scales", "rotations", "sh", "gamma", "s_hat")

# fallback view vector when a camera sits exactly on a Gaussian center
FALLBACK_DIRECTION = np.array([0.0, 0.0, 1.0])


@dataclass
class GaussianCloud:
    """Structure-of-arrays store of ``N`` Gaussians.

    Attributes
    ----------
    means : (N, 3) world-space centers.
    log_scales : (N, 3) per-axis log standard deviations.
    rotations : (N, 4) quaternions ``(w, x, y, z)``, normalized on use.
    sh : (N, 16, 3) SH coefficients, band-major, RGB last.
    gamma : (N,) opacity logits.
    s_hat : (N, 6) view-opacity matrices, packed ``(xx, xy, xz, yy, yz, zz)``.
    """

    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    sh: np.ndarray
    gamma: np.ndarray
    s_hat: np.ndarray

    def __post_init__(self):
        n = len(self.means)
        expected = {
            "means": (n, 3),
            "log_scales": (n, 3),
            "rotations": (n, 4),
            "sh": (n, sh_coeff_count(MAX_SH_DEGREE), 3),
            "gamma": (n,),
            "s_hat": (n, 6),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    def __len__(self) -> int:
        return len(self.means)

    @property
    def dtype(self):
        return self.means.dtype

    @classmethod
    def empty(cls, dtype=np.float32) -> "GaussianCloud":
        return cls.zeros(0, dtype)

    @classmethod
    def zeros(cls, n: int, dtype=np.float32) -> "GaussianCloud":
        rot = np.zeros((n, 4), dtype)
        rot[:, 0] = 1
        return cls(
            means=np.zeros((n, 3), dtype),
            log_scales=np.zeros((n, 3), dtype),
            rotations=rot,
            sh=np.zeros((n, sh_coeff_count(MAX_SH_DEGREE), 3), dtype),
            gamma=np.zeros(n, dtype),
            s_hat=np.zeros((n, 6), dtype),
        )

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(**{k: v.copy() for k, v in self.params().items()})

    def astype(self, dtype) -> "GaussianCloud":
        return GaussianCloud(**{k: np.ascontiguousarray(v, dtype=dtype) for k, v in self.params().items()})

    def select(self, index) -> "GaussianCloud":
        return GaussianCloud(**{k: np.ascontiguousarray(v[index]) for k, v in self.params().items()})

    def concat(self, other: "GaussianCloud") -> "GaussianCloud":
        return GaussianCloud(
            **{k: np.concatenate([v, getattr(other, k).astype(v.dtype)]) for k, v in self.params().items()}
        )

    def equals(self, other: "GaussianCloud") -> bool:
        """Bitwise equality of every parameter array."""
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.params().values(), other.params().values())
        )

    def is_finite(self) -> np.ndarray:
        """Per-Gaussian mask of rows with no NaN/Inf in any parameter."""
        ok = np.ones(len(self), dtype=bool)
        for v in self.params().values():
            ok &= np.isfinite(v.reshape(len(self), -1)).all(axis=1)
        return ok


@dataclass
class Camera:
    """Pinhole camera; ``R @ x + t`` maps world points into camera space.

    Camera space follows the OpenCV convention: +z forward, +x right, +y down.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    id: int = 0
    split: str = "train"

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not np.allclose(self.R @ self.R.T, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation is not orthonormal")

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def quaternion(self) -> np.ndarray:
        return matrix_to_quaternion(self.R)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), width=128, height=128, fov_deg=50.0, **kw) -> "Camera":
        """Camera at ``eye`` looking at ``target`` with a symmetric field of view."""
        eye = np.asarray(eye, dtype=float)
        forward = np.asarray(target, dtype=float) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=float))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(width, height, f, f, width / 2, height / 2, R, -R @ eye, **kw)

    def with_(self, **changes) -> "Camera":
        return replace(self, **changes)


def view_direction(cloud: GaussianCloud, index, cam: Camera) -> np.ndarray:
    """Unit vector from Gaussian center(s) toward the camera center.

    Coincident centers get ``(0, 0, 1)``.
    """
    mu = np.asarray(cloud.means[index], dtype=np.float64)
    d = cam.center - mu
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, d / safe, FALLBACK_DIRECTION)


def view_dependent_opacity(cloud: GaussianCloud, index, cam: Camera):
    """``sigmoid(gamma + w^T S_hat w)`` for the Gaussian(s) at ``index``.

    ``index=None`` evaluates every Gaussian.
    """
    if index is None:
        index = slice(None)
    w = view_direction(cloud, index, cam)
    g = np.asarray(cloud.gamma[index], dtype=np.float64)
    s = np.asarray(cloud.s_hat[index], dtype=np.float64)
    return sigmoid(g + quadratic_form(s, w))


def opacity_table(cloud: GaussianCloud, cams) -> np.ndarray:
    """``(N, V)`` matrix of view-dependent opacities over a camera set."""
    if len(cams) == 0:
        raise ValueError("camera set is empty")
    return np.stack([view_dependent_opacity(cloud, None, c) for c in cams], axis=1)


def max_opacity_over_views(cloud: GaussianCloud, index, cams):
    """Largest view-dependent opacity of Gaussian(s) over a set of cameras."""
    if len(cams) == 0:
        raise ValueError("camera set is empty")
    if index is None:
        index = slice(None)
    return np.max(np.stack([view_dependent_opacity(cloud, index, c) for c in cams]), axis=0)


@dataclass
class InitConfig:
    initial_opacity: float = 0.1
    min_scale: float = 1e-7
    dtype: type = np.float32


def init_cloud(points, colors, config: InitConfig | None = None) -> GaussianCloud:
    """Seed a cloud from a colored point set.

    Scales come from the mean distance to the three nearest neighbours,
    rotations are identity, color goes into the degree-0 SH band, opacity
    starts at ``initial_opacity`` and ``S_hat`` at zero.
    """
    config = config or InitConfig()
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n == 0:
        raise ValueError("init_cloud needs at least one point")
    if len(colors) != n:
        raise ValueError("points and colors differ in length")

    if n == 1:
        dist = np.ones(1)
    else:
        k = min(4, n)
        d, _ = cKDTree(points).query(points, k=k)
        dist = d[:, 1:].mean(axis=1)
    dist = np.maximum(dist, config.min_scale)

    cloud = GaussianCloud.zeros(n, np.float64)
    cloud.means[:] = points
    cloud.log_scales[:] = np.log(dist)[:, None]
    cloud.sh[:, 0, :] = rgb_to_sh0(colors)
    cloud.gamma[:] = logit(config.initial_opacity)
    return cloud.astype(config.dtype)


__all__ = [
    "PARAM_NAMES",
    "Camera",
    "GaussianCloud",
    "InitConfig",
    "init_cloud",
    "max_opacity_over_views",
    "opacity_table",
    "view_dependent_opacity",
    "view_direction",
]
