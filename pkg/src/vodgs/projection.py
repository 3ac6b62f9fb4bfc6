"""EWA projection of 3D Gaussians to screen space and tile binning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vodgs import _kernels
from vodgs.core_math import (
    covariance_from_scale_rotation,
    quadratic_form,
    sh_evaluate,
    sigmoid,
    sym_to_mat,
)
from vodgs.model import Camera, GaussianCloud, view_direction

NEAR_PLANE = 0.2
GUARD_BAND = 1.3
RADIUS_SIGMA = 3.0
DILATION = 0.3
TILE_SIZE = 16


@dataclass
class Splat2D:
    mean: np.ndarray
    cov: np.ndarray  # (a, b, c) of the dilated 2x2 covariance
    conic: np.ndarray
    depth: float
    radius: float
    color: np.ndarray
    alpha_hat: float


@dataclass
class SplatBatch:
    """Per-frame projection of a whole cloud; culled rows have ``visible`` False."""

    means2d: np.ndarray
    cov2d: np.ndarray
    conics: np.ndarray
    depths: np.ndarray
    radii: np.ndarray
    colors: np.ndarray
    alphas: np.ndarray
    visible: np.ndarray
    clamped: np.ndarray
    sh_degree: int

    def __len__(self):
        return len(self.depths)

    def splat(self, i) -> Splat2D | None:
        if not self.visible[i]:
            return None
        return Splat2D(
            self.means2d[i].copy(), self.cov2d[i].copy(), self.conics[i].copy(), float(self.depths[i]),
            float(self.radii[i]), self.colors[i].copy(), float(self.alphas[i]),
        )


@dataclass
class TileGrid:
    """Per-tile splat lists.  ``entries[ranges[t,0]:ranges[t,1]]`` is tile ``t``, front to back."""

    tile_size: int
    tiles_x: int
    tiles_y: int
    ranges: np.ndarray
    entries: np.ndarray

    def tile(self, tx: int, ty: int) -> np.ndarray:
        lo, hi = self.ranges[ty * self.tiles_x + tx]
        return self.entries[lo:hi]

    @property
    def n_entries(self) -> int:
        return len(self.entries)


def _jacobian(t, cam: Camera):
    tx, ty, tz = t
    return np.array(
        [
            [cam.fx / tz, 0.0, -cam.fx * tx / tz**2],
            [0.0, cam.fy / tz, -cam.fy * ty / tz**2],
            [0.0, 0.0, 0.0],
        ]
    )


def in_guard_band(t, cam: Camera, guard: float = GUARD_BAND) -> bool:
    xz, yz = t[0] / t[2], t[1] / t[2]
    return (
        -guard * cam.cx / cam.fx <= xz <= guard * (cam.width - cam.cx) / cam.fx
        and -guard * cam.cy / cam.fy <= yz <= guard * (cam.height - cam.cy) / cam.fy
    )


def project_gaussian(cloud: GaussianCloud, index: int, cam: Camera, sh_degree: int = 3) -> Splat2D | None:
    """Project one Gaussian in float64; ``None`` when it is culled.

    Straight transcription of the EWA approximation with dense 3x3 algebra,
    kept separate from the batched kernel so each can check the other.
    """
    mu = np.asarray(cloud.means[index], dtype=np.float64)
    t = cam.R @ mu + cam.t
    if t[2] <= NEAR_PLANE or not in_guard_band(t, cam):
        return None
    sigma = sym_to_mat(
        covariance_from_scale_rotation(np.exp(np.asarray(cloud.log_scales[index], dtype=np.float64)),
                                       np.asarray(cloud.rotations[index], dtype=np.float64))
    )
    jw = _jacobian(t, cam) @ cam.R
    cov = (jw @ sigma @ jw.T)[:2, :2] + DILATION * np.eye(2)
    det = np.linalg.det(cov)
    if det <= 0:
        return None
    conic = np.linalg.inv(cov)
    radius = RADIUS_SIGMA * np.sqrt(np.linalg.eigvalsh(cov).max())
    mean = np.array([cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy])

    omega = view_direction(cloud, index, cam)
    color = sh_evaluate(np.asarray(cloud.sh[index], dtype=np.float64), -omega, sh_degree)
    alpha = sigmoid(float(cloud.gamma[index]) + quadratic_form(np.asarray(cloud.s_hat[index], np.float64), omega))
    return Splat2D(
        mean=mean,
        cov=np.array([cov[0, 0], cov[0, 1], cov[1, 1]]),
        conic=np.array([conic[0, 0], conic[0, 1], conic[1, 1]]),
        depth=float(t[2]),
        radius=float(radius),
        color=color,
        alpha_hat=float(alpha),
    )


def project(cloud: GaussianCloud, cam: Camera, sh_degree: int = 3) -> SplatBatch:
    """Project every Gaussian with the compiled kernel, in the cloud's dtype."""
    n = len(cloud)
    dt = cloud.dtype
    out = SplatBatch(
        means2d=np.zeros((n, 2), dt),
        cov2d=np.zeros((n, 3), dt),
        conics=np.zeros((n, 3), dt),
        depths=np.zeros(n, dt),
        radii=np.zeros(n, dt),
        colors=np.zeros((n, 3), dt),
        alphas=np.zeros(n, dt),
        visible=np.zeros(n, bool),
        clamped=np.zeros((n, 3), bool),
        sh_degree=sh_degree,
    )
    if n == 0:
        return out
    _kernels.preprocess_forward(
        cloud.means, cloud.log_scales, cloud.rotations, cloud.sh, cloud.gamma, cloud.s_hat,
        cam.R, cam.t, cam.center, float(cam.fx), float(cam.fy), float(cam.cx), float(cam.cy),
        int(cam.width), int(cam.height), int(sh_degree), NEAR_PLANE, GUARD_BAND, RADIUS_SIGMA, DILATION,
        out.means2d, out.cov2d, out.conics, out.depths, out.radii, out.colors, out.alphas,
        out.visible, out.clamped,
    )
    return out


def depth_order(splats: SplatBatch) -> np.ndarray:
    """Visible splat indices sorted by depth, ties broken by index."""
    idx = np.flatnonzero(splats.visible)
    return idx[np.argsort(splats.depths[idx], kind="stable")]


def bin_tiles(splats: SplatBatch, cam: Camera, tile_size: int = TILE_SIZE) -> TileGrid:
    """Assign each visible splat to every tile its 3-sigma bounding square touches."""
    order = depth_order(splats).astype(np.int64)
    ranges, entries = _kernels.bin_tiles(
        order, splats.means2d, splats.radii, int(cam.width), int(cam.height), int(tile_size)
    )
    return TileGrid(
        tile_size=tile_size,
        tiles_x=-(-cam.width // tile_size),
        tiles_y=-(-cam.height // tile_size),
        ranges=ranges,
        entries=entries,
    )
