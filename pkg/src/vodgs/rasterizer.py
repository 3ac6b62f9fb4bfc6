"""Front-to-back alpha blending of projected Gaussians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vodgs import _kernels
from vodgs.model import Camera, GaussianCloud
from vodgs.projection import (
    TILE_SIZE,
    SplatBatch,
    TileGrid,
    bin_tiles,
    project,
    project_gaussian,
)


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3)
    transmittance: np.ndarray  # (H, W) final T
    n_contrib: np.ndarray  # (H, W) splats actually blended
    last_entry: np.ndarray  # (H, W) one past the last blended tile entry
    splats: SplatBatch | None = None
    grid: TileGrid | None = None
    background: np.ndarray | None = None
    n_gaussians: int = 0


def _scalar_view(cloud: GaussianCloud) -> GaussianCloud:
    out = GaussianCloud(**cloud.params())
    out.s_hat = np.zeros_like(cloud.s_hat)
    return out


def render(
    cloud: GaussianCloud,
    cam: Camera,
    background=(0.0, 0.0, 0.0),
    sh_degree: int = 3,
    tile_size: int = TILE_SIZE,
    view_dependent: bool = True,
) -> RenderOutput:
    """Render ``cloud`` from ``cam`` with the tiled rasterizer.

    ``view_dependent=False`` ignores ``s_hat`` and blends with the scalar
    opacity ``sigmoid(gamma)``.
    """
    if not view_dependent:
        cloud = _scalar_view(cloud)
    dt = cloud.dtype if len(cloud) else np.dtype(np.float32)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    h, w = cam.height, cam.width
    splats = project(cloud, cam, sh_degree)
    grid = bin_tiles(splats, cam, tile_size)
    image = np.empty((h, w, 3), dt)
    t_final = np.empty((h, w), dt)
    n_contrib = np.empty((h, w), np.int32)
    last_entry = np.empty((h, w), np.int64)
    _kernels.raster_forward(
        grid.ranges, grid.entries, splats.means2d, splats.conics, splats.radii, splats.colors,
        splats.alphas, bg, int(w), int(h), int(tile_size), image, t_final, n_contrib, last_entry,
    )
    return RenderOutput(image, t_final, n_contrib, last_entry, splats, grid, bg, len(cloud))


def render_reference(
    cloud: GaussianCloud,
    cam: Camera,
    background=(0.0, 0.0, 0.0),
    sh_degree: int = 3,
    cutoff: bool = True,
    view_dependent: bool = True,
) -> RenderOutput:
    """Dense per-pixel blend in float64 without tiles.

    Projects each Gaussian with :func:`project_gaussian`, sorts globally by
    depth (index tie-break) and blends every splat at every pixel.  With
    ``cutoff`` the same 3-sigma bounding-square test as the tiled renderer
    is applied; without it no radius limit is used at all.  Intended for
    small scenes only.
    """
    if not view_dependent:
        cloud = _scalar_view(cloud)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    h, w = cam.height, cam.width
    splats = []
    for i in range(len(cloud)):
        s = project_gaussian(cloud, i, cam, sh_degree)
        if s is not None:
            splats.append((s.depth, i, s))
    splats.sort(key=lambda x: (x[0], x[1]))

    ys, xs = np.mgrid[0:h, 0:w]
    px = xs + 0.5
    py = ys + 0.5
    T = np.ones((h, w))
    color = np.zeros((h, w, 3))
    count = np.zeros((h, w), np.int32)
    alive = np.ones((h, w), bool)
    for _, _, s in splats:
        dx = px - s.mean[0]
        dy = py - s.mean[1]
        power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy
        a = np.minimum(_kernels.ALPHA_MAX, s.alpha_hat * np.exp(np.minimum(power, 0.0)))
        use = alive & (power <= 0.0) & (a >= _kernels.ALPHA_MIN)
        if cutoff:
            use &= (np.abs(dx) <= s.radius) & (np.abs(dy) <= s.radius)
        test_t = T * (1.0 - a)
        stop = use & (test_t < _kernels.T_MIN)
        alive &= ~stop
        use &= ~stop
        color += np.where(use, a * T, 0.0)[..., None] * s.color
        T = np.where(use, test_t, T)
        count += use
    image = color + T[..., None] * bg
    return RenderOutput(image, T, count, np.zeros((h, w), np.int64), background=bg, n_gaussians=len(cloud))
