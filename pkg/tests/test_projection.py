import numpy as np
import pytest

from vodgs.core_math import sh_evaluate
from vodgs.model import Camera, GaussianCloud
from vodgs.projection import (
    DILATION,
    bin_tiles,
    depth_order,
    project,
    project_gaussian,
)


def on_axis_cloud(depth, s, n=1):
    c = GaussianCloud.zeros(n, np.float64)
    c.means[:, 2] = depth
    c.log_scales[:] = np.log(s)
    return c


CAM = Camera(64, 48, 50.0, 50.0, 32.0, 24.0)


def test_on_axis_projection():
    d, s = 4.0, 0.2
    sp = project_gaussian(on_axis_cloud(d, s), 0, CAM)
    assert np.array_equal(sp.mean, [32.0, 24.0])
    expect = (50 * s / d) ** 2 + DILATION
    assert np.allclose(sp.cov, [expect, 0, expect])
    assert sp.radius == pytest.approx(3 * np.sqrt(expect))
    assert sp.depth == d
    conic = np.array([[sp.conic[0], sp.conic[1]], [sp.conic[1], sp.conic[2]]])
    cov = np.array([[sp.cov[0], sp.cov[1]], [sp.cov[1], sp.cov[2]]])
    assert np.allclose(conic @ cov, np.eye(2), atol=1e-4)


def test_culling():
    assert project_gaussian(on_axis_cloud(-1.0, 0.1), 0, CAM) is None
    assert project_gaussian(on_axis_cloud(0.2, 0.1), 0, CAM) is None
    assert project_gaussian(on_axis_cloud(0.21, 0.1), 0, CAM) is not None
    c = on_axis_cloud(2.0, 0.1)
    c.means[0, 0] = 2.0 * 1.3 * 32 / 50 + 0.01  # just outside the guard band
    assert project_gaussian(c, 0, CAM) is None
    c.means[0, 0] = 2.0 * 1.3 * 32 / 50 - 0.01
    assert project_gaussian(c, 0, CAM) is not None


def test_color_and_alpha_use_view_direction():
    c = on_axis_cloud(3.0, 0.1)
    c.sh[0, 2] = [1.0, 0.0, -1.0]  # degree-1 z band
    c.s_hat[0] = [0, 0, 0, 0, 0, 2.0]
    sp = project_gaussian(c, 0, CAM)
    assert np.allclose(sp.color, sh_evaluate(c.sh[0], [0, 0, 1.0]))
    assert sp.alpha_hat == pytest.approx(1 / (1 + np.exp(-2.0)))


def test_kernel_matches_dense_projection(rng):
    n = 200
    c = GaussianCloud.zeros(n, np.float64)
    c.means[:] = rng.uniform(-2, 2, (n, 3)) + [0, 0, 3]
    c.log_scales[:] = np.log(rng.uniform(0.02, 0.5, (n, 3)))
    c.rotations[:] = rng.normal(size=(n, 4))
    c.sh[:] = rng.normal(0, 0.5, c.sh.shape)
    c.gamma[:] = rng.normal(size=n)
    c.s_hat[:] = rng.normal(size=(n, 6))
    batch = project(c, CAM)
    for i in range(n):
        ref = project_gaussian(c, i, CAM)
        got = batch.splat(i)
        assert (ref is None) == (got is None)
        if ref is None:
            continue
        for f in ("mean", "cov", "conic", "color"):
            assert np.allclose(getattr(got, f), getattr(ref, f), rtol=1e-9, atol=1e-9), f
        assert got.depth == pytest.approx(ref.depth)
        assert got.radius == pytest.approx(ref.radius, rel=1e-9)
        assert got.alpha_hat == pytest.approx(ref.alpha_hat, rel=1e-12)
        assert np.linalg.eigvalsh([[got.cov[0], got.cov[1]], [got.cov[1], got.cov[2]]]).min() >= DILATION - 1e-9


def _batch(means2d, radii, depths):
    n = len(radii)
    c = GaussianCloud.zeros(n, np.float64)
    b = project(c, CAM)
    b.means2d[:] = means2d
    b.radii[:] = radii
    b.depths[:] = depths
    b.visible[:] = True
    return b


def test_binning_examples():
    g = bin_tiles(_batch([[8.0, 8.0]], [1.0], [1.0]), CAM)
    assert g.n_entries == 1 and list(g.tile(0, 0)) == [0]
    g = bin_tiles(_batch([[16.0, 8.0]], [2.0], [1.0]), CAM)
    assert list(g.tile(0, 0)) == [0] and list(g.tile(1, 0)) == [0] and g.n_entries == 2
    g = bin_tiles(_batch([[5.0, 5.0], [6.0, 6.0]], [1.0, 1.0], [2.0, 1.0]), CAM)
    assert list(g.tile(0, 0)) == [1, 0]


def test_depth_ties_broken_by_index():
    b = _batch([[5.0, 5.0]] * 3, [1.0] * 3, [1.0, 0.5, 1.0])
    assert list(depth_order(b)) == [1, 0, 2]


def test_binning_covers_every_pixel_in_radius(rng):
    n = 60
    b = _batch(rng.uniform(-10, 74, (n, 2)), rng.uniform(0, 20, n), rng.uniform(1, 5, n))
    b.visible[rng.random(n) < 0.1] = False
    g = bin_tiles(b, CAM)
    ys, xs = np.mgrid[0:CAM.height, 0:CAM.width]
    for i in np.flatnonzero(b.visible):
        dx = xs + 0.5 - b.means2d[i, 0]
        dy = ys + 0.5 - b.means2d[i, 1]
        inside = (np.abs(dx) <= b.radii[i]) & (np.abs(dy) <= b.radii[i])
        for y, x in zip(*np.nonzero(inside)):
            assert i in g.tile(x // 16, y // 16)
    for t in range(g.tiles_x * g.tiles_y):
        lo, hi = g.ranges[t]
        d = b.depths[g.entries[lo:hi]]
        assert np.all(np.diff(d) >= 0)
    assert not np.isin(np.flatnonzero(~b.visible), g.entries).any()
