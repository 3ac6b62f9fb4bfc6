import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from helpers import front_camera, random_cloud
from vodgs.core_math import logit
from vodgs.model import Camera, GaussianCloud
from vodgs.rasterizer import render, render_reference

BG = (0.2, 0.3, 0.4)


def stacked(alphas, colors, cx=16.5):
    """Gaussians centered on the optical axis; pixel (16, 16) sits exactly on their means."""
    n = len(alphas)
    c = GaussianCloud.zeros(n, np.float64)
    c.means[:, 2] = 2.0 + np.arange(n)
    c.log_scales[:] = np.log(0.3)
    c.gamma[:] = logit(np.asarray(alphas, float))
    c.sh[:, 0] = (np.asarray(colors, float) - 0.5) / 0.28209479177387814
    return c, Camera(33, 33, 40.0, 40.0, cx, cx)


def test_empty_cloud_is_background():
    out = render(GaussianCloud.empty(), front_camera(32), BG)
    assert np.allclose(out.image, BG) and np.all(out.transmittance == 1)
    assert np.all(out.n_contrib == 0)
    ref = render_reference(GaussianCloud.empty(), front_camera(32), BG)
    assert np.allclose(ref.image, BG)


def test_alpha_clamp():
    c, cam = stacked([0.999999], [[0.3, 0.6, 0.9]])
    out = render(c, cam, BG)
    assert np.allclose(out.image[16, 16], 0.99 * np.array([0.3, 0.6, 0.9]) + 0.01 * np.array(BG))
    assert out.transmittance[16, 16] == pytest.approx(0.01)


def test_two_splat_blend():
    c, cam = stacked([0.5, 0.5], [[1, 0, 0], [0, 1, 0]])
    out = render(c, cam, (0, 0, 0))
    assert np.allclose(out.image[16, 16], [0.5, 0.25, 0.0])
    assert out.n_contrib[16, 16] == 2


def test_single_splat_matches_reference_exactly(rng):
    c = random_cloud(rng, 1)
    cam = front_camera(32)
    a, b = render(c, cam, BG), render_reference(c, cam, BG)
    assert np.abs(a.image - b.image).max() < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_oracle_equivalence(seed):
    rng = np.random.default_rng(seed)
    c = random_cloud(rng, int(rng.integers(1, 65)))
    cam = front_camera(64)
    a, b = render(c, cam, BG), render_reference(c, cam, BG)
    assert np.abs(a.image - b.image).max() <= 1e-5
    assert np.array_equal(a.n_contrib, b.n_contrib)


def test_view_suppressed_gaussian_never_contributes(rng):
    c = random_cloud(rng, 1, scale=(0.3, 0.5))
    c.gamma[0] = 0.0
    c.s_hat[0] = [-10, 0, 0, -10, 0, -10]
    for d in rng.normal(size=(6, 3)):
        d /= np.linalg.norm(d)
        cam = Camera.look_at(c.means[0] + 3 * d, c.means[0], up=np.cross(d, [0.3, 0.5, 0.8]), width=32, height=32)
        out = render(c, cam, BG)
        assert np.all(out.n_contrib == 0)
        assert np.array_equal(out.image, np.broadcast_to(np.asarray(BG, out.image.dtype), out.image.shape))


def test_background_conservation(rng):
    c = random_cloud(rng, 40)
    c.sh[:] = 0
    c.sh[:, 0] = 0.5 / 0.28209479177387814  # every splat white
    out = render(c, front_camera(64), (0, 0, 0))
    # with white splats and black background the image is the blended weight sum
    assert np.allclose(out.image[..., 0] + out.transmittance, 1.0, atol=1e-5)
    assert np.all((out.transmittance >= 0) & (out.transmittance <= 1))


def test_tile_size_does_not_change_image(rng):
    c = random_cloud(rng, 30)
    cam = front_camera(48)
    a = render(c, cam, BG, tile_size=16).image
    b = render(c, cam, BG, tile_size=8).image
    assert np.abs(a - b).max() < 1e-12


def test_float32_cloud_renders_float32(rng):
    c = random_cloud(rng, 20, dtype=np.float32)
    out = render(c, front_camera(32), BG)
    assert out.image.dtype == np.float32 and np.isfinite(out.image).all()


def test_scalar_view_ignores_s_hat(rng):
    c = random_cloud(rng, 20)
    cam = front_camera(32)
    z = c.copy()
    z.s_hat[:] = 0
    assert np.array_equal(render(c, cam, BG, view_dependent=False).image, render(z, cam, BG).image)


def test_repeat_runs_identical(rng):
    c = random_cloud(rng, 50)
    cam = front_camera(64)
    assert np.array_equal(render(c, cam, BG).image, render(c, cam, BG).image)


SCRIPT = textwrap.dedent("""
    import hashlib, numpy as np, sys
    sys.path.insert(0, {tests!r})
    from helpers import random_cloud, front_camera
    from vodgs.rasterizer import render
    from vodgs.gradients import render_backward
    c = random_cloud(np.random.default_rng(3), 60)
    cam = front_camera(64)
    f = render(c, cam, (0.1, 0.2, 0.3))
    g = render_backward(c, cam, f, np.random.default_rng(4).normal(size=(64, 64, 3)))
    h = hashlib.sha256(f.image.tobytes())
    for v in g.params().values():
        h.update(v.tobytes())
    print(h.hexdigest())
""")


@pytest.mark.slow
def test_identical_across_thread_counts():
    code = SCRIPT.format(tests=os.path.dirname(__file__))
    digests = set()
    for n in ("1", "3"):
        env = dict(os.environ, NUMBA_NUM_THREADS=n)
        r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        digests.add(r.stdout.strip())
    assert len(digests) == 1
