"""Random clouds and cameras shared by the test modules."""

import numpy as np

from vodgs.model import Camera, GaussianCloud


def random_cloud(rng, n, dtype=np.float64, spread=1.0, depth=4.0, scale=(0.05, 0.4), s_hat=1.0):
    c = GaussianCloud.zeros(n, dtype)
    c.means[:] = rng.uniform(-spread, spread, (n, 3)) + [0, 0, depth]
    c.log_scales[:] = np.log(rng.uniform(*scale, (n, 3)))
    c.rotations[:] = rng.normal(size=(n, 4))
    c.sh[:] = rng.normal(0, 0.4, c.sh.shape)
    c.sh[:, 0] += 1.0
    c.gamma[:] = rng.normal(0.5, 1.0, n)
    c.s_hat[:] = rng.normal(0, s_hat, (n, 6))
    return c


def front_camera(size=64, fov_deg=50.0):
    f = 0.5 * size / np.tan(np.radians(fov_deg) / 2)
    return Camera(size, size, f, f, size / 2, size / 2)
