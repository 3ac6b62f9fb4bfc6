"""Synthetic scenes with known ground truth for controlled experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from vodgs.core_math import logit, matrix_to_quaternion, mat_to_sym, rgb_to_sh0
from vodgs.losses import MatchMatrix
from vodgs.model import Camera, GaussianCloud, view_dependent_opacity
from vodgs.rasterizer import render

PRESETS = {
    "diffuse": dict(n_diffuse=300, n_specular=0),
    "specular": dict(n_diffuse=150, n_specular=120),
    "mixed": dict(n_diffuse=300, n_specular=60),
}


@dataclass
class SyntheticScene:
    """Ground truth, cameras, target images and the pairwise match counts.

    ``matches`` is indexed by position in ``train_cams``.  ``init_points``
    and ``init_colors`` play the role of a sparse reconstruction used to
    seed training.
    """

    gt_cloud: GaussianCloud | None
    train_cams: list
    test_cams: list
    train_images: list
    test_images: list
    matches: MatchMatrix | None = None
    init_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    init_colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.train_cams) != len(self.train_images) or len(self.test_cams) != len(self.test_images):
            raise ValueError("every camera needs exactly one image")
        train_ids = {c.id for c in self.train_cams}
        test_ids = {c.id for c in self.test_cams}
        if len(train_ids) != len(self.train_cams) or len(test_ids) != len(self.test_cams):
            raise ValueError("camera ids must be unique")
        if train_ids & test_ids:
            raise ValueError(f"train and test cameras overlap: {sorted(train_ids & test_ids)}")
        if self.matches is not None and len(self.matches) != len(self.train_cams):
            raise ValueError(
                f"match matrix covers {len(self.matches)} views, scene has {len(self.train_cams)} training cameras"
            )

    @property
    def extent(self) -> float:
        """1.1 times the largest distance of a training camera from their centroid."""
        centers = np.stack([c.center for c in self.train_cams])
        return float(1.1 * np.linalg.norm(centers - centers.mean(axis=0), axis=1).max())


def orbit_cameras(n: int, radius: float, width: int, height: int, fov_deg: float = 50.0,
                  elevation=(-20.0, 45.0), offset: float = 0.0) -> list:
    """Cameras on a spiral over a band of elevations, all aimed at the origin."""
    golden = np.pi * (3.0 - np.sqrt(5.0))
    cams = []
    lo, hi = np.radians(elevation[0]), np.radians(elevation[1])
    for k in range(n):
        u = (k + 0.5) / n
        elev = np.arcsin(np.sin(lo) + u * (np.sin(hi) - np.sin(lo)))
        azim = golden * k + offset
        eye = radius * np.array([np.cos(elev) * np.cos(azim), np.cos(elev) * np.sin(azim), np.sin(elev)])
        cams.append(Camera.look_at(eye, (0, 0, 0), width=width, height=height, fov_deg=fov_deg, id=k))
    return cams


def _tangent_frames(normals: np.ndarray, rng) -> np.ndarray:
    """Rotations whose third axis is ``normals``, random spin about it."""
    out = np.empty((len(normals), 4))
    for i, nrm in enumerate(normals):
        a = rng.normal(size=3)
        a -= a.dot(nrm) * nrm
        a /= np.linalg.norm(a)
        b = np.cross(nrm, a)
        out[i] = matrix_to_quaternion(np.stack([a, b, nrm], axis=1))
    return out


def _surface_color(p: np.ndarray) -> np.ndarray:
    c = 0.5 + 0.35 * np.stack([np.sin(3.1 * p[:, 0] + 0.4), np.sin(2.3 * p[:, 1] + 1.7), np.cos(2.7 * p[:, 2])], 1)
    return np.clip(c, 0.05, 0.95)


def specular_s_hat(directions: np.ndarray, k: float = 8.0, c: float = 4.0) -> np.ndarray:
    """Packed ``k d d^T - c I``: opacity boosted near ``+-d``, suppressed across it."""
    d = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    return mat_to_sym(k * d[:, :, None] * d[:, None, :] - c * np.eye(3))


def make_specular_scene(
    n_diffuse: int = 300,
    n_specular: int = 60,
    n_train_views: int = 40,
    n_test_views: int = 10,
    seed: int = 0,
    width: int = 128,
    height: int = 128,
    k: float = 8.0,
    c: float = 4.0,
    cam_radius: float = 3.5,
    init_noise: float = 0.03,
) -> SyntheticScene:
    """A sphere of diffuse surface splats with view-dependent highlight splats on top.

    Diffuse Gaussians are flat discs tangent to the unit sphere with
    scalar opacity and ``S_hat = 0``.  Specular ones sit just outside the
    surface, are bright, and carry ``S_hat = k d d^T - c I`` with a random
    highlight axis ``d``, so they are nearly opaque within 45 degrees of
    ``+-d`` and nearly invisible elsewhere.  Training and test cameras
    are interleaved on one orbit, so test views are novel but in range.
    """
    if n_diffuse < 0 or n_specular < 0 or n_diffuse + n_specular < 1:
        raise ValueError("need at least one Gaussian")
    if n_train_views < 1 or n_test_views < 1:
        raise ValueError("need at least one training and one test view")
    rng = np.random.default_rng(seed)
    n = n_diffuse + n_specular

    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    radii = np.where(np.arange(n) < n_diffuse, 1.0, 1.03)
    means = normals * radii[:, None]

    spacing = np.sqrt(4 * np.pi / max(n_diffuse, 1))
    size = 0.6 * spacing * np.exp(rng.normal(0.0, 0.15, size=n))
    size[n_diffuse:] = 0.5 * spacing * np.exp(rng.normal(0.0, 0.15, size=n_specular))
    scales = np.stack([size, size * rng.uniform(0.7, 1.0, n), 0.15 * size], axis=1)

    colors = _surface_color(means)
    colors[n_diffuse:] = rng.uniform(0.85, 1.0, size=(n_specular, 3))

    cloud = GaussianCloud.zeros(n, np.float64)
    cloud.means[:] = means
    cloud.log_scales[:] = np.log(scales)
    cloud.rotations[:] = _tangent_frames(normals, rng)
    cloud.sh[:, 0, :] = rgb_to_sh0(colors)
    cloud.gamma[:n_diffuse] = logit(0.95)
    cloud.gamma[n_diffuse:] = 0.0
    if n_specular:
        axes = rng.normal(size=(n_specular, 3))
        cloud.s_hat[n_diffuse:] = specular_s_hat(axes, k, c)
    cloud = cloud.astype(np.float32)

    cams = orbit_cameras(n_train_views + n_test_views, cam_radius, width, height)
    stride = (n_train_views + n_test_views) / n_test_views
    test_idx = set(int(i * stride + stride / 2) for i in range(n_test_views))
    train_cams = [cm for cm in cams if cm.id not in test_idx]
    test_cams = [cm.with_(split="test") for cm in cams if cm.id in test_idx]

    def _targets(cs):
        return [render(cloud, cm).image.astype(np.float64) for cm in cs]

    opaque = np.stack([view_dependent_opacity(cloud, None, cm) >= 0.5 for cm in train_cams], axis=1)
    counts = opaque.T.astype(np.int64) @ opaque.astype(np.int64)
    np.fill_diagonal(counts, 0)

    init_points = means + init_noise * rng.normal(size=means.shape)
    return SyntheticScene(
        gt_cloud=cloud,
        train_cams=train_cams,
        test_cams=test_cams,
        train_images=_targets(train_cams),
        test_images=_targets(test_cams),
        matches=MatchMatrix(counts),
        init_points=init_points,
        init_colors=colors,
    )


def make_preset(name: str, seed: int = 0, **kw) -> SyntheticScene:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return make_specular_scene(**{**PRESETS[name], **kw}, seed=seed)
