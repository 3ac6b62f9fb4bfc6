"""Analytic backward pass through blending, opacity, color and projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vodgs import _kernels
from vodgs.model import PARAM_NAMES, Camera, GaussianCloud
from vodgs.projection import DILATION
from vodgs.rasterizer import RenderOutput, render


@dataclass
class GradientSet:
    """Per-Gaussian gradients laid out exactly like :class:`GaussianCloud`."""

    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    sh: np.ndarray
    gamma: np.ndarray
    s_hat: np.ndarray
    means2d: np.ndarray | None = None  # screen-space mean gradient, pixels

    @classmethod
    def zeros_like(cls, cloud: GaussianCloud, dtype=np.float64) -> "GradientSet":
        return cls(**{k: np.zeros(v.shape, dtype) for k, v in cloud.params().items()},
                   means2d=np.zeros((len(cloud), 2), dtype))

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def add_(self, other: "GradientSet") -> "GradientSet":
        for k in PARAM_NAMES:
            getattr(self, k)[...] += getattr(other, k)
        return self

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params().values())


def render_backward(
    cloud: GaussianCloud,
    cam: Camera,
    forward: RenderOutput,
    dl_dimage,
    omega_grad: bool = True,
) -> GradientSet:
    """Gradients of a scalar loss w.r.t. every cloud parameter.

    Parameters
    ----------
    forward : RenderOutput
        Result of :func:`vodgs.rasterizer.render` on the same cloud and camera.
    dl_dimage : array_like, shape (H, W, 3)
        Gradient of the loss w.r.t. the rendered image.
    omega_grad : bool
        Propagate the dependence of the view direction on the Gaussian
        center (for both SH color and opacity) into ``means``.
    """
    if forward.splats is None or forward.grid is None:
        raise ValueError("forward pass was not produced by render()")
    if forward.n_gaussians != len(cloud):
        raise ValueError(f"forward pass covers {forward.n_gaussians} Gaussians, cloud has {len(cloud)}")
    h, w = cam.height, cam.width
    dl_dimage = np.ascontiguousarray(dl_dimage, dtype=np.float64)
    if dl_dimage.shape != (h, w, 3):
        raise ValueError(f"image gradient shape {dl_dimage.shape} does not match ({h}, {w}, 3)")

    grads = GradientSet.zeros_like(cloud)
    if len(cloud) == 0:
        return grads
    s = forward.splats
    grid = forward.grid
    entry_grads = np.empty((grid.n_entries, _kernels.N_SPLAT_GRADS))
    _kernels.raster_backward(
        grid.ranges, grid.entries, s.means2d, s.conics, s.radii, s.colors, s.alphas,
        forward.background, int(w), int(h), int(grid.tile_size), forward.transmittance,
        forward.last_entry, dl_dimage, entry_grads,
    )
    splat_grads = _kernels.reduce_entry_grads(grid.entries, entry_grads, len(cloud))
    _kernels.preprocess_backward(
        cloud.means, cloud.log_scales, cloud.rotations, cloud.sh, cloud.gamma, cloud.s_hat,
        cam.R, cam.t, cam.center, float(cam.fx), float(cam.fy), int(s.sh_degree), DILATION,
        s.visible, s.clamped, s.alphas, splat_grads, bool(omega_grad),
        grads.means, grads.log_scales, grads.rotations, grads.sh, grads.gamma, grads.s_hat,
    )
    grads.means2d = splat_grads[:, :2].copy()
    return grads


def finite_difference_check(
    cloud: GaussianCloud,
    cam: Camera,
    loss_fn,
    params_subset,
    h: float = 1e-5,
    background=(0.0, 0.0, 0.0),
    sh_degree: int = 3,
    exclude_discontinuities: bool = True,
):
    """Compare analytic gradients against central finite differences.

    Parameters
    ----------
    loss_fn : callable
        ``loss_fn(image) -> (value, dvalue_dimage)``; must be a sum of
        per-pixel terms so that masking pixels is meaningful.
    params_subset : iterable of (name, flat_index)
        Coordinates to probe, e.g. ``[("gamma", 0), ("s_hat", 7)]``.
    exclude_discontinuities : bool
        Drop pixels whose set of blended splats changes between the two
        perturbed renders (3-sigma cutoff, 1/255 skip, early stop).  The
        analytic gradient is recomputed on the same pixel mask.

    Returns
    -------
    max_rel_err : float
        ``max |analytic - numeric| / (|numeric| + 1e-6)`` over the subset.
    details : list of (name, index, analytic, numeric)
    """
    base = cloud.copy()
    fwd0 = render(base, cam, background, sh_degree)
    details = []
    worst = 0.0
    for name, idx in params_subset:
        arr = getattr(base, name)
        flat = arr.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + h
        fp = render(base, cam, background, sh_degree)
        flat[idx] = orig - h
        fm = render(base, cam, background, sh_degree)
        flat[idx] = orig
        if exclude_discontinuities:
            mask = (fp.n_contrib == fwd0.n_contrib) & (fm.n_contrib == fwd0.n_contrib)
        else:
            mask = np.ones(fwd0.n_contrib.shape, bool)
        m3 = mask[..., None]
        lp, _ = loss_fn(np.where(m3, fp.image, 0.0))
        lm, _ = loss_fn(np.where(m3, fm.image, 0.0))
        numeric = (lp - lm) / (2 * h)
        _, dimg = loss_fn(np.where(m3, fwd0.image, 0.0))
        g = render_backward(base, cam, fwd0, np.where(m3, dimg, 0.0))
        analytic = getattr(g, name).reshape(-1)[idx]
        err = abs(analytic - numeric) / (abs(numeric) + 1e-6)
        worst = max(worst, err)
        details.append((name, idx, float(analytic), float(numeric)))
    return worst, details


GRADCHECK_CLASSES = ("sh", "gamma", "s_hat", "log_scales", "rotations", "means")


def random_test_scene(rng: np.random.Generator, n: int = 16, size: int = 16, dtype=np.float64):
    """Small random cloud with every parameter class active, plus a camera that sees it."""
    c = GaussianCloud.zeros(n, dtype)
    c.means[:] = rng.uniform(-1, 1, (n, 3))
    c.log_scales[:] = np.log(rng.uniform(0.05, 0.3, (n, 3)))
    c.rotations[:] = rng.normal(size=(n, 4))
    c.sh[:] = rng.normal(0, 0.3, c.sh.shape)
    c.sh[:, 0] = rng.uniform(-1, 1.5, (n, 3))
    c.gamma[:] = rng.normal(0, 1.5, n)
    c.s_hat[:] = rng.normal(0, 1.0, (n, 6))
    eye = rng.normal(size=3)
    eye = 4.0 * eye / np.linalg.norm(eye)
    cam = Camera.look_at(eye, rng.uniform(-0.2, 0.2, 3), width=size, height=size, fov_deg=45)
    return c, cam


def gradient_check(seed: int, n_gaussians: int = 16, size: int = 16, max_probes: int = 48, h: float = 1e-5):
    """Finite-difference check of every parameter class on one random scene.

    The loss is a fixed random linear functional of the image, so every
    pixel contributes independently.  Returns ``{class: max_rel_err}``.
    """
    rng = np.random.default_rng(seed)
    cloud, cam = random_test_scene(rng, n_gaussians, size)
    weights = rng.uniform(-1, 1, (size, size, 3))
    bg = rng.uniform(0, 1, 3)

    def loss_fn(img):
        return float((img * weights).sum()), weights

    out = {}
    for name in GRADCHECK_CLASSES:
        n_coords = getattr(cloud, name).size
        coords = np.arange(n_coords)
        if n_coords > max_probes:
            coords = np.sort(rng.choice(n_coords, max_probes, replace=False))
        err, _ = finite_difference_check(cloud, cam, loss_fn, [(name, int(i)) for i in coords], h, bg)
        out[name] = err
    return out
