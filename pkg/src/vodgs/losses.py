"""Training objective: photometric terms, view-consistency term, paired-view sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from vodgs.core_math import quadratic_form, sigmoid
from vodgs.model import Camera, GaussianCloud, view_direction

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
DEFAULT_LAMBDA = 0.2


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def l1_loss(rendered, target):
    """Mean absolute difference and its gradient w.r.t. ``rendered``."""
    r, t = _check_pair(rendered, target)
    d = r - t
    return float(np.abs(d).mean()), np.sign(d) / d.size


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


_WINDOW = _gaussian_window()


def _blur(x):
    """Separable Gaussian filter over the two spatial axes of ``(..., H, W, C)``, zero padded."""
    y = correlate1d(x, _WINDOW, axis=-3, mode="constant", cval=0.0)
    return correlate1d(y, _WINDOW, axis=-2, mode="constant", cval=0.0)


@dataclass
class SSIMStats:
    """Blurred moments of a fixed image, reusable across calls."""

    mu: np.ndarray
    sq: np.ndarray

    @classmethod
    def of(cls, img) -> "SSIMStats":
        img = np.asarray(img, dtype=np.float64)
        b = _blur(np.stack([img, img * img]))
        return cls(b[0], b[1])


def _check_window(img):
    if img.ndim != 3 or img.shape[0] < SSIM_WINDOW or img.shape[1] < SSIM_WINDOW:
        raise ValueError(f"SSIM needs H, W >= {SSIM_WINDOW}; got shape {img.shape}")


def _interior(shape):
    """Pixels whose whole window lies inside the image."""
    r = SSIM_WINDOW // 2
    return (slice(r, shape[0] - r), slice(r, shape[1] - r))


def ssim(img_a, img_b, grad: bool = False, stats_b: SSIMStats | None = None):
    """Mean SSIM over an 11x11 Gaussian window (sigma 1.5), channels averaged.

    Only windows that fit entirely inside the image are averaged, so the
    result has no border artifacts from padding.

    With ``grad=True`` also returns d(mean SSIM)/d(img_a).
    """
    x, y = _check_pair(img_a, img_b)
    _check_window(x)
    if stats_b is None:
        stats_b = SSIMStats.of(y)
    bx = _blur(np.stack([x, x * x, x * y]))
    mu_x, mu_y = bx[0], stats_b.mu
    sig_x = bx[1] - mu_x * mu_x
    sig_y = stats_b.sq - mu_y * mu_y
    sig_xy = bx[2] - mu_x * mu_y

    a1 = 2 * mu_x * mu_y + SSIM_C1
    a2 = 2 * sig_xy + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = sig_x + sig_y + SSIM_C2
    smap = (a1 * a2) / (b1 * b2)
    inner = _interior(smap.shape)
    value = float(smap[inner].mean())
    if not grad:
        return value

    n = smap[inner].size
    keep = np.zeros(smap.shape)
    keep[inner] = 1.0
    d_mu = keep * ((2 * mu_y * a2) / (b1 * b2) - smap * 2 * mu_x / b1)
    d_sig = keep * (-smap / b2)
    d_sxy = keep * (2 * a1 / (b1 * b2))
    # the zero-padded symmetric filter is self-adjoint
    back = _blur(np.stack([d_mu - 2 * d_sig * mu_x - d_sxy * mu_y, d_sig, d_sxy]))
    g = (back[0] + 2 * x * back[1] + y * back[2]) / n
    return value, g


def dssim_loss(rendered, target, stats_target: SSIMStats | None = None):
    """``(1 - SSIM) / 2`` and its gradient w.r.t. ``rendered``."""
    s, g = ssim(rendered, target, grad=True, stats_b=stats_target)
    return (1.0 - s) / 2.0, -0.5 * g


class MatchMatrix:
    """Symmetric, zero-diagonal, nonnegative keypoint match counts between views."""

    def __init__(self, counts):
        m = np.asarray(counts, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"match matrix must be square, got shape {m.shape}")
        if not np.isfinite(m).all():
            raise ValueError("match matrix has non-finite entries")
        neg = np.argwhere(m < 0)
        if len(neg):
            i, j = neg[0]
            raise ValueError(f"negative match count at ({i}, {j})")
        diag = np.flatnonzero(np.diag(m))
        if len(diag):
            raise ValueError(f"nonzero diagonal at ({diag[0]}, {diag[0]})")
        asym = np.argwhere(m != m.T)
        if len(asym):
            i, j = asym[0]
            raise ValueError(f"match matrix not symmetric at ({i}, {j}): {m[i, j]} != {m[j, i]}")
        self.counts = m

    def __len__(self):
        return len(self.counts)

    @classmethod
    def uniform(cls, n_views: int) -> "MatchMatrix":
        return cls(np.ones((n_views, n_views)) - np.eye(n_views))

    def probabilities(self, i: int) -> np.ndarray:
        row = self.counts[i].copy()
        row[i] = 0.0
        total = row.sum()
        if total <= 0:
            row = np.ones(len(row))
            row[i] = 0.0
            total = row.sum()
        return row / total


def sample_paired_view(i: int, matches: MatchMatrix, rng: np.random.Generator) -> int:
    """Draw a partner view ``j != i`` with probability proportional to match counts.

    A row with no matches falls back to a uniform draw over the other views.
    """
    if len(matches) < 2:
        raise ValueError("paired-view sampling needs at least two views")
    p = matches.probabilities(i)
    return int(rng.choice(len(p), p=p))


def view_consistency_loss(cloud: GaussianCloud, cam_i: Camera, cam_j: Camera, mask=None):
    """Cosine-weighted squared opacity gap between two views, averaged over Gaussians.

    Returns ``(loss, d_gamma, d_s_hat)``.  The cosine weight depends only on
    geometry, so it is treated as a constant; no gradient reaches ``means``.
    ``mask`` optionally restricts the average to a subset of Gaussians.
    """
    n = len(cloud)
    d_gamma = np.zeros(n)
    d_s = np.zeros((n, 6))
    idx = np.arange(n) if mask is None else np.flatnonzero(mask)
    if len(idx) == 0:
        return 0.0, d_gamma, d_s
    wi = view_direction(cloud, idx, cam_i)
    wj = view_direction(cloud, idx, cam_j)
    g = np.asarray(cloud.gamma[idx], dtype=np.float64)
    s = np.asarray(cloud.s_hat[idx], dtype=np.float64)
    ai = sigmoid(g + quadratic_form(s, wi))
    aj = sigmoid(g + quadratic_form(s, wj))
    cos = np.clip(np.sum(wi * wj, axis=1), -1.0, 1.0)
    weight = np.maximum(cos, 0.0)
    gap = ai - aj
    loss = float(np.sum(weight * gap * gap) / len(idx))

    coef = 2.0 * weight * gap / len(idx)
    si = ai * (1 - ai)
    sj = aj * (1 - aj)
    d_gamma[idx] = coef * (si - sj)
    d_s[idx] = coef[:, None] * (si[:, None] * _sym_outer(wi) - sj[:, None] * _sym_outer(wj))
    return loss, d_gamma, d_s


def _sym_outer(w):
    """d(w^T S w)/dS for the six packed coefficients (off-diagonals count twice)."""
    x, y, z = w[:, 0], w[:, 1], w[:, 2]
    return np.stack([x * x, 2 * x * y, 2 * x * z, y * y, 2 * y * z, z * z], axis=1)


@dataclass
class LossReport:
    l1: float
    dssim: float
    l_vc: float
    total: float
    pair: tuple[int, int] | None = None


def total_loss(
    rendered,
    target,
    cloud: GaussianCloud | None = None,
    cam_i: Camera | None = None,
    cam_j: Camera | None = None,
    lam: float = DEFAULT_LAMBDA,
    stats_target: SSIMStats | None = None,
    vc_mask=None,
):
    """``(1 - lam) * L1 + lam * D-SSIM + L_vc``.

    ``L_vc`` is included when ``cam_j`` is given.  Returns the report, the
    image gradient (fed to the rasterizer backward) and the direct
    ``(d_gamma, d_s_hat)`` contributions of the view-consistency term, or
    ``None`` for those when it is disabled.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    l1, g1 = l1_loss(rendered, target)
    if lam > 0:
        ds, gd = dssim_loss(rendered, target, stats_target)
    else:
        ds, gd = 0.0, 0.0
    grad_img = (1 - lam) * g1 + lam * gd
    lvc, dg, dsh = 0.0, None, None
    if cam_j is not None:
        if cloud is None or cam_i is None:
            raise ValueError("view-consistency term needs the cloud and both cameras")
        lvc, dg, dsh = view_consistency_loss(cloud, cam_i, cam_j, vc_mask)
    total = (1 - lam) * l1 + lam * ds + lvc
    pair = (cam_i.id, cam_j.id) if cam_j is not None else None
    return LossReport(l1, ds, lvc, total, pair), grad_img, dg, dsh
