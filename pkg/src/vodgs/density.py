"""Adaptive densification, view-aware pruning and opacity resets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vodgs.core_math import logit, quaternion_to_matrix, sym3_eigendecompose, sym_from_eigen
from vodgs.model import GaussianCloud, max_opacity_over_views

PRUNE_TAU = 0.005
GRAD_THRESHOLD = 2e-4
PERCENT_DENSE = 0.01
SPLIT_FACTOR = 1.6
N_SPLIT = 2
RESET_ALPHA = 0.01
RESET_VARIANTS = ("L", "S")
# relative size below which an eigenvalue counts as zero when testing rank;
# loose enough to recognise a float32-stored rank-one matrix
RANK_TOL = 1e-6


@dataclass
class DensifyStats:
    """Screen-space gradient statistics accumulated between densification events.

    Gradient norms are measured in normalized device coordinates, i.e. the
    pixel gradient scaled by half the image size on each axis.
    """

    grad_accum: np.ndarray
    count: np.ndarray
    max_radii: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    def __len__(self):
        return len(self.count)

    def update(self, visible, means2d_grad, radii, width: int, height: int) -> None:
        vis = np.asarray(visible, bool)
        g = np.asarray(means2d_grad, dtype=np.float64)[vis]
        ndc = np.hypot(g[:, 0] * (0.5 * width), g[:, 1] * (0.5 * height))
        self.grad_accum[vis] += ndc
        self.count[vis] += 1
        self.max_radii[vis] = np.maximum(self.max_radii[vis], np.asarray(radii, dtype=np.float64)[vis])

    def mean_grad(self) -> np.ndarray:
        return np.where(self.count > 0, self.grad_accum / np.maximum(self.count, 1), 0.0)

    def remap(self, src) -> None:
        """Reorder to match a new cloud; rows with ``src < 0`` start at zero."""
        src = np.asarray(src)
        old = src >= 0
        for name in ("grad_accum", "count", "max_radii"):
            arr = getattr(self, name)
            new = np.zeros(len(src))
            new[old] = arr[src[old]]
            setattr(self, name, new)

    def reset(self) -> None:
        self.grad_accum[:] = 0
        self.count[:] = 0
        self.max_radii[:] = 0


def densify(
    cloud: GaussianCloud,
    stats: DensifyStats,
    grad_threshold: float,
    scale_threshold: float,
    rng: np.random.Generator,
    split_factor: float = SPLIT_FACTOR,
    n_split: int = N_SPLIT,
):
    """Clone small and split large Gaussians with a high mean screen gradient.

    Parameters
    ----------
    scale_threshold : float
        World-space size separating clone (max scale at or below) from
        split (above).
    rng : numpy.random.Generator
        Source of the child positions for splits.

    Returns
    -------
    cloud : GaussianCloud
        New cloud laid out as ``[survivors, clones, split children]``.
    src : ndarray of int
        For each output row, the input row it continues, or ``-1`` for a
        newly created Gaussian (optimizer moments start at zero there).
    """
    if len(stats) != len(cloud):
        raise ValueError(f"stats cover {len(stats)} Gaussians, cloud has {len(cloud)}")
    n = len(cloud)
    hot = stats.mean_grad() >= grad_threshold
    big = np.exp(cloud.log_scales.astype(np.float64)).max(axis=1) > scale_threshold if n else np.zeros(0, bool)
    clone_idx = np.flatnonzero(hot & ~big)
    split_idx = np.flatnonzero(hot & big)
    if len(clone_idx) == 0 and len(split_idx) == 0:
        return cloud, np.arange(n)

    clones = cloud.select(clone_idx)

    parents = cloud.select(np.repeat(split_idx, n_split))
    scales = np.exp(parents.log_scales.astype(np.float64))
    rots = quaternion_to_matrix(parents.rotations.astype(np.float64))
    local = rng.normal(size=(len(parents), 3)) * scales
    offsets = np.einsum("nij,nj->ni", rots, local)
    children = parents.copy()
    children.means[:] = (parents.means.astype(np.float64) + offsets).astype(cloud.dtype)
    children.log_scales[:] = np.log(scales / split_factor).astype(cloud.dtype)

    keep = np.ones(n, bool)
    keep[split_idx] = False
    out = cloud.select(keep).concat(clones).concat(children)
    src = np.concatenate([np.flatnonzero(keep), -np.ones(len(clones) + len(children), np.int64)])
    return out, src


def prune_mask(
    cloud: GaussianCloud,
    cams,
    tau: float = PRUNE_TAU,
    max_radii=None,
    max_screen_radius: float | None = None,
    max_world_scale: float | None = None,
) -> np.ndarray:
    """Boolean mask of Gaussians to remove.

    A Gaussian is removed when its largest view-dependent opacity over
    ``cams`` is below ``tau``.  When the outlier limits are given, it is
    also removed if its largest screen radius exceeds ``max_screen_radius``
    or its largest world scale exceeds ``max_world_scale``.
    """
    if len(cams) == 0:
        raise ValueError("pruning needs at least one camera")
    if len(cloud) == 0:
        return np.zeros(0, bool)
    remove = max_opacity_over_views(cloud, None, cams) < tau
    if max_screen_radius is not None and max_radii is not None:
        remove |= np.asarray(max_radii) > max_screen_radius
    if max_world_scale is not None:
        remove |= np.exp(cloud.log_scales.astype(np.float64)).max(axis=1) > max_world_scale
    return remove


def prune(cloud: GaussianCloud, cams, tau: float = PRUNE_TAU, **outliers):
    """Remove low-opacity (and optionally outlier) Gaussians.

    Returns ``(cloud, keep_mask, n_removed)``; see :func:`prune_mask`.
    """
    remove = prune_mask(cloud, cams, tau, **outliers)
    keep = ~remove
    return cloud.select(keep), keep, int(remove.sum())


def _is_rank_le1(lam: np.ndarray) -> np.ndarray:
    """Rows with at most one eigenvalue distinguishable from zero."""
    scale = 1.0 + np.abs(lam).max(axis=1)
    return (np.abs(lam) > RANK_TOL * scale[:, None]).sum(axis=1) <= 1


def reset_s_hat(s_hat, variant: str) -> np.ndarray:
    """Project each packed matrix onto one eigen-direction.

    ``"L"`` keeps the largest signed eigenvalue, ``"S"`` the smallest, and
    zeroes the other two: ``S* = Q diag(kept) Q^T``.  Matrices that are
    already rank one (or zero) are returned unchanged, which makes the
    reset idempotent even when the kept eigenvalue has the "wrong" sign
    for a second pass (e.g. variant L on a negative definite input).
    """
    if variant not in RESET_VARIANTS:
        raise ValueError(f"unknown reset variant {variant!r}; expected one of {RESET_VARIANTS}")
    s = np.asarray(s_hat, dtype=np.float64).reshape(-1, 6)
    lam, q = sym3_eigendecompose(s)
    keep_col = 0 if variant == "L" else 2
    kept = np.zeros_like(lam)
    kept[:, keep_col] = lam[:, keep_col]
    out = sym_from_eigen(kept, q)
    fixed = _is_rank_le1(lam)
    out[fixed] = s[fixed]
    return out


def opacity_reset(cloud: GaussianCloud, variant: str | None, reset_alpha: float = RESET_ALPHA) -> GaussianCloud:
    """Lower every opacity logit to at most ``logit(reset_alpha)`` and reset ``S_hat``.

    ``variant=None`` leaves ``S_hat`` alone (scalar-opacity pipeline).
    Returns a new cloud.
    """
    out = cloud.copy()
    cap = logit(reset_alpha)
    out.gamma[:] = np.minimum(out.gamma.astype(np.float64), cap).astype(out.dtype)
    if variant is not None and len(out):
        out.s_hat[:] = reset_s_hat(out.s_hat, variant).astype(out.dtype)
    return out


__all__ = [
    "DensifyStats",
    "densify",
    "prune",
    "prune_mask",
    "opacity_reset",
    "reset_s_hat",
    "PRUNE_TAU",
    "RESET_ALPHA",
]
