"""Optimization loop, metrics and evaluation."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from vodgs.config import TrainConfig, format_config, parse_config
from vodgs.density import DensifyStats, densify, opacity_reset, prune
from vodgs.gradients import render_backward
from vodgs.losses import (
    LossReport,
    MatchMatrix,
    SSIMStats,
    sample_paired_view,
    ssim as _ssim,
    total_loss,
)
from vodgs.model import PARAM_NAMES, GaussianCloud, InitConfig, init_cloud
from vodgs.optim import AdamState, exponential_decay
from vodgs.rasterizer import render

log = logging.getLogger(__name__)

PSNR_CAP = 100.0


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite; ``indices`` lists suspect Gaussians."""

    def __init__(self, iteration: int, indices: np.ndarray, detail: str = ""):
        self.iteration = iteration
        self.indices = np.asarray(indices)
        shown = ", ".join(str(i) for i in self.indices[:20])
        more = "" if len(self.indices) <= 20 else f" (+{len(self.indices) - 20} more)"
        super().__init__(f"non-finite loss at iteration {iteration}; offending Gaussians: [{shown}]{more} {detail}")


def psnr(img_a, img_b) -> float:
    """Peak signal-to-noise ratio for images in [0, 1], capped at 100 dB."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim(img_a, img_b) -> float:
    """Mean SSIM with the same window and constants as the training loss."""
    return _ssim(img_a, img_b)


def learning_rates(cfg: TrainConfig, iteration: int, extent: float) -> dict[str, float]:
    """Per-group learning rates at ``iteration`` (1-based)."""
    steps = cfg.lr_position_steps or cfg.iterations
    lr_pos = exponential_decay(cfg.lr_position_init, cfg.lr_position_final, iteration - 1, steps) * extent
    lr_gamma = cfg.lr_gamma
    lr_s = 0.0
    if cfg.view_dependent:
        lr_s = cfg.lr_gamma * cfg.vod_lr_factor
        if cfg.reduce_gamma_lr:
            lr_gamma = lr_s
    return {
        "means": lr_pos,
        "log_scales": cfg.lr_scale,
        "rotations": cfg.lr_rotation,
        "sh_dc": cfg.lr_sh,
        "sh_rest": cfg.lr_sh / cfg.sh_rest_divisor,
        "gamma": lr_gamma,
        "s_hat": lr_s,
    }


def active_sh_degree(cfg: TrainConfig, iteration: int) -> int:
    return min(cfg.max_sh_degree, (iteration - 1) // cfg.sh_degree_interval)


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    cloud: GaussianCloud
    adam: AdamState
    stats: DensifyStats
    rng: np.random.Generator
    iteration: int = 0
    queue: list = field(default_factory=list)


@dataclass
class TrainResult:
    cloud: GaussianCloud
    reports: list
    history: list
    config: TrainConfig

    @property
    def final_loss(self) -> float:
        return self.reports[-1].total if self.reports else float("nan")


def initial_state(cfg: TrainConfig, scene) -> TrainState:
    if len(scene.init_points) == 0:
        raise ValueError("scene has no initial points")
    cloud = init_cloud(scene.init_points, scene.init_colors, InitConfig(dtype=np.float32))
    adam = AdamState.for_cloud(cloud)
    if not cfg.view_dependent:
        adam.frozen.add("s_hat")
    return TrainState(cloud, adam, DensifyStats.zeros(len(cloud)), np.random.default_rng(cfg.seed))


def _remap_optimizer(state: TrainState, src: np.ndarray) -> None:
    src = np.asarray(src)
    old = src >= 0
    for d in (state.adam.m, state.adam.v):
        for k in PARAM_NAMES:
            new = np.zeros((len(src),) + d[k].shape[1:])
            new[old] = d[k][src[old]]
            d[k] = new
    state.stats.remap(src)


def _limit_growth(stats: DensifyStats, cloud: GaussianCloud, cfg: TrainConfig) -> None:
    """Drop the weakest candidates so densification respects ``max_gaussians``.

    Clones and splits each add exactly one Gaussian.
    """
    budget = max(cfg.max_gaussians - len(cloud), 0)
    g = stats.mean_grad()
    hot = np.flatnonzero(g >= cfg.grad_threshold)
    if len(hot) <= budget:
        return
    order = hot[np.argsort(-g[hot], kind="stable")]
    stats.grad_accum[order[budget:]] = 0.0


def _check_finite(report: LossReport, state: TrainState, grads, it: int) -> None:
    if np.isfinite(report.total):
        return
    bad = ~state.cloud.is_finite()
    for v in grads.params().values():
        bad |= ~np.isfinite(v.reshape(len(bad), -1)).all(axis=1)
    raise TrainingDiverged(it, np.flatnonzero(bad), f"(l1={report.l1}, dssim={report.dssim}, l_vc={report.l_vc})")


def train(
    cfg: TrainConfig,
    scene,
    state: TrainState | None = None,
    stop_at: int | None = None,
    checkpoint_dir=None,
    callback=None,
) -> TrainResult:
    """Fit a cloud to ``scene.train_images``.

    Parameters
    ----------
    state : TrainState, optional
        Resume from a checkpointed state instead of initializing.
    stop_at : int, optional
        Stop after this iteration (for checkpoint round trips).
    callback : callable, optional
        ``callback(iteration, state, report)`` after every step.
    """
    cams = scene.train_cams
    images = [np.asarray(im, dtype=np.float64) for im in scene.train_images]
    if not cams:
        raise ValueError("scene has no training views")
    if cfg.vc != "off" and len(cams) < 2:
        raise ValueError("the view-consistency loss needs at least two training views")
    matches = None
    if cfg.vc == "matches":
        if scene.matches is None:
            raise ValueError("vc=matches requires a match matrix in the scene")
        matches = scene.matches
    elif cfg.vc == "uniform":
        matches = MatchMatrix.uniform(len(cams))
    stats_t = [SSIMStats.of(im) for im in images] if cfg.lam_dssim > 0 else [None] * len(images)

    extent = scene.extent
    scale_threshold = cfg.percent_dense * extent
    state = state or initial_state(cfg, scene)
    reset_variant = cfg.reset_variant
    last = cfg.iterations if stop_at is None else min(stop_at, cfg.iterations)
    reports: list[LossReport] = []
    history: list[dict] = []

    for it in range(state.iteration + 1, last + 1):
        if not state.queue:
            state.queue = [int(v) for v in state.rng.permutation(len(cams))]
        i = state.queue.pop()
        j = sample_paired_view(i, matches, state.rng) if matches is not None else None
        cam = cams[i]
        sh_degree = active_sh_degree(cfg, it)
        cloud = state.cloud

        fwd = render(cloud, cam, cfg.background, sh_degree, cfg.tile_size, cfg.view_dependent)
        report, dimg, dg, ds = total_loss(
            fwd.image, images[i], cloud, cam, cams[j] if j is not None else None, cfg.lam_dssim, stats_t[i],
            vc_mask=fwd.splats.visible if cfg.vc_visible_only else None,
        )
        if j is not None:
            report.pair = (i, j)
        grads = render_backward(cloud, cam, fwd, dimg, cfg.omega_grad)
        if dg is not None:
            grads.gamma += dg
            grads.s_hat += ds
        _check_finite(report, state, grads, it)
        if not cfg.view_dependent:
            grads.s_hat[:] = 0.0
        state.adam.update(cloud, grads.params(), learning_rates(cfg, it, extent))
        reports.append(report)

        if it < cfg.densify_until:
            state.stats.update(fwd.splats.visible, grads.means2d, fwd.splats.radii, cam.width, cam.height)
            if it > cfg.densify_from and it % cfg.densify_interval == 0:
                _densify_and_prune(cfg, state, cams, extent, scale_threshold, it)
            if it % cfg.opacity_reset_interval == 0:
                state.cloud = opacity_reset(state.cloud, reset_variant, cfg.reset_alpha)
                state.adam.zero_rows("gamma")
                state.adam.zero_rows("s_hat")

        state.iteration = it
        if it % cfg.log_interval == 0 or it == last:
            entry = {"iteration": it, "n_gaussians": len(state.cloud), "loss": report.total, "l1": report.l1,
                     "dssim": report.dssim, "l_vc": report.l_vc}
            history.append(entry)
            log.info("it %d  n=%d  loss=%.5f  l1=%.5f  l_vc=%.2e", it, entry["n_gaussians"], report.total,
                     report.l1, report.l_vc)
        if checkpoint_dir is not None and cfg.checkpoint_interval and it % cfg.checkpoint_interval == 0:
            save_checkpoint(os.path.join(checkpoint_dir, f"ckpt_{it:06d}.npz"), state, cfg)
        if callback is not None:
            callback(it, state, report)

    return TrainResult(state.cloud, reports, history, cfg)


def _densify_and_prune(cfg, state: TrainState, cams, extent, scale_threshold, it) -> None:
    _limit_growth(state.stats, state.cloud, cfg)
    cloud, src = densify(state.cloud, state.stats, cfg.grad_threshold, scale_threshold, state.rng)
    _remap_optimizer(state, src)
    state.cloud = cloud
    outliers = {}
    if it > cfg.opacity_reset_interval:
        outliers = dict(max_radii=state.stats.max_radii, max_screen_radius=cfg.max_screen_radius,
                        max_world_scale=cfg.max_world_scale_frac * extent)
    cloud, keep, removed = prune(state.cloud, cams, cfg.prune_tau, **outliers)
    _remap_optimizer(state, np.flatnonzero(keep))
    state.cloud = cloud
    state.stats.reset()
    log.debug("it %d densify: %d -> %d (pruned %d)", it, len(src), len(cloud), removed)


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, state: TrainState, cfg: TrainConfig) -> None:
    """Write the full training state, rng included, to one ``.npz`` file."""
    arrays = {f"cloud_{k}": v for k, v in state.cloud.params().items()}
    arrays.update({f"adam_{k}": v for k, v in state.adam.state_dict().items()})
    arrays.update(
        stats_grad=state.stats.grad_accum, stats_count=state.stats.count, stats_radii=state.stats.max_radii,
        iteration=np.array(state.iteration), queue=np.array(state.queue, dtype=np.int64),
        rng=np.array(json.dumps(state.rng.bit_generator.state)),
        frozen=np.array(json.dumps(sorted(state.adam.frozen))),
        config=np.array(format_config(cfg)),
    )
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[TrainState, TrainConfig]:
    with np.load(path, allow_pickle=False) as d:
        cloud = GaussianCloud(**{k: d[f"cloud_{k}"].copy() for k in PARAM_NAMES})
        adam = AdamState.from_state_dict({k[5:]: d[k] for k in d.files if k.startswith("adam_")})
        adam.frozen = set(json.loads(str(d["frozen"])))
        stats = DensifyStats(d["stats_grad"].copy(), d["stats_count"].copy(), d["stats_radii"].copy())
        bit_gen = np.random.PCG64()
        bit_gen.state = json.loads(str(d["rng"]))
        state = TrainState(cloud, adam, stats, np.random.Generator(bit_gen), int(d["iteration"]),
                           [int(v) for v in d["queue"]])
        cfg = TrainConfig(**parse_config(str(d["config"]), str(path)))
    return state, cfg


# -- evaluation ---------------------------------------------------------------

@dataclass
class EvalTable:
    view_ids: list
    psnr: np.ndarray
    ssim: np.ndarray

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def to_csv(self) -> str:
        rows = ["view,psnr,ssim"]
        rows += [f"{v},{p:.6f},{s:.6f}" for v, p, s in zip(self.view_ids, self.psnr, self.ssim)]
        rows.append(f"mean,{self.mean_psnr:.6f},{self.mean_ssim:.6f}")
        return "\n".join(rows) + "\n"


def evaluate(cloud: GaussianCloud, scene, view_dependent: bool = True, sh_degree: int = 3) -> EvalTable:
    """PSNR and SSIM of ``cloud`` on every test view of ``scene``."""
    if not scene.test_cams:
        raise ValueError("scene has no test views")
    ps, ss = [], []
    for cam, target in zip(scene.test_cams, scene.test_images):
        img = render(cloud, cam, scene.background, sh_degree, view_dependent=view_dependent).image
        ps.append(psnr(img, target))
        ss.append(ssim(img, target))
    return EvalTable([c.id for c in scene.test_cams], np.array(ps), np.array(ss))
