"""scikit-learn style front end: ``fit`` on a scene, ``predict`` images for cameras."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from vodgs.config import TrainConfig
from vodgs.rasterizer import render
from vodgs.trainer import evaluate, train
from vodgs.validation import check_cameras, check_scene


class GaussianSplatRegressor(BaseEstimator):
    """Fit a Gaussian cloud to posed images.

    Parameters
    ----------
    variant : {"baseline", "vod-s", "vod-l"}
        Scalar opacity, or view-dependent opacity with the smallest or
        largest eigenvalue kept at opacity resets.
    vc : {"off", "uniform", "matches"}
        View-consistency term and how the partner view is drawn.
    iterations, seed, max_gaussians : int
    config : TrainConfig, optional
        Base configuration; the explicit parameters above override it.

    Attributes
    ----------
    cloud_ : GaussianCloud
    history_ : list of dict
    config_ : TrainConfig
    """

    def __init__(self, variant="vod-s", vc="matches", iterations=7000, seed=0, max_gaussians=5000, config=None):
        self.variant = variant
        self.vc = vc
        self.iterations = iterations
        self.seed = seed
        self.max_gaussians = max_gaussians
        self.config = config

    def _make_config(self) -> TrainConfig:
        base = self.config if self.config is not None else TrainConfig()
        return base.with_(variant=self.variant, vc=self.vc, iterations=self.iterations, seed=self.seed,
                          max_gaussians=self.max_gaussians)

    def fit(self, X, y=None):
        """Train on ``X``, a scene with training cameras and images; ``y`` is unused."""
        check_scene(X, need_matches=self.vc == "matches")
        cfg = self._make_config()
        result = train(cfg, X)
        self.cloud_ = result.cloud
        self.history_ = result.history
        self.config_ = cfg
        self.n_gaussians_ = len(result.cloud)
        return self

    def predict(self, X):
        """Render one image per camera in ``X``; returns ``(n, H, W, 3)``."""
        check_is_fitted(self, "cloud_")
        cams = check_cameras(X)
        cfg = self.config_
        imgs = [render(self.cloud_, c, cfg.background, cfg.max_sh_degree, cfg.tile_size, cfg.view_dependent).image
                for c in cams]
        return np.stack(imgs).astype(np.float64)

    def score(self, X, y=None) -> float:
        """Mean test-view PSNR on scene ``X``."""
        check_is_fitted(self, "cloud_")
        check_scene(X, need_test=True)
        return evaluate(self.cloud_, X, view_dependent=self.config_.view_dependent).mean_psnr
