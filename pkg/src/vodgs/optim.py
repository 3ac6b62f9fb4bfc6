"""Adam with per-group learning rates, kept row-aligned with a Gaussian cloud."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from vodgs.model import PARAM_NAMES, GaussianCloud

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-15

# optimizer groups: the SH array is split into its degree-0 band and the rest
GROUPS = ("means", "log_scales", "rotations", "sh_dc", "sh_rest", "gamma", "s_hat")


def _view(arrays: dict[str, np.ndarray], group: str) -> np.ndarray:
    if group == "sh_dc":
        return arrays["sh"][:, :1]
    if group == "sh_rest":
        return arrays["sh"][:, 1:]
    return arrays[group]


@dataclass
class AdamState:
    """First and second moments shaped like the cloud, plus the step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS
    frozen: set = field(default_factory=set)

    @classmethod
    def for_cloud(cls, cloud: GaussianCloud, **kw) -> "AdamState":
        zeros = {k: np.zeros(v.shape) for k, v in cloud.params().items()}
        return cls(zeros, {k: np.zeros(v.shape) for k, v in cloud.params().items()}, **kw)

    def __len__(self):
        return len(self.m["means"])

    def update(self, cloud: GaussianCloud, grads, lrs: dict[str, float]) -> None:
        """One Adam step applied in place to ``cloud``.

        ``grads`` maps parameter names to arrays shaped like the cloud;
        ``lrs`` maps every group in :data:`GROUPS` to a learning rate.
        Groups in ``frozen`` or with a zero rate are left untouched.
        """
        if len(self) != len(cloud):
            raise ValueError(f"optimizer tracks {len(self)} Gaussians, cloud has {len(cloud)}")
        self.step += 1
        bc1 = 1.0 - self.beta1**self.step
        bc2 = 1.0 - self.beta2**self.step
        params = cloud.params()
        for group in GROUPS:
            lr = lrs[group]
            if group in self.frozen or lr == 0.0:
                continue
            g = _view(grads, group)
            m = _view(self.m, group)
            v = _view(self.v, group)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p = _view(params, group)
            step = (lr / bc1) * m / (np.sqrt(v) / np.sqrt(bc2) + self.eps)
            p[...] = (p.astype(np.float64) - step).astype(p.dtype)

    def select(self, keep) -> None:
        """Keep only the rows selected by ``keep`` (mask or indices)."""
        for d in (self.m, self.v):
            for k in PARAM_NAMES:
                d[k] = np.ascontiguousarray(d[k][keep])

    def append(self, n: int) -> None:
        """Add ``n`` rows with zero moments for freshly created Gaussians."""
        for d in (self.m, self.v):
            for k in PARAM_NAMES:
                d[k] = np.concatenate([d[k], np.zeros((n,) + d[k].shape[1:])])

    def zero_rows(self, name: str, rows=slice(None)) -> None:
        self.m[name][rows] = 0.0
        self.v[name][rows] = 0.0

    def state_dict(self) -> dict:
        out = {"step": np.array(self.step)}
        for k in PARAM_NAMES:
            out[f"m_{k}"] = self.m[k]
            out[f"v_{k}"] = self.v[k]
        return out

    @classmethod
    def from_state_dict(cls, d) -> "AdamState":
        return cls(
            {k: np.array(d[f"m_{k}"], dtype=np.float64) for k in PARAM_NAMES},
            {k: np.array(d[f"v_{k}"], dtype=np.float64) for k in PARAM_NAMES},
            step=int(d["step"]),
        )


def exponential_decay(lr_init: float, lr_final: float, step: int, max_steps: int) -> float:
    """Log-linear interpolation from ``lr_init`` to ``lr_final`` over ``max_steps``."""
    if max_steps <= 0:
        return lr_init
    t = min(max(step / max_steps, 0.0), 1.0)
    return float(np.exp(np.log(lr_init) * (1 - t) + np.log(lr_final) * t))
