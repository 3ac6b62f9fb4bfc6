"""Training configuration and its key=value text form."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

VARIANTS = ("baseline", "vod-s", "vod-l")
VC_MODES = ("off", "uniform", "matches")


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run.

    Defaults follow the usual Gaussian-splatting schedule scaled to small
    scenes.  ``lr_position_*`` are multiplied by the scene extent.
    ``vod_lr_factor`` scales both the ``gamma`` and the ``S_hat`` rate
    for the view-dependent variants; ``reduce_gamma_lr=False`` keeps the
    full ``gamma`` rate there.
    """

    iterations: int = 7000
    lam_dssim: float = 0.2
    lr_position_init: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_position_steps: int = 0  # 0: decay over ``iterations``
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_sh: float = 2.5e-3
    sh_rest_divisor: float = 20.0
    lr_gamma: float = 5e-2
    vod_lr_factor: float = 0.25
    reduce_gamma_lr: bool = True
    variant: str = "baseline"
    vc: str = "off"
    vc_visible_only: bool = False
    omega_grad: bool = True
    seed: int = 0
    tile_size: int = 16
    background: tuple = (0.0, 0.0, 0.0)
    densify_from: int = 500
    densify_until: int = 15000
    densify_interval: int = 100
    grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    max_gaussians: int = 5000
    opacity_reset_interval: int = 3000
    reset_alpha: float = 0.01
    prune_tau: float = 0.005
    max_screen_radius: float = 20.0
    max_world_scale_frac: float = 0.1
    sh_degree_interval: int = 1000
    max_sh_degree: int = 3
    log_interval: int = 100
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.vc not in VC_MODES:
            raise ValueError(f"vc must be one of {VC_MODES}, got {self.vc!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 <= self.lam_dssim <= 1.0:
            raise ValueError("lam_dssim must lie in [0, 1]")
        for name in ("lr_position_init", "lr_position_final", "lr_scale", "lr_rotation", "lr_sh", "lr_gamma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.vod_lr_factor < 0 or self.sh_rest_divisor <= 0:
            raise ValueError("vod_lr_factor must be >= 0 and sh_rest_divisor > 0")
        for name in ("densify_interval", "opacity_reset_interval", "sh_degree_interval", "log_interval", "tile_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if len(self.background) != 3:
            raise ValueError("background needs three components")
        if not 0 <= self.max_sh_degree <= 3:
            raise ValueError("max_sh_degree must lie in [0, 3]")

    @property
    def view_dependent(self) -> bool:
        return self.variant != "baseline"

    @property
    def reset_variant(self) -> str | None:
        return {"baseline": None, "vod-s": "S", "vod-l": "L"}[self.variant]

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind, raw: str):
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if kind is tuple:
        parts = [p for p in raw.replace(",", " ").split() if p]
        return tuple(float(p) for p in parts)
    return kind(raw)


_TYPES = {f.name: type(f.default) for f in fields(TrainConfig)}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into typed overrides.

    Blank lines and ``#`` comments are ignored; unknown or repeated keys
    and malformed lines are errors naming the line number.
    """
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key = value")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _TYPES:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = _coerce(key, _TYPES[key], raw)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, tuple):
            v = ", ".join(repr(float(x)) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path, **overrides) -> TrainConfig:
    """Read a config file; keyword ``overrides`` win over file values."""
    with open(path) as fh:
        values = parse_config(fh.read(), str(path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def save_config(path, cfg: TrainConfig) -> None:
    with open(path, "w") as fh:
        fh.write(format_config(cfg))
