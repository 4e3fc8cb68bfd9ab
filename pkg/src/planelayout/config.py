"""Runtime configuration with the published hyperparameter defaults.

All knobs live in one dataclass, overridable from an INI file and from
CLI flags.  Sections: [loss], [cluster], [ransac], [camera].
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from .losses import LossConfig


@dataclass(frozen=True)
class PipelineConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    bandwidth: float = 0.3
    min_fraction: float = 0.01
    mean_shift_seeds: int = 2000
    ransac_iters: int = 500
    ransac_tol: float = 1e-3
    consensus_floor: float = 0.5
    width: int = 64
    height: int = 64
    focal: float = 0.0  # 0 means "derive from width"

    def camera(self):
        from .geometry import CameraIntrinsics

        f = self.focal if self.focal > 0 else 0.9375 * self.width
        return CameraIntrinsics(fx=f, fy=f, u0=(self.width - 1) / 2.0,
                                v0=(self.height - 1) / 2.0,
                                width=self.width, height=self.height)


def load_config(path: str | None = None, **overrides) -> PipelineConfig:
    """Build a config from defaults, an optional INI file, and overrides."""
    cfg = PipelineConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        loss_kwargs = {}
        if parser.has_section("loss"):
            for key in ("delta_v", "delta_d", "k", "alpha", "beta",
                        "eta", "theta"):
                if parser.has_option("loss", key):
                    loss_kwargs[key] = parser.getfloat("loss", key)
        kwargs = {}
        if parser.has_section("cluster"):
            for key, get in (("bandwidth", parser.getfloat),
                             ("min_fraction", parser.getfloat),
                             ("mean_shift_seeds", parser.getint)):
                if parser.has_option("cluster", key):
                    kwargs[key] = get("cluster", key)
        if parser.has_section("ransac"):
            for key, get in (("ransac_iters", parser.getint),
                             ("ransac_tol", parser.getfloat),
                             ("consensus_floor", parser.getfloat)):
                ini_key = key.replace("ransac_", "")
                if parser.has_option("ransac", ini_key):
                    kwargs[key] = get("ransac", ini_key)
        if parser.has_section("camera"):
            for key, get in (("width", parser.getint),
                             ("height", parser.getint),
                             ("focal", parser.getfloat)):
                if parser.has_option("camera", key):
                    kwargs[key] = get("camera", key)
        cfg = replace(cfg, loss=LossConfig(**loss_kwargs), **kwargs)
    clean = {k: v for k, v in overrides.items() if v is not None}
    if clean:
        cfg = replace(cfg, **clean)
    return cfg
