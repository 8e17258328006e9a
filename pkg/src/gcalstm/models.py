from __future__ import annotations

from .gca import BaselineGlobal, GCAModel, ModelConfig
from .twostream import TwoStreamModel


def build_model(cfg: ModelConfig):
    """Instantiate the network named by ``cfg.variant``."""
    cfg.validate()
    if cfg.variant == "gca":
        return GCAModel(cfg)
    if cfg.variant == "two_stream":
        return TwoStreamModel(cfg, ("fine", "coarse"))
    if cfg.variant == "coarse":
        return TwoStreamModel(cfg, ("coarse",))
    if cfg.variant == "baseline_global_1":
        return BaselineGlobal(cfg, "concat")
    return BaselineGlobal(cfg, "average")
