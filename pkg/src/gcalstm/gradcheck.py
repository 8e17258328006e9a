"""Finite-difference gradient checks of whole networks on toy problems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gca import AttentionConfig, ModelConfig
from .models import build_model
from .numerics import ContractError, GradCheckReport, RngStream, finite_diff_check

GUARD = 10_000
CHECK_VARIANTS = ("baseline_global_1", "baseline_global_2", "gca", "two_stream")


@dataclass
class ToySpec:
    n_joints: int = 4
    n_frames: int = 5
    hidden: int = 8
    score_hidden_dim: int = 8
    n_classes: int = 3
    batch: int = 2
    n_iterations: int = 2
    seed: int = 0

    def validate(self):
        size = self.n_joints * self.n_frames * self.hidden
        if size > GUARD:
            raise ContractError(f"gradient check refused: J*T*d = {size} exceeds {GUARD}")
        return self


def toy_partition(n_joints):
    """Five parts over ``n_joints`` >= 5 joints, the first absorbing any surplus."""
    if n_joints < 5:
        raise ContractError(f"a five-part partition needs at least 5 joints, got {n_joints}")
    extra = n_joints - 5
    return [list(range(extra + 1))] + [[extra + k] for k in range(1, 5)]


def toy_model(variant, toy: ToySpec, **attention):
    J = toy.n_joints
    partition = None
    if variant in ("two_stream", "coarse"):
        # the coarse stream needs five non-empty parts
        J = max(J, 5)
        partition = toy_partition(J)
    cfg = ModelConfig(variant=variant, n_joints=J, n_frames=toy.n_frames, n_classes=toy.n_classes,
                      hidden=toy.hidden, dropout=0.0, partition=partition, seed=toy.seed,
                      attention=AttentionConfig(n_iterations=toy.n_iterations,
                                                score_hidden_dim=toy.score_hidden_dim, **attention))
    return build_model(cfg)


def check_variant(variant, toy: ToySpec | None = None, eps=1e-5, tol=1e-4, max_per_param=None,
                  inject_bug=False, **attention) -> GradCheckReport:
    """Gradient check of one variant's full loss in evaluation mode.

    ``inject_bug`` doubles every analytic gradient (a negative control that
    must fail).
    """
    toy = (toy or ToySpec()).validate()
    model = toy_model(variant, toy, **attention)
    rng = RngStream(toy.seed, "gradcheck-data")
    J = model.cfg.n_joints
    X = rng.normal(size=(toy.batch, J, toy.n_frames, 3))
    y = rng.integers(toy.n_classes, size=toy.batch)

    def loss_fn():
        model.store.zero_grad()
        loss, _ = model.loss_and_grad(X, y)
        if inject_bug:
            for p in model.store:
                p.grad *= 2.0
        return loss

    return finite_diff_check(loss_fn, model.store, eps=eps, tol=tol, max_per_param=max_per_param,
                             rng=rng.fork("probe"))


def group_errors(report: GradCheckReport):
    """Worst relative error per parameter group (name up to the last dot)."""
    groups = {}
    for name, err in report.per_param.items():
        g = name.rsplit(".", 1)[0]
        groups[g] = max(groups.get(g, 0.0), err)
    return groups
