"""Train-and-evaluate runs on the synthetic dataset.

One :class:`Experiment` names a model variant, a training mode and the
hyperparameters; :func:`run_experiment` trains it on a generated dataset and
returns the trained model, its report and test metrics. The CLI and the
acceptance tests both go through here.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import SyntheticDataset, SyntheticSpec, add_gaussian_noise, stack, synthetic_splits
from .gca import AttentionConfig, ModelConfig
from .models import build_model
from .numerics import ContractError, RngStream
from .trainer import TrainConfig, attention_quality, evaluate, train_direct, train_stepwise

MODES = ("direct", "stepwise")


@dataclass
class Experiment:
    variant: str = "gca"
    mode: str = "stepwise"
    seed: int = 0
    model: dict = field(default_factory=dict)
    attention: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def model_config(self, n_joints, n_frames, n_classes, partition) -> ModelConfig:
        unknown = sorted(set(self.model) - set(ModelConfig.__dataclass_fields__) | set(self.attention)
                         - set(AttentionConfig.__dataclass_fields__))
        if unknown:
            raise ContractError(f"unknown model settings: {unknown}")
        kw = dict(self.model)
        kw.update(variant=self.variant, n_joints=n_joints, n_frames=n_frames, n_classes=n_classes,
                  seed=self.seed, attention=AttentionConfig(**self.attention))
        if self.variant in ("two_stream", "coarse"):
            kw.setdefault("partition", partition)
        return ModelConfig(**kw).validate()

    def train_config(self) -> TrainConfig:
        kw = dict(self.train)
        kw.setdefault("seed", self.seed)
        return TrainConfig(**kw).validate()

    def validate(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.train_config()
        AttentionConfig(**self.attention).validate()
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class SplitData:
    train: tuple
    validation: tuple
    test: tuple
    test_sequences: list
    informative: dict
    partition: list

    @property
    def shape(self):
        _, J, T, _ = self.train[0].shape
        return J, T


def prepare_data(spec: SyntheticSpec) -> tuple[SyntheticDataset, SplitData]:
    ds, (tr, va, te) = synthetic_splits(spec)
    return ds, SplitData(stack(tr), stack(va), stack(te), te, ds.informative, ds.partition.parts)


def build_for(exp: Experiment, data: SplitData, n_classes: int):
    J, T = data.shape
    model = build_model(exp.model_config(J, T, n_classes, data.partition))
    model.fit_input_normalization(data.train[0])
    return model


def train_model(model, exp: Experiment, data: SplitData):
    fn = train_stepwise if exp.mode == "stepwise" else train_direct
    report = fn(model, data.train, data.validation, exp.train_config())
    report.test_accuracy = evaluate(model, data.test).accuracy
    return report


@dataclass
class ExperimentResult:
    experiment: Experiment
    model: object
    report: object
    test_accuracy: float


def run_experiment(exp: Experiment, spec: SyntheticSpec | None = None, data: SplitData | None = None):
    exp.validate()
    spec = spec or SyntheticSpec()
    if data is None:
        _, data = prepare_data(spec)
    model = build_for(exp, data, spec.n_classes)
    report = train_model(model, exp, data)
    return ExperimentResult(exp, model, report, report.test_accuracy)


def noise_sweep(model, sequences, sigmas, seed=0):
    """Test accuracy with Gaussian noise of each ``sigma`` (metres) added to the coordinates."""
    out = {}
    for sigma in sigmas:
        rng = RngStream(seed, f"noise-{sigma!r}")
        noisy = [add_gaussian_noise(s, sigma, rng) for s in sequences]
        out[float(sigma)] = evaluate(model, noisy).accuracy
    return out


def iteration_quality(model, sequences, informative, stream="fine", batch_size=128):
    """Mean attention quality of each iteration's joint-level map over ``sequences``."""
    X, y = stack(sequences)
    per_iter = None
    for s in range(0, len(y), batch_size):
        maps = model.attention_maps(model.forward(X[s:s + batch_size]))[stream]
        truth = [informative[int(label)] for label in y[s:s + batch_size]]
        scores = [attention_quality(m, truth) * len(truth) for m in maps]
        per_iter = scores if per_iter is None else [a + b for a, b in zip(per_iter, scores)]
    return [v / len(y) for v in per_iter]


def informative_fraction(informative, labels, n_joints):
    """Attention quality of a uniform map, averaged over the labels."""
    return float(np.mean([len(informative[int(label)]) / n_joints for label in labels]))


# Hyperparameters for the desk-scale runs on the default synthetic dataset.
# Smaller than the full-size defaults so one run fits in a few CPU minutes.
DESK_MODEL = {"hidden": 16, "dropout": 0.0}
DESK_ATTENTION = {"score_hidden_dim": 16, "init_mode": "average"}
DESK_TRAIN = {"learning_rate": 0.1, "decay_rate": 0.98, "batch_size": 16, "max_epochs": 40,
              "max_epochs_per_step": 25, "patience": 10}


def desk_experiment(variant="gca", seed=0, mode="stepwise", n_iterations=2) -> Experiment:
    return Experiment(variant=variant, mode=mode, seed=seed, model=dict(DESK_MODEL),
                      attention={**DESK_ATTENTION, "n_iterations": n_iterations}, train=dict(DESK_TRAIN))
