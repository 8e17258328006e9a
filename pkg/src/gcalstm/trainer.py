"""Loss, evaluation and the direct / stepwise training loops."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import stack
from .numerics import ContractError, NonFiniteError, RngStream, sgd_step


@dataclass
class TrainConfig:
    learning_rate: float = 1.5e-3
    decay_rate: float = 0.95
    momentum: float = 0.9
    batch_size: int = 16
    max_epochs: int = 50
    max_epochs_per_step: int = 20
    patience: int = 3
    clip_norm: float = 5.0
    monitor: str = "loss"
    seed: int = 0

    def validate(self):
        if self.learning_rate < 0:
            raise ContractError("learning_rate must be >= 0")
        if not 0 < self.decay_rate <= 1:
            raise ContractError("decay_rate must lie in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ContractError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.max_epochs_per_step < 1:
            raise ContractError("batch_size and epoch budgets must be >= 1")
        if self.patience < 1:
            raise ContractError("patience must be >= 1")
        if self.monitor not in ("loss", "error"):
            raise ContractError("monitor must be 'loss' or 'error'")
        return self


@dataclass
class EpochRecord:
    epoch: int
    step: int
    learning_rate: float
    train_loss: float
    val_loss: float
    val_accuracy: float
    seconds: float = 0.0


@dataclass
class TrainReport:
    mode: str
    epochs: list = field(default_factory=list)
    step_boundaries: list = field(default_factory=list)
    best_val_loss: float = float("inf")
    test_accuracy: float | None = None
    diverged: bool = False

    def val_losses(self):
        return [e.val_loss for e in self.epochs]

    def to_jsonl(self, timing=False):
        """One JSON record per epoch, then a summary record.

        Wall-clock seconds are left out unless ``timing`` is set so the file
        is a deterministic function of data, config and seed.
        """
        lines = []
        for e in self.epochs:
            rec = asdict(e)
            if not timing:
                rec.pop("seconds")
            lines.append(json.dumps(rec))
        lines.append(json.dumps({"summary": True, "mode": self.mode,
                                 "step_boundaries": self.step_boundaries,
                                 "best_val_loss": self.best_val_loss,
                                 "test_accuracy": self.test_accuracy,
                                 "diverged": self.diverged}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        report = cls(mode="")
        for line in text.splitlines():
            rec = json.loads(line)
            if rec.get("summary"):
                report.mode = rec["mode"]
                report.step_boundaries = rec["step_boundaries"]
                report.best_val_loss = rec["best_val_loss"]
                report.test_accuracy = rec["test_accuracy"]
                report.diverged = rec["diverged"]
            else:
                report.epochs.append(EpochRecord(**rec))
        return report


class TrainingDiverged(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


def nll_loss(posterior, label):
    posterior = np.asarray(posterior, dtype=np.float64)
    if not 0 <= label < len(posterior):
        raise ContractError(f"label {label} outside 0..{len(posterior) - 1}")
    return float(-np.log(max(posterior[label], 1e-12)))


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    mean_loss: float
    posteriors: np.ndarray


def _as_arrays(data):
    if isinstance(data, tuple):
        return data
    return stack(data)


def evaluate(model, data, upto=None, batch_size=128) -> EvalResult:
    """Accuracy, confusion matrix (rows = true class) and mean loss, dropout off."""
    X, y = _as_arrays(data)
    if len(y) == 0:
        raise ContractError("cannot evaluate an empty set")
    C = model.cfg.n_classes
    posts, losses = [], []
    for s in range(0, len(y), batch_size):
        npass = model.forward(X[s:s + batch_size], train=False, upto=upto)
        posts.append(npass.posterior)
        losses.append(model.objective(npass, y[s:s + batch_size]))
    post = np.concatenate(posts)
    pred = np.argmax(post, axis=1)
    confusion = np.zeros((C, C), dtype=int)
    np.add.at(confusion, (y, pred), 1)
    return EvalResult(float(np.mean(pred == y)), confusion, float(np.mean(np.concatenate(losses))), post)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    return cfg.learning_rate * cfg.decay_rate ** epoch


def _run_epoch(model, X, y, cfg, epoch, upto, rng):
    order = rng.fork(f"shuffle{epoch}").permutation(len(y))
    drop = rng.fork(f"dropout{epoch}")
    lr = learning_rate(cfg, epoch)
    total = 0.0
    for s in range(0, len(y), cfg.batch_size):
        idx = order[s:s + cfg.batch_size]
        model.store.zero_grad()
        loss, _ = model.loss_and_grad(X[idx], y[idx], train=True, rng=drop, upto=upto)
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite training loss at epoch {epoch}")
        model.store.clip_grad_norm(cfg.clip_norm)
        sgd_step(model.store, lr, cfg.momentum)
        total += loss * len(idx)
    return total / len(y), lr


def _score(ev: EvalResult, monitor):
    return ev.mean_loss if monitor == "loss" else 1.0 - ev.accuracy


def _train_phase(model, train, val, cfg, report, rng, step, upto, budget, epoch0):
    """Epochs until patience runs out; restores the best weights seen."""
    X, y = train
    best_score, best_values, stale = float("inf"), model.store.values(), 0
    epoch = epoch0
    for _ in range(budget):
        tic = time.perf_counter()
        try:
            train_loss, lr = _run_epoch(model, X, y, cfg, epoch, upto, rng)
        except NonFiniteError as exc:
            report.diverged = True
            raise TrainingDiverged(str(exc), report) from None
        ev = evaluate(model, val, upto=upto)
        report.epochs.append(EpochRecord(epoch, step, lr, train_loss, ev.mean_loss, ev.accuracy,
                                         time.perf_counter() - tic))
        epoch += 1
        score = _score(ev, cfg.monitor)
        if score < best_score:
            best_score, best_values, stale = score, model.store.values(), 0
            report.best_val_loss = ev.mean_loss
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.store.load_values(best_values)
    return epoch


def train_direct(model, train, val, cfg: TrainConfig) -> TrainReport:
    """Supervise only the final posterior and train every parameter together."""
    cfg.validate()
    train, val = _as_arrays(train), _as_arrays(val)
    report = TrainReport("direct", step_boundaries=[0])
    model.store.set_training_step(None)
    model.store.reset_momentum()
    rng = RngStream(cfg.seed, "train")
    _train_phase(model, train, val, cfg, report, rng, model.n_steps, None, cfg.max_epochs, 0)
    return report


def train_stepwise(model, train, val, cfg: TrainConfig) -> TrainReport:
    """Step n supervises the posterior from context IF(n) and trains only the
    parameters used by iterations 0..n; later ones stay frozen."""
    cfg.validate()
    train, val = _as_arrays(train), _as_arrays(val)
    report = TrainReport("stepwise")
    rng = RngStream(cfg.seed, "train")
    epoch = 0
    try:
        for step in range(model.n_steps + 1):
            report.step_boundaries.append(epoch)
            model.store.set_training_step(step)
            model.store.reset_momentum()
            report.best_val_loss = float("inf")
            epoch = _train_phase(model, train, val, cfg, report, rng, step, step, cfg.max_epochs_per_step, epoch)
    finally:
        model.store.set_training_step(None)
    return report


def attention_quality(attn_map, informative):
    """Mean over frames of the share of a frame's attention on ``informative``.

    ``attn_map`` is a (J, T) grid (or a stack (B, J, T), with ``informative`` a
    list of joint lists, one per sample); the result lies in [0, 1].
    """
    attn_map = np.asarray(attn_map, dtype=np.float64)
    if attn_map.ndim == 3:
        if len(informative) != attn_map.shape[0]:
            raise ContractError("need one informative set per map")
        return float(np.mean([attention_quality(m, inf) for m, inf in zip(attn_map, informative)]))
    if attn_map.ndim != 2:
        raise ContractError(f"attention map must be (J, T), got {attn_map.shape}")
    idx = list(informative)
    if not idx or max(idx) >= attn_map.shape[0] or min(idx) < 0:
        raise ContractError(f"informative joints {idx} do not fit a map with {attn_map.shape[0]} rows")
    per_frame = attn_map.sum(axis=0)
    return float(np.mean(attn_map[idx].sum(axis=0) / per_frame))


def epochs_to_reach(val_losses, target):
    """1-based count of epochs until the loss first reaches ``target`` (inf if never)."""
    for k, v in enumerate(val_losses, 1):
        if v <= target:
            return k
    return float("inf")
