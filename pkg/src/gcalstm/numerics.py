"""Dense numeric primitives shared by every layer of the network.

Everything runs in float64. Weight matrices follow the ``y = x @ W.T + b``
convention, so a map from ``n_in`` to ``n_out`` features stores ``W`` with
shape ``(n_out, n_in)`` and accepts inputs with arbitrary leading axes.
"""
from __future__ import annotations

import zlib
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class RngStream:
    """Seeded random stream with named, reproducible sub-streams.

    ``position`` counts the draws made so far; two streams built from the same
    seed and queried with the same call sequence return identical values.
    """

    def __init__(self, seed: int, key: str = ""):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.key = key
        entropy = [self.seed, zlib.crc32(key.encode("utf-8"))]
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
        self.position = 0

    def fork(self, key: str) -> "RngStream":
        """Independent stream whose identity depends only on (seed, key)."""
        return RngStream(self.seed, f"{self.key}/{key}")

    def uniform(self, low=0.0, high=1.0, size=None):
        self.position += 1
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        self.position += 1
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        self.position += 1
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        self.position += 1
        return self.generator.permutation(n)

    def random(self, size=None):
        self.position += 1
        return self.generator.random(size)


@dataclass(eq=False)
class ParamTensor:
    """A learnable array with its gradient accumulator and momentum buffer.

    ``step`` is the first stepwise-training step in which the tensor takes
    part; tensors with ``step > current_step`` stay frozen.
    """

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)
    momentum: np.ndarray = field(default=None, repr=False)
    step: int = 0
    trainable: bool = True

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=DTYPE)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.momentum is None:
            self.momentum = np.zeros_like(self.value)
        if not (self.grad.shape == self.momentum.shape == self.value.shape):
            raise ShapeError(f"{self.name}: value/grad/momentum shapes differ")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


def init_weight(rng: RngStream, shape, fan_in: int, scheme: str = "uniform", gaussian_std=None):
    """Uniform in +-1/sqrt(fan_in), or zero-mean Gaussian.

    The Gaussian family defaults to std 1/sqrt(fan_in) unless ``gaussian_std``
    is given.
    """
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    if scheme == "uniform":
        return rng.uniform(-bound, bound, size=shape)
    if scheme == "gaussian":
        std = bound if gaussian_std is None else gaussian_std
        return rng.normal(0.0, std, size=shape)
    raise ContractError(f"unknown init scheme {scheme!r}")


class ParamStore:
    """Ordered collection of ParamTensors addressable by name.

    A tensor may be registered under several aliases (used for weights shared
    across attention iterations); it is stored, updated and saved once.
    """

    def __init__(self, rng: RngStream | None = None, init: str = "uniform", gaussian_std=None):
        self._tensors: "OrderedDict[str, ParamTensor]" = OrderedDict()
        self._aliases: dict[str, str] = {}
        self.rng = rng if rng is not None else RngStream(0)
        self.init = init
        self.gaussian_std = gaussian_std

    def add(self, name, shape, fan_in=None, step=0, zero=False) -> ParamTensor:
        if name in self._tensors or name in self._aliases:
            raise ContractError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if zero:
            value = np.zeros(shape, dtype=DTYPE)
        else:
            fan_in = shape[-1] if fan_in is None else fan_in
            value = init_weight(self.rng.fork(name), shape, fan_in, self.init, self.gaussian_std)
        tensor = ParamTensor(name, value, step=step)
        self._tensors[name] = tensor
        return tensor

    def alias(self, alias_name: str, target: str) -> ParamTensor:
        if alias_name in self._tensors or alias_name in self._aliases:
            raise ContractError(f"duplicate parameter name {alias_name!r}")
        self._aliases[alias_name] = self._canonical(target)
        return self[target]

    def _canonical(self, name):
        return self._aliases.get(name, name)

    def __getitem__(self, name) -> ParamTensor:
        try:
            return self._tensors[self._canonical(name)]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name):
        return self._canonical(name) in self._tensors

    def __iter__(self):
        return iter(self._tensors.values())

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def zero_grad(self):
        for p in self:
            p.zero_grad()

    def reset_momentum(self):
        for p in self:
            p.momentum.fill(0.0)

    def set_training_step(self, step: int | None):
        """Flag tensors used up to ``step`` as trainable (``None`` = all)."""
        for p in self:
            p.trainable = step is None or p.step <= step

    def grad_norm(self, only_trainable=True) -> float:
        total = 0.0
        for p in self:
            if p.trainable or not only_trainable:
                total += float(np.sum(p.grad * p.grad))
        return float(np.sqrt(total))

    def clip_grad_norm(self, max_norm):
        if max_norm is None or max_norm <= 0:
            return self.grad_norm()
        norm = self.grad_norm()
        if norm > max_norm:
            scale = max_norm / norm
            for p in self:
                if p.trainable:
                    p.grad *= scale
        return norm

    def values(self) -> dict:
        return {name: p.value.copy() for name, p in self._tensors.items()}

    def load_values(self, values: dict):
        for name, v in values.items():
            p = self[name]
            if p.shape != v.shape:
                raise ShapeError(f"{name}: expected shape {p.shape}, got {v.shape}")
            p.value[...] = v

    def assert_finite(self):
        for p in self:
            if not np.all(np.isfinite(p.value)):
                raise NonFiniteError(f"non-finite value in parameter {p.name}")


def _value(a):
    return a.value if isinstance(a, ParamTensor) else np.asarray(a, dtype=DTYPE)


def affine(W, b, x):
    """``W x + b`` applied over the last axis of ``x``."""
    Wv, bv, x = _value(W), _value(b), np.asarray(x, dtype=DTYPE)
    if Wv.ndim != 2 or x.shape[-1] != Wv.shape[1] or bv.shape != (Wv.shape[0],):
        raise ShapeError(f"affine: W {Wv.shape}, b {bv.shape} and x {x.shape} are incompatible")
    return x @ Wv.T + bv


def sigmoid(x):
    # tanh form cannot overflow and is much faster than expit on strided views
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=DTYPE)))


def tanh_act(x):
    return np.tanh(np.asarray(x, dtype=DTYPE))


def relu(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=DTYPE)
    z = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def softmax_flat(scores):
    """Stable softmax over a flat list of scores."""
    scores = np.asarray(scores, dtype=DTYPE).ravel()
    if scores.size == 0:
        raise ContractError("softmax_flat needs at least one score")
    if not np.all(np.isfinite(scores)):
        raise ContractError("softmax_flat got non-finite scores")
    return softmax(scores)


def softmax_backward(probs, dprobs, axis=-1):
    return probs * (dprobs - np.sum(dprobs * probs, axis=axis, keepdims=True))


def dropout_mask(shape, p_drop: float, rng: RngStream | None, train: bool = True):
    """Inverted-dropout mask: 0 with prob ``p_drop`` else ``1/(1-p_drop)``."""
    if not 0.0 <= p_drop < 1.0:
        raise ContractError(f"dropout probability must lie in [0, 1), got {p_drop}")
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    if not train or p_drop == 0.0:
        return np.ones(shape, dtype=DTYPE)
    keep = rng.random(shape) >= p_drop
    return keep.astype(DTYPE) / (1.0 - p_drop)


def sgd_step(params: ParamStore, lr: float, momentum: float):
    """Momentum SGD on every trainable tensor: m <- mu*m + g; w <- w - lr*m."""
    for p in params:
        if not p.trainable:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient in parameter {p.name}")
    for p in params:
        if not p.trainable:
            continue
        p.momentum *= momentum
        p.momentum += p.grad
        if lr != 0.0:
            p.value -= lr * p.momentum


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_param: dict
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def finite_diff_check(loss_fn, params: ParamStore, eps=1e-5, tol=1e-4, max_per_param=None,
                      rng: RngStream | None = None, floor=1e-6, analytic=None):
    """Compare analytic gradients with central differences.

    ``loss_fn()`` must return the scalar loss and leave the analytic gradient
    in each tensor's ``.grad``; it is called once at the base point, then twice
    per probed coordinate. ``analytic`` optionally overrides the gradient
    arrays (negative controls). Relative error uses ``max(|a|, |n|, floor)``.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    params.zero_grad()
    base = loss_fn()
    grads = {p.name: p.grad.copy() for p in params}
    if analytic is not None:
        grads.update({k: np.asarray(v, dtype=DTYPE) for k, v in analytic.items()})
    params.zero_grad()
    again = loss_fn()
    if again != base:
        raise ContractError(f"loss_fn is not deterministic ({base!r} != {again!r})")

    rng = rng if rng is not None else RngStream(0, "gradcheck")
    per_param = {}
    n_checked = 0
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.generator.choice(flat.size, size=max_per_param, replace=False))
        g = grads[p.name].reshape(-1)
        err = 0.0
        for k in idx:
            old = flat[k]
            flat[k] = old + eps
            lp = loss_fn()
            flat[k] = old - eps
            lm = loss_fn()
            flat[k] = old
            num = (lp - lm) / (2 * eps)
            denom = max(abs(num), abs(g[k]), floor)
            err = max(err, abs(num - g[k]) / denom)
            n_checked += 1
        per_param[p.name] = err
        worst = max(worst, err)
    params.zero_grad()
    return GradCheckReport(worst, tol, per_param, n_checked)
