"""Global context-aware attention on top of the ST-LSTM lattice.

A network is a shared first lattice layer followed by one or more attention
streams. Each stream owns a global context memory ``IF``, a gated second
lattice layer, per-iteration refinement maps and a softmax classifier:

    IF0  = init(first-layer hidden grid)
    for n in 1..N:
        e  = W_e1 tanh(W_e2 [h_s ; IF(n-1)])      one score per (unit, frame)
        r  = softmax over every (unit, frame)
        F  = last hidden of the second layer run with gate r
        IF(n) = relu(W_F(n) [F ; IF(n-1)])
    posterior = softmax(W_c IF(N))

A unit is a joint for fine-grained attention or a body part for the coarse
stream (see :mod:`gcalstm.twostream`).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import (DTYPE, ContractError, ParamStore, RngStream, ShapeError, dropout_mask,
                       relu, softmax, softmax_backward)
from .stlstm import LatticeState, STLSTMLayer, anatomical_chain, check_order


@dataclass
class AttentionConfig:
    n_iterations: int = 2
    share_within_iteration: bool = True
    share_across_iterations: bool = False
    attention_mode: str = "gate"
    init_mode: str = "feedforward"
    score_hidden_dim: int = 128

    def validate(self):
        if self.n_iterations < 1:
            raise ContractError("n_iterations must be >= 1")
        if self.score_hidden_dim < 1:
            raise ContractError("score_hidden_dim must be >= 1")
        if self.attention_mode not in ("gate", "soft"):
            raise ContractError(f"attention_mode must be 'gate' or 'soft', got {self.attention_mode!r}")
        if self.init_mode not in ("average", "feedforward"):
            raise ContractError(f"init_mode must be 'average' or 'feedforward', got {self.init_mode!r}")
        return self


VARIANTS = ("gca", "two_stream", "coarse", "baseline_global_1", "baseline_global_2")


@dataclass
class ModelConfig:
    variant: str = "gca"
    n_joints: int = 15
    n_frames: int = 20
    n_classes: int = 8
    d_in: int = 3
    hidden: int = 128
    dropout: float = 0.5
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    joint_order: list | None = None
    partition: list | None = None
    init: str = "uniform"
    init_std: float | None = None
    seed: int = 0

    def validate(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown model variant {self.variant!r}")
        for name in ("n_joints", "n_frames", "d_in", "hidden"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise ContractError("n_classes must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")
        if self.init not in ("uniform", "gaussian"):
            raise ContractError(f"unknown init scheme {self.init!r}")
        self.attention.validate()
        if self.joint_order is not None:
            check_order(self.joint_order, self.n_joints)
        if self.variant in ("two_stream", "coarse"):
            from .twostream import BodyPartition

            if self.partition is None:
                raise ContractError(f"variant {self.variant!r} needs a body partition")
            BodyPartition(self.partition, self.n_joints)
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["attention"] = AttentionConfig(**d.get("attention", {}))
        return cls(**d)


@dataclass
class GlobalContext:
    """Global context memory for a batch: ``value`` is (B, d); ``n`` the iteration."""

    value: np.ndarray
    n: int = 0


def init_global_context_avg(H1):
    """Mean of the first-layer hidden grid (J, T, B, d) -> (B, d)."""
    J, T = H1.shape[:2]
    return H1.sum(axis=(0, 1)) / (J * T)


def flatten_grid(H):
    """(J, T, B, d) -> (B, J*T*d), concatenated in (joint, frame) order."""
    J, T, B, d = H.shape
    return H.transpose(2, 0, 1, 3).reshape(B, J * T * d)


def init_global_context_ffn(W, b, H1):
    """tanh of one affine map over the concatenated first-layer hidden grid."""
    flat = flatten_grid(H1)
    if W.shape[1] != flat.shape[1]:
        raise ShapeError(f"init map expects {W.shape[1]} inputs, grid provides {flat.shape[1]} "
                         f"(J*T*d for grid {H1.shape[:2]})")
    return np.tanh(flat @ W.T + b)


def score_units(We1, be1, We2, be2, Hs, ctx):
    """Raw informativeness scores e for every (unit, frame).

    ``Hs`` is (S, T, B, d) and ``ctx`` (B, d). Shared maps have We2 (de, 2d),
    be2 (de,), We1 (1, de), be1 (1,); per-step maps carry two leading (S, T)
    axes. Returns ``(e, cache)`` with e of shape (S, T, B).
    """
    S, T, B, d = Hs.shape
    if ctx.shape != (B, d):
        raise ShapeError(f"context has shape {ctx.shape}, expected {(B, d)}")
    cat = np.concatenate([Hs, np.broadcast_to(ctx, (S, T, B, d))], axis=-1)
    if We2.ndim == 2:
        if We2.shape[1] != 2 * d:
            raise ShapeError(f"W_e2 has shape {We2.shape}, expected (*, {2 * d})")
        q = np.tanh(np.matmul(cat, We2.T) + be2)
        e = np.matmul(q, We1.T)[..., 0] + be1[0]
    else:
        if We2.shape[:2] != (S, T) or We2.shape[3] != 2 * d:
            raise ShapeError(f"per-step W_e2 has shape {We2.shape}, expected ({S}, {T}, *, {2 * d})")
        q = np.tanh(np.einsum("stbk,stek->stbe", cat, We2) + be2[:, :, None, :])
        e = np.einsum("stbe,ste->stb", q, We1[:, :, 0, :]) + be1[:, :, None, 0]
    return e, (cat, q)


def normalize_scores(e):
    """Softmax of (S, T, B) scores over all (unit, frame) pairs of each sample."""
    S, T, B = e.shape
    return softmax(e.reshape(S * T, B), axis=0).reshape(S, T, B)


def soft_attention_representation(Hs, r):
    """Score-weighted sum of the unit representations: (S, T, B, d) -> (B, d)."""
    if r.shape != Hs.shape[:3]:
        raise ShapeError(f"map shape {r.shape} does not match grid {Hs.shape[:3]}")
    return np.einsum("stb,stbd->bd", r, Hs)


def refine_context(WF, bF, F, ctx):
    cat = np.concatenate([F, ctx], axis=-1)
    pre = cat @ WF.T + bF
    return relu(pre), (cat, pre)


def classify(Wc, bc, ctx):
    logits = ctx @ Wc.T + bc
    return softmax(logits, axis=-1), logits


@dataclass
class StreamPass:
    """Everything one stream computed for a batch; consumed by backward."""

    ctxs: list
    maps: list
    iters: list
    Hs: np.ndarray
    flat: np.ndarray | None
    in_mask: np.ndarray
    ctx_mask: np.ndarray
    logits: np.ndarray
    posterior: np.ndarray


class AttentionStream:
    """One attention stream.

    ``groups`` lists lattice positions per unit; ``None`` means every joint is
    its own unit and no pooling happens (fine-grained attention).
    """

    def __init__(self, store: ParamStore, prefix: str, cfg: AttentionConfig, d: int, n_joints: int,
                 n_frames: int, n_classes: int, groups=None):
        cfg.validate()
        self.cfg = cfg
        self.prefix = prefix
        self.d = d
        self.J = n_joints
        self.T = n_frames
        self.groups = None if groups is None else [np.asarray(g, dtype=int) for g in groups]
        if self.groups is not None:
            self.unit_of = np.empty(n_joints, dtype=int)
            for k, g in enumerate(self.groups):
                self.unit_of[g] = k
        self.S = n_joints if groups is None else len(self.groups)
        N, de = cfg.n_iterations, cfg.score_hidden_dim

        if cfg.attention_mode == "gate":
            self.second = STLSTMLayer(store, f"{prefix}.layer2", d, d, step=1)
        else:
            self.second = None
        if cfg.init_mode == "feedforward":
            self.init_W = store.add(f"{prefix}.init.W", (d, n_joints * n_frames * d))
            self.init_b = store.add(f"{prefix}.init.b", (d,), zero=True)
        else:
            self.init_W = self.init_b = None

        lead = () if cfg.share_within_iteration else (self.S, n_frames)
        self.scores = []
        for n in range(1, N + 1):
            names = [f"{prefix}.score{n}.{k}" for k in ("We1", "be1", "We2", "be2")]
            if cfg.share_across_iterations and n > 1:
                first = [f"{prefix}.score1.{k}" for k in ("We1", "be1", "We2", "be2")]
                self.scores.append(tuple(store.alias(a, t) for a, t in zip(names, first)))
                continue
            step = 1 if cfg.share_across_iterations else n
            self.scores.append((
                store.add(names[0], lead + (1, de), fan_in=de, step=step),
                store.add(names[1], lead + (1,), step=step, zero=True),
                store.add(names[2], lead + (de, 2 * d), fan_in=2 * d, step=step),
                store.add(names[3], lead + (de,), step=step, zero=True),
            ))
        self.refine = [(store.add(f"{prefix}.refine{n}.W", (d, 2 * d), step=n),
                        store.add(f"{prefix}.refine{n}.b", (d,), step=n, zero=True))
                       for n in range(1, N + 1)]
        self.Wc = store.add(f"{prefix}.classifier.W", (n_classes, d))
        self.bc = store.add(f"{prefix}.classifier.b", (n_classes,), zero=True)

    # -- unit pooling -----------------------------------------------------
    def pool(self, H1):
        """(J, T, B, d) lattice grid -> (S, T, B, d) unit representations."""
        if self.groups is None:
            return H1
        return np.stack([H1[g].sum(axis=0) / len(g) for g in self.groups])

    def unpool_grad(self, dHs, out):
        if self.groups is None:
            out += dHs
            return out
        for k, g in enumerate(self.groups):
            out[g] += dHs[k] / len(g)
        return out

    def expand(self, r):
        """(S, T, B) unit map -> (J, T, B) per-joint gate grid."""
        return r if self.groups is None else r[self.unit_of]

    def reduce(self, dr_joint):
        if self.groups is None:
            return dr_joint
        out = np.zeros((self.S,) + dr_joint.shape[1:], dtype=DTYPE)
        np.add.at(out, self.unit_of, dr_joint)
        return out

    # -- the individual stages ---------------------------------------------
    def init_context(self, H1):
        if self.cfg.init_mode == "average":
            return GlobalContext(init_global_context_avg(H1), 0), None
        flat = flatten_grid(H1)
        if self.init_W.shape[1] != flat.shape[1]:
            raise ShapeError(f"{self.prefix}: init map expects {self.init_W.shape[1]} inputs, "
                             f"grid provides {flat.shape[1]}")
        return GlobalContext(np.tanh(flat @ self.init_W.value.T + self.init_b.value), 0), flat

    def informativeness(self, Hs, ctx: GlobalContext):
        n = ctx.n + 1
        if n > self.cfg.n_iterations:
            raise ContractError(f"iteration {n} exceeds configured {self.cfg.n_iterations}")
        We1, be1, We2, be2 = (p.value for p in self.scores[n - 1])
        e, cache = score_units(We1, be1, We2, be2, Hs, ctx.value)
        return normalize_scores(e), cache

    def attend(self, H_in, Hs, r):
        """Attention representation F for map r; returns (F, second-layer state)."""
        if self.cfg.attention_mode == "soft":
            return soft_attention_representation(Hs, r), None
        state = self.second.forward(H_in, gate=self.expand(r))
        return state.last, state

    def refine_context(self, F, ctx: GlobalContext):
        n = ctx.n + 1
        if n > self.cfg.n_iterations:
            raise ContractError(f"iteration {n} exceeds configured {self.cfg.n_iterations}")
        WF, bF = self.refine[n - 1]
        value, cache = refine_context(WF.value, bF.value, F, ctx.value)
        return GlobalContext(value, n), cache

    def classify(self, ctx_value):
        return classify(self.Wc.value, self.bc.value, ctx_value)

    # -- full pass ---------------------------------------------------------
    def forward(self, H1, upto=None, train=False, p_drop=0.0, rng=None) -> StreamPass:
        upto = self.cfg.n_iterations if upto is None else upto
        if not 0 <= upto <= self.cfg.n_iterations:
            raise ContractError(f"upto={upto} outside 0..{self.cfg.n_iterations}")
        J, T, B, d = H1.shape
        in_mask = dropout_mask(H1.shape, p_drop, rng, train) if self.second is not None and upto > 0 \
            else np.ones((1, 1, 1, 1))
        ctx_mask = dropout_mask((B, d), p_drop, rng, train)
        H_in = H1 * in_mask
        Hs = self.pool(H1)
        ctx, flat = self.init_context(H1)
        ctxs, maps, iters = [ctx.value], [], []
        for _ in range(upto):
            r, score_cache = self.informativeness(Hs, ctx)
            F, state = self.attend(H_in, Hs, r)
            ctx, refine_cache = self.refine_context(F, ctx)
            ctxs.append(ctx.value)
            maps.append(r)
            iters.append((score_cache, state, refine_cache))
        posterior, logits = self.classify(ctxs[-1] * ctx_mask)
        return StreamPass(ctxs, maps, iters, Hs, flat, in_mask, ctx_mask, logits, posterior)

    def backward(self, sp: StreamPass, dlogits, dH1):
        """Accumulate parameter gradients; add d(loss)/d(first-layer grid) into dH1."""
        d = self.d
        J, T = self.J, self.T
        ctx_in = sp.ctxs[-1] * sp.ctx_mask
        self.Wc.grad += dlogits.T @ ctx_in
        self.bc.grad += dlogits.sum(axis=0)
        dctx = (dlogits @ self.Wc.value) * sp.ctx_mask
        dHs = np.zeros_like(sp.Hs)
        dH_in = None
        for n in range(len(sp.iters), 0, -1):
            (cat_s, q), state, (cat_f, pre_f) = sp.iters[n - 1]
            r = sp.maps[n - 1]
            WF, bF = self.refine[n - 1]
            dpre = dctx * (pre_f > 0)
            WF.grad += dpre.T @ cat_f
            bF.grad += dpre.sum(axis=0)
            dcat = dpre @ WF.value
            dF, dctx = dcat[:, :d], dcat[:, d:].copy()

            if state is None:
                dHs += r[..., None] * dF
                dr = np.einsum("stbd,bd->stb", sp.Hs, dF)
            else:
                gh = np.zeros_like(state.h)
                gh[-1, -1] = dF
                dX2, dr_joint = self.second.backward(state, gh)
                dH_in = dX2 if dH_in is None else dH_in + dX2
                dr = self.reduce(dr_joint)

            S, _, B = r.shape
            de = softmax_backward(r.reshape(S * T, B), dr.reshape(S * T, B), axis=0).reshape(S, T, B)
            We1, be1, We2, be2 = self.scores[n - 1]
            if We2.value.ndim == 2:
                be1.grad[0] += de.sum()
                We1.grad[0] += np.einsum("stb,stbe->e", de, q)
                da = de[..., None] * We1.value[0] * (1.0 - q * q)
                be2.grad += da.sum(axis=(0, 1, 2))
                We2.grad += da.reshape(-1, da.shape[-1]).T @ cat_s.reshape(-1, cat_s.shape[-1])
                dcat_s = np.matmul(da, We2.value)
            else:
                be1.grad[:, :, 0] += de.sum(axis=2)
                We1.grad[:, :, 0, :] += np.einsum("stb,stbe->ste", de, q)
                da = de[..., None] * We1.value[:, :, None, 0, :] * (1.0 - q * q)
                be2.grad += da.sum(axis=2)
                We2.grad += np.einsum("stbe,stbk->stek", da, cat_s)
                dcat_s = np.einsum("stbe,stek->stbk", da, We2.value)
            dHs += dcat_s[..., :d]
            dctx += dcat_s[..., d:].sum(axis=(0, 1))

        if self.cfg.init_mode == "average":
            dH1 += dctx / (J * T)
        else:
            dpre0 = dctx * (1.0 - sp.ctxs[0] ** 2)
            self.init_W.grad += dpre0.T @ sp.flat
            self.init_b.grad += dpre0.sum(axis=0)
            dflat = dpre0 @ self.init_W.value
            B = dflat.shape[0]
            dH1 += dflat.reshape(B, J, T, d).transpose(1, 2, 0, 3)
        self.unpool_grad(dHs, dH1)
        if dH_in is not None:
            dH1 += dH_in * sp.in_mask
        return dH1


@dataclass
class NetworkPass:
    X: np.ndarray
    first: LatticeState
    streams: list
    posterior: np.ndarray
    extra: object = None


def nll(posterior, labels):
    labels = np.asarray(labels)
    p = np.clip(posterior[np.arange(len(labels)), labels], 1e-12, None)
    return -np.log(p)


class Network:
    """Shared first layer plus attention streams whose posteriors are averaged.

    Training minimises the mean over streams of each stream's negative
    log-likelihood, so every stream is a classifier in its own right.
    """

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.store = ParamStore(RngStream(cfg.seed, "init"), cfg.init, cfg.init_std)
        order = anatomical_chain(cfg.n_joints) if cfg.joint_order is None else cfg.joint_order
        self.order = check_order(order, cfg.n_joints)
        self.position = np.argsort(self.order)
        self.input_mean = np.zeros((cfg.n_joints, cfg.d_in))
        self.input_std = np.ones((cfg.n_joints, cfg.d_in))
        self.layer1 = STLSTMLayer(self.store, "layer1", cfg.d_in, cfg.hidden)
        self.streams: dict[str, AttentionStream] = {}
        self.layer1_calls = 0
        self._build()

    def _build(self):
        c = self.cfg
        self.streams["fine"] = AttentionStream(self.store, "fine", c.attention, c.hidden, c.n_joints,
                                               c.n_frames, c.n_classes)

    @property
    def n_steps(self):
        """Highest stepwise-training step (the number of attention iterations)."""
        return self.cfg.attention.n_iterations

    def fit_input_normalization(self, coords):
        """Per-joint, per-axis mean and std of a training batch (B, J, T, d_in)."""
        coords = np.asarray(coords, dtype=DTYPE)
        self.input_mean = coords.mean(axis=(0, 2))
        self.input_std = np.maximum(coords.std(axis=(0, 2)), 1e-6)

    # -- layout helpers ----------------------------------------------------
    def to_lattice(self, coords):
        """(B, J, T, d_in) in dataset joint order -> (J, T, B, d_in) in chain order."""
        coords = np.asarray(coords, dtype=DTYPE)
        if coords.ndim == 3:
            coords = coords[None]
        B, J, T, din = coords.shape
        c = self.cfg
        if (J, T, din) != (c.n_joints, c.n_frames, c.d_in):
            raise ShapeError(f"input grid {(J, T, din)} does not match model {(c.n_joints, c.n_frames, c.d_in)}")
        coords = (coords - self.input_mean[:, None]) / self.input_std[:, None]
        return coords[:, self.order].transpose(1, 2, 0, 3)

    def joint_map(self, r):
        """(J, T, B) chain-order map -> (B, J, T) in dataset joint order."""
        return r[self.position].transpose(2, 0, 1)

    # -- forward / backward ------------------------------------------------
    def forward(self, coords, train=False, rng=None, upto=None) -> NetworkPass:
        X = self.to_lattice(coords)
        first = self.layer1.forward(X)
        self.layer1_calls += 1
        p = self.cfg.dropout
        passes = [s.forward(first.h, upto, train, p, rng) for s in self.streams.values()]
        posterior = sum(sp.posterior for sp in passes) / len(passes)
        return NetworkPass(X, first, passes, posterior)

    def backward(self, npass: NetworkPass, labels):
        B = len(labels)
        dH1 = np.zeros_like(npass.first.h)
        k = len(npass.streams)
        for stream, sp in zip(self.streams.values(), npass.streams):
            dlogits = sp.posterior.copy()
            dlogits[np.arange(B), labels] -= 1.0
            stream.backward(sp, dlogits / (B * k), dH1)
        self.layer1.backward(npass.first, dH1)

    def objective(self, npass: NetworkPass, labels):
        """Per-sample training loss (mean over streams of each stream's NLL)."""
        return sum(nll(sp.posterior, labels) for sp in npass.streams) / len(npass.streams)

    def loss_and_grad(self, coords, labels, train=False, rng=None, upto=None):
        """Mean loss over the batch; gradients are accumulated into the store."""
        labels = np.asarray(labels)
        npass = self.forward(coords, train, rng, upto)
        self.backward(npass, labels)
        return float(np.mean(self.objective(npass, labels))), npass

    def loss(self, coords, labels, upto=None):
        npass = self.forward(coords, False, None, upto)
        return float(np.mean(self.objective(npass, labels)))

    def predict(self, coords, upto=None):
        return self.forward(coords, upto=upto).posterior

    def attention_maps(self, npass: NetworkPass):
        """{stream: [per-iteration maps]}; joint-level maps as (B, J, T), part maps (B, P, T)."""
        out = {}
        for name, stream, sp in zip(self.streams, self.streams.values(), npass.streams):
            if stream.groups is None:
                out[name] = [self.joint_map(r) for r in sp.maps]
            else:
                out[name] = [r.transpose(2, 0, 1) for r in sp.maps]
        return out


class GCAModel(Network):
    """Single fine-grained (joint-level) attention stream."""


def informativeness_scores(stream: AttentionStream, H1, ctx: GlobalContext):
    """Normalized joint-level map (J, T, B) for the next iteration of ``ctx``."""
    r, _ = stream.informativeness(H1, ctx)
    return r


def attended_lattice_forward(stream: AttentionStream, H1, attn):
    """Second layer gated by a joint-level map; returns (state, F)."""
    F, state = stream.attend(H1, H1, attn)
    return state, F


def run_attention_iterations(model: Network, coords, rng=None, train=False):
    """Forward pass returning (final contexts, attention maps, posterior)."""
    npass = model.forward(coords, train=train, rng=rng)
    ctxs = {name: sp.ctxs[-1] for name, sp in zip(model.streams, npass.streams)}
    return ctxs, model.attention_maps(npass), npass.posterior


class BaselineGlobal(Network):
    """Two plain lattice layers classified from a global second-layer summary.

    ``mode="average"`` averages every step's hidden state; ``mode="concat"``
    concatenates them through a one-layer tanh feed-forward map.
    """

    def __init__(self, cfg: ModelConfig, mode: str):
        self.mode = mode
        super().__init__(cfg)

    @property
    def n_steps(self):
        return 0

    def _build(self):
        c = self.cfg
        self.layer2 = STLSTMLayer(self.store, "layer2", c.hidden, c.hidden)
        if self.mode == "concat":
            self.global_W = self.store.add("global.W", (c.hidden, c.n_joints * c.n_frames * c.hidden))
            self.global_b = self.store.add("global.b", (c.hidden,), zero=True)
        self.Wc = self.store.add("classifier.W", (c.n_classes, c.hidden))
        self.bc = self.store.add("classifier.b", (c.n_classes,), zero=True)

    def forward(self, coords, train=False, rng=None, upto=None) -> NetworkPass:
        X = self.to_lattice(coords)
        first = self.layer1.forward(X)
        self.layer1_calls += 1
        H1 = first.h
        p = self.cfg.dropout
        in_mask = dropout_mask(H1.shape, p, rng, train)
        second = self.layer2.forward(H1 * in_mask)
        if self.mode == "average":
            g = init_global_context_avg(second.h)
            flat = None
        else:
            flat = flatten_grid(second.h)
            g = np.tanh(flat @ self.global_W.value.T + self.global_b.value)
        mask = dropout_mask(g.shape, p, rng, train)
        posterior, logits = classify(self.Wc.value, self.bc.value, g * mask)
        return NetworkPass(X, first, [], posterior, (in_mask, second, flat, g, mask))

    def backward(self, npass: NetworkPass, labels):
        in_mask, second, flat, g, mask = npass.extra
        B = len(labels)
        dlogits = npass.posterior.copy()
        dlogits[np.arange(B), labels] -= 1.0
        dlogits /= B
        self.Wc.grad += dlogits.T @ (g * mask)
        self.bc.grad += dlogits.sum(axis=0)
        dg = (dlogits @ self.Wc.value) * mask
        J, T, _, d = second.h.shape
        if self.mode == "average":
            dH2 = np.broadcast_to(dg / (J * T), second.h.shape).copy()
        else:
            dpre = dg * (1.0 - g * g)
            self.global_W.grad += dpre.T @ flat
            self.global_b.grad += dpre.sum(axis=0)
            dH2 = (dpre @ self.global_W.value).reshape(B, J, T, d).transpose(1, 2, 0, 3)
        dX2, _ = self.layer2.backward(second, dH2)
        self.layer1.backward(npass.first, dX2 * in_mask)

    def objective(self, npass, labels):
        return nll(npass.posterior, labels)

    def attention_maps(self, npass):
        return {}
