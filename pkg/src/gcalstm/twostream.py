"""Body-part (coarse-grained) attention and the two-stream network.

The coarse stream scores the five body parts per frame, using the mean of a
part's first-layer hidden states as its representation, and every joint of a
part shares that part's gate value in the second layer. The two-stream
network runs a fine and a coarse stream on one shared first layer and
averages their class posteriors.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .gca import AttentionStream, GlobalContext, ModelConfig, Network
from .numerics import ContractError, ShapeError

N_PARTS = 5
PART_NAMES = ("torso", "left_arm", "right_arm", "left_leg", "right_leg")


class BodyPartition:
    """Assignment of joints (0-based) to exactly five non-empty parts."""

    def __init__(self, parts, n_joints: int):
        parts = [sorted(int(j) for j in p) for p in parts]
        if len(parts) != N_PARTS:
            raise ContractError(f"a body partition needs exactly {N_PARTS} parts, got {len(parts)}")
        seen = np.zeros(n_joints, dtype=int)
        for k, p in enumerate(parts):
            if not p:
                raise ContractError(f"part {k} is empty")
            for j in p:
                if not 0 <= j < n_joints:
                    raise ContractError(f"part {k} names joint {j}, outside 0..{n_joints - 1}")
                seen[j] += 1
        if np.any(seen != 1):
            bad = np.flatnonzero(seen != 1).tolist()
            raise ContractError(f"joints {bad} are not assigned to exactly one part")
        self.parts = parts
        self.n_joints = n_joints
        self.part_of = np.empty(n_joints, dtype=int)
        for k, p in enumerate(parts):
            self.part_of[p] = k

    @property
    def sizes(self):
        return [len(p) for p in self.parts]

    def __iter__(self):
        return iter(self.parts)

    def __eq__(self, other):
        return isinstance(other, BodyPartition) and self.parts == other.parts

    def to_text(self):
        return "".join(" ".join(str(j) for j in p) + "\n" for p in self.parts)

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text, n_joints):
        parts = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                parts.append([int(tok) for tok in line.split()])
            except ValueError:
                raise ContractError(f"partition line {lineno}: expected joint indices, got {line!r}") from None
        return cls(parts, n_joints)

    @classmethod
    def load(cls, path, n_joints):
        return cls.from_text(Path(path).read_text(), n_joints)


def part_representation(H1, partition: BodyPartition, part: int, t: int):
    """Average of the part's joint hidden vectors at frame t; H1 is (J, T, B, d)."""
    joints = partition.parts[part]
    if not joints:
        raise ContractError(f"part {part} is empty")
    return H1[joints, t].sum(axis=0) / len(joints)


def coarse_informativeness_scores(stream: AttentionStream, H1, ctx: GlobalContext):
    """(5, T, B) part map normalized over every (part, frame) of each sample."""
    if stream.groups is None:
        raise ContractError("stream has no body partition")
    r, _ = stream.informativeness(stream.pool(H1), ctx)
    return r


def coarse_attended_forward(stream: AttentionStream, H_in, coarse_map):
    """Second layer with every joint of part P gated by r[P, t]; returns (state, F)."""
    if coarse_map.shape[0] != stream.S:
        raise ShapeError(f"map has {coarse_map.shape[0]} parts, stream has {stream.S}")
    F, state = stream.attend(H_in, stream.pool(H_in), coarse_map)
    return state, F


def fuse_predictions(post_fine, post_coarse):
    """Average of two class posteriors."""
    a = np.asarray(post_fine, dtype=float)
    b = np.asarray(post_coarse, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"posterior shapes differ: {a.shape} vs {b.shape}")
    return (a + b) / 2


class TwoStreamModel(Network):
    """Fine and coarse attention streams on one shared first layer.

    ``streams=("coarse",)`` gives the coarse-only network and ``("fine",)``
    reproduces :class:`~gcalstm.gca.GCAModel`.
    """

    def __init__(self, cfg: ModelConfig, streams=("fine", "coarse")):
        self.enabled = tuple(streams)
        if not self.enabled or set(self.enabled) - {"fine", "coarse"}:
            raise ContractError(f"streams must be a non-empty subset of fine/coarse, got {streams}")
        super().__init__(cfg)

    def _build(self):
        c = self.cfg
        if "fine" in self.enabled:
            super()._build()
        if "coarse" in self.enabled:
            self.partition = BodyPartition(c.partition, c.n_joints)
            groups = [self.position[p] for p in self.partition]
            self.streams["coarse"] = AttentionStream(self.store, "coarse", c.attention, c.hidden,
                                                     c.n_joints, c.n_frames, c.n_classes, groups=groups)


def two_stream_forward(model: TwoStreamModel, coords, rng=None, train=False):
    """(fused posterior, fine maps, coarse maps) for a batch (B, J, T, 3)."""
    npass = model.forward(coords, train=train, rng=rng)
    maps = model.attention_maps(npass)
    return npass.posterior, maps.get("fine", []), maps.get("coarse", [])
