"""Skeleton sequences, the synthetic action dataset and its on-disk format.

A dataset file holds one JSON record per line::

    {"id": "c3-0017", "label": 3, "J": 15, "T": 20, "coords": [x, y, z, ...]}

with ``coords`` flattened in (joint, frame, axis) order. Floats are written
with ``repr`` precision so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import ContractError, RngStream
from .twostream import BodyPartition

# Rest pose of the 15-joint synthetic skeleton in metres (x right, y up),
# about 1.7 m tall. Joint order runs torso first, then each limb outward.
JOINT_NAMES = (
    "pelvis", "chest", "head",
    "l_shoulder", "l_elbow", "l_hand",
    "r_shoulder", "r_elbow", "r_hand",
    "l_hip", "l_knee", "l_foot",
    "r_hip", "r_knee", "r_foot",
)
REST_POSE = np.array([
    [0.00, 1.00, 0.0], [0.00, 1.30, 0.0], [0.00, 1.62, 0.0],
    [0.18, 1.42, 0.0], [0.24, 1.15, 0.0], [0.27, 0.90, 0.0],
    [-0.18, 1.42, 0.0], [-0.24, 1.15, 0.0], [-0.27, 0.90, 0.0],
    [0.10, 0.95, 0.0], [0.11, 0.52, 0.0], [0.12, 0.08, 0.0],
    [-0.10, 0.95, 0.0], [-0.11, 0.52, 0.0], [-0.12, 0.08, 0.0],
])
DEFAULT_PARTS = [[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11], [12, 13, 14]]
ROOT_JOINT = 0


class DataFormatError(ValueError):
    pass


@dataclass
class SkeletonSequence:
    coords: np.ndarray  # (J, T, 3)
    label: int
    id: str = ""

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] != 3:
            raise ContractError(f"{self.id}: coords must be (J, T, 3), got {self.coords.shape}")
        if self.coords.shape[0] < 1 or self.coords.shape[1] < 1:
            raise ContractError(f"{self.id}: empty sequence")
        if not np.all(np.isfinite(self.coords)):
            raise ContractError(f"{self.id}: non-finite coordinates")

    @property
    def n_joints(self):
        return self.coords.shape[0]

    @property
    def n_frames(self):
        return self.coords.shape[1]


@dataclass
class ClassSpec:
    """One action class.

    ``joints`` are the informative joints; ``part`` (if set) marks a coarse
    class whose informative set is that whole body part. Every informative
    joint oscillates at ``frequency`` cycles per sequence along ``direction``.
    """

    name: str
    joints: list
    frequency: float
    direction: list
    part: int | None = None


def default_classes():
    """Four joint-level classes (2-joint sets) and four whole-part classes."""
    up, side, fwd = [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]
    return [
        ClassSpec("wave_hands", [5, 8], 2.0, up),
        ClassSpec("pump_elbows", [4, 7], 1.0, fwd),
        ClassSpec("tap_feet", [11, 14], 2.0, up),
        ClassSpec("swing_knees", [10, 13], 1.0, side),
        ClassSpec("left_arm", [3, 4, 5], 1.0, side, part=1),
        ClassSpec("right_arm", [6, 7, 8], 2.0, up, part=2),
        ClassSpec("left_leg", [9, 10, 11], 1.0, fwd, part=3),
        ClassSpec("right_leg", [12, 13, 14], 2.0, side, part=4),
    ]


@dataclass
class SyntheticSpec:
    n_joints: int = 15
    n_frames: int = 20
    classes: list = field(default_factory=default_classes)
    partition: list = field(default_factory=lambda: [list(p) for p in DEFAULT_PARTS])
    informative_amplitude: float = 0.12
    distractor_amplitude: float = 0.075
    amplitude_jitter: float = 0.2
    distractor_frequencies: list = field(default_factory=lambda: [1.0, 2.0])
    translation_range: float = 0.5
    noise_sigma: float = 0.02
    count_per_class: int = 150
    split_fractions: list = field(default_factory=lambda: [2 / 3, 1 / 6, 1 / 6])
    seed: int = 0

    @property
    def n_classes(self):
        return len(self.classes)

    def validate(self):
        if self.n_joints < 1 or self.n_frames < 1:
            raise ContractError("n_joints and n_frames must be >= 1")
        if self.n_classes < 2:
            raise ContractError("a classification dataset needs at least 2 classes")
        if self.count_per_class < 1:
            raise ContractError("count_per_class must be >= 1")
        if self.informative_amplitude <= 0 or self.distractor_amplitude < 0:
            raise ContractError("amplitudes must be positive")
        if not 0 <= self.amplitude_jitter < 1:
            raise ContractError("amplitude_jitter must lie in [0, 1)")
        lo_inf = self.informative_amplitude * (1 - self.amplitude_jitter)
        if self.distractor_amplitude >= lo_inf:
            raise ContractError("distractor amplitude must stay below every informative amplitude")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be >= 0")
        BodyPartition(self.partition, self.n_joints)
        for c in self.classes:
            if not c.joints:
                raise ContractError(f"class {c.name!r} has no informative joints")
            if any(not 0 <= j < self.n_joints for j in c.joints):
                raise ContractError(f"class {c.name!r} names a joint outside 0..{self.n_joints - 1}")
            if c.frequency <= 0:
                raise ContractError(f"class {c.name!r} needs a positive frequency")
            if np.linalg.norm(c.direction) == 0:
                raise ContractError(f"class {c.name!r} has a zero direction")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "classes" in d:
            d["classes"] = [c if isinstance(c, ClassSpec) else ClassSpec(**c) for c in d["classes"]]
        return cls(**d)


@dataclass
class SyntheticDataset:
    sequences: list
    partition: BodyPartition
    informative: dict  # class label -> sorted list of informative joints
    class_names: list


def rest_pose(n_joints):
    if n_joints == len(REST_POSE):
        return REST_POSE.copy()
    pose = np.zeros((n_joints, 3))
    pose[:, 1] = np.linspace(1.7, 0.0, n_joints)
    return pose


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def generate_synthetic(spec: SyntheticSpec, rng: RngStream | None = None) -> SyntheticDataset:
    """Render ``count_per_class`` sequences per class.

    Informative joints oscillate with the class template at the informative
    amplitude; every other joint oscillates with a random frequency, phase
    and direction at the lower distractor amplitude. Each sequence also gets a
    random global translation, a random start phase and Gaussian noise.
    """
    spec.validate()
    rng = rng if rng is not None else RngStream(spec.seed, "synth")
    J, T = spec.n_joints, spec.n_frames
    base = rest_pose(J)
    tt = np.arange(T) / T
    jit = spec.amplitude_jitter
    seqs = []
    for label, cls in enumerate(spec.classes):
        direction = _unit(cls.direction)
        informative = set(cls.joints)
        crng = rng.fork(f"class{label}")
        for k in range(spec.count_per_class):
            coords = np.broadcast_to(base[:, None, :], (J, T, 3)).copy()
            phase = crng.uniform(0, 2 * np.pi)
            for j in range(J):
                if j in informative:
                    amp = spec.informative_amplitude * crng.uniform(1 - jit, 1 + jit)
                    wave = amp * np.sin(2 * np.pi * cls.frequency * tt + phase)
                    coords[j] += wave[:, None] * direction
                else:
                    amp = spec.distractor_amplitude * crng.uniform(0.5, 1.0)
                    freq = spec.distractor_frequencies[crng.integers(len(spec.distractor_frequencies))]
                    d = _unit(crng.normal(size=3))
                    wave = amp * np.sin(2 * np.pi * freq * tt + crng.uniform(0, 2 * np.pi))
                    coords[j] += wave[:, None] * d
            coords += crng.uniform(-spec.translation_range, spec.translation_range, size=3)
            if spec.noise_sigma > 0:
                coords += crng.normal(0.0, spec.noise_sigma, size=coords.shape)
            seqs.append(SkeletonSequence(coords, label, f"c{label}-{k:04d}"))
    informative = {label: sorted(c.joints) for label, c in enumerate(spec.classes)}
    return SyntheticDataset(seqs, BodyPartition(spec.partition, J), informative,
                            [c.name for c in spec.classes])


def add_gaussian_noise(seq: SkeletonSequence, sigma: float, rng: RngStream) -> SkeletonSequence:
    if sigma < 0:
        raise ContractError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return SkeletonSequence(seq.coords.copy(), seq.label, seq.id)
    noisy = seq.coords + rng.normal(0.0, sigma, size=seq.coords.shape)
    return SkeletonSequence(noisy, seq.label, seq.id)


def normalize_sequence(seq: SkeletonSequence, root: int = ROOT_JOINT) -> SkeletonSequence:
    """Translate so the root joint sits at the origin in the first frame."""
    return SkeletonSequence(seq.coords - seq.coords[root, 0], seq.label, seq.id)


def stack(sequences, normalize=True):
    """Batch arrays (B, J, T, 3) and labels (B,)."""
    if not sequences:
        raise ContractError("no sequences to stack")
    if normalize:
        sequences = [normalize_sequence(s) for s in sequences]
    X = np.stack([s.coords for s in sequences])
    y = np.array([s.label for s in sequences], dtype=int)
    return X, y


# -- persistence --------------------------------------------------------------

def sequence_to_line(seq: SkeletonSequence) -> str:
    J, T, _ = seq.coords.shape
    record = {"id": seq.id, "label": int(seq.label), "J": J, "T": T,
              "coords": seq.coords.reshape(-1).tolist()}
    return json.dumps(record, allow_nan=False, separators=(",", ":"))


def save_dataset(path, sequences):
    with open(path, "w") as fh:
        for s in sequences:
            fh.write(sequence_to_line(s) + "\n")


def _parse_constant(name):
    # let NaN / Infinity through so the finiteness check can name the record
    return float(name)


def load_dataset(path, n_classes: int | None = None):
    """Parse a dataset file; errors name the offending line and record."""
    sequences = []
    shape = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line, parse_constant=_parse_constant)
            except ValueError as exc:
                raise DataFormatError(f"{where}: {exc}") from None
            if not isinstance(rec, dict):
                raise DataFormatError(f"{where}: record is not an object")
            missing = [k for k in ("id", "label", "J", "T", "coords") if k not in rec]
            if missing:
                raise DataFormatError(f"{where} (record {rec.get('id', '?')!r}): missing fields {missing}")
            rid = rec["id"]
            J, T, label = rec["J"], rec["T"], rec["label"]
            if not all(isinstance(v, int) for v in (J, T, label)) or J < 1 or T < 1 or label < 0:
                raise DataFormatError(f"{where} (record {rid!r}): J, T and label must be non-negative integers")
            if n_classes is not None and label >= n_classes:
                raise DataFormatError(f"{where} (record {rid!r}): label {label} >= {n_classes} classes")
            coords = np.asarray(rec["coords"], dtype=np.float64)
            if coords.shape != (J * T * 3,):
                raise DataFormatError(f"{where} (record {rid!r}): expected {J * T * 3} coordinates, "
                                      f"got {coords.size}")
            if not np.all(np.isfinite(coords)):
                raise DataFormatError(f"{where} (record {rid!r}): non-finite coordinate")
            if shape is None:
                shape = (J, T)
            elif J != shape[0]:
                raise DataFormatError(f"{where} (record {rid!r}): J={J} differs from earlier records (J={shape[0]})")
            sequences.append(SkeletonSequence(coords.reshape(J, T, 3), label, str(rid)))
    return sequences


# -- splitting ----------------------------------------------------------------

@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list

    def subsets(self, sequences):
        return ([sequences[i] for i in self.train], [sequences[i] for i in self.validation],
                [sequences[i] for i in self.test])


def split_dataset(sequences, fractions, rng: RngStream) -> DatasetSplit:
    """Stratified train/validation/test split by class label."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (3,) or np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ContractError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    labels = np.array([s.label for s in sequences])
    needed = int(np.count_nonzero(fractions))
    out = ([], [], [])
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        if len(idx) < needed:
            raise ContractError(f"class {label} has {len(idx)} samples, fewer than the {needed} non-empty splits")
        idx = idx[rng.fork(f"split{label}").permutation(len(idx))]
        bounds = np.round(np.cumsum(fractions) * len(idx)).astype(int)
        bounds[-1] = len(idx)
        start = 0
        for part, stop in zip(out, bounds):
            part.extend(int(i) for i in idx[start:stop])
            start = stop
    return DatasetSplit(*(sorted(p) for p in out))


def synthetic_splits(spec: SyntheticSpec):
    """Generate the dataset and split it with the SyntheticSpec fractions and seed."""
    ds = generate_synthetic(spec)
    split = split_dataset(ds.sequences, spec.split_fractions, RngStream(spec.seed, "split"))
    return ds, split.subsets(ds.sequences)


def motion_energy(seq: SkeletonSequence):
    """Per-joint energy of the motion about the joint's mean position.

    Frame-to-frame differences would also measure motion, but at 20 frames
    per sequence they are dominated by coordinate noise.
    """
    c = seq.coords
    return np.sum((c - c.mean(axis=1, keepdims=True)) ** 2, axis=(1, 2))
