"""Command-line entry point: synth, train, eval, gradcheck, attn-export.

Settings come from an optional JSON config file whose keys mirror
:class:`RunConfig`, then from flags (flags win). ``--set section.key=value``
reaches any nested field, e.g. ``--set train.learning_rate=0.05``.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .data import DataFormatError, SyntheticSpec, load_dataset, save_dataset, stack, synthetic_splits
from .experiments import MODES, Experiment, SplitData, build_for, noise_sweep, train_model
from .gca import VARIANTS, ModelConfig
from .gradcheck import CHECK_VARIANTS, ToySpec, check_variant, group_errors
from .numerics import ContractError, ShapeError
from .trainer import TrainingDiverged, evaluate
from .twostream import PART_NAMES, BodyPartition

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_GRADCHECK = 5

SPLITS = ("train", "validation", "test")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = ""
    data_dir: str | None = None
    out_dir: str | None = None
    checkpoint: str | None = None
    variant: str = "gca"
    mode: str = "stepwise"
    seed: int = 0
    split: str = "test"
    noise_sigmas: list | None = None
    spec: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    attention: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    gradcheck: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: RunConfig, assignment: str):
    """Apply one ``key=value`` or ``section.key=value`` override."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    value = _parse_value(raw)
    head, _, rest = key.partition(".")
    if not hasattr(cfg, head):
        raise ConfigError(f"unknown config key {head!r}")
    if rest:
        section = getattr(cfg, head)
        if not isinstance(section, dict):
            raise ConfigError(f"config key {head!r} has no sub-keys")
        section[rest] = value
    else:
        setattr(cfg, head, value)


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


# -- argument parsing -----------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="gcalstm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", dest="out_dir")
        return sp

    s = common(sub.add_parser("synth", help="write a synthetic dataset"))
    s.add_argument("--count-per-class", type=int)
    s.add_argument("--noise-sigma", type=float)

    t = common(sub.add_parser("train", help="train a model"))
    t.add_argument("--data", dest="data_dir")
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--mode", choices=MODES)

    for name, hlp in (("eval", "evaluate a checkpoint"), ("attn-export", "export attention maps")):
        e = common(sub.add_parser(name, help=hlp))
        e.add_argument("--data", dest="data_dir")
        e.add_argument("--checkpoint")
        e.add_argument("--split", choices=SPLITS)
        if name == "eval":
            e.add_argument("--sigmas", help="comma-separated noise sigmas in metres")

    g = common(sub.add_parser("gradcheck", help="finite-difference gradient check"))
    g.add_argument("--variants", help=f"comma-separated subset of {','.join(CHECK_VARIANTS)}")
    g.add_argument("--tol", type=float)
    g.add_argument("--eps", type=float)
    g.add_argument("--joints", type=int)
    g.add_argument("--frames", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--inject-bug", action="store_true", help="double analytic gradients (must fail)")
    return p


def resolve_config(args) -> RunConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError(f"config {args.config} must hold a JSON object")
    base.pop("command", None)
    cfg = RunConfig.from_dict(base)
    cfg.command = args.command
    for a in args.set:
        apply_override(cfg, a)
    for name in ("seed", "out_dir", "data_dir", "variant", "mode", "checkpoint", "split"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "count_per_class", None) is not None:
        cfg.spec["count_per_class"] = args.count_per_class
    if getattr(args, "noise_sigma", None) is not None:
        cfg.spec["noise_sigma"] = args.noise_sigma
    if getattr(args, "sigmas", None):
        try:
            cfg.noise_sigmas = [float(s) for s in args.sigmas.split(",")]
        except ValueError:
            raise ConfigError(f"--sigmas must be comma-separated numbers, got {args.sigmas!r}") from None
    if getattr(args, "variants", None):
        cfg.gradcheck["variants"] = args.variants.split(",")
    for flag, key in (("tol", "tol"), ("eps", "eps"), ("joints", "n_joints"), ("frames", "n_frames"),
                      ("hidden", "hidden")):
        v = getattr(args, flag, None)
        if v is not None:
            cfg.gradcheck[key] = v
    if getattr(args, "inject_bug", False):
        cfg.gradcheck["inject_bug"] = True
    return cfg


# -- dataset directory ------------------------------------------------------------

def write_dataset_dir(out: Path, spec: SyntheticSpec):
    ds, subsets = synthetic_splits(spec)
    out.mkdir(parents=True, exist_ok=True)
    for name, seqs in zip(SPLITS, subsets):
        save_dataset(out / f"{name}.jsonl", seqs)
    ds.partition.save(out / "partition.txt")
    meta = {"class_names": ds.class_names, "n_classes": spec.n_classes,
            "informative": {str(k): v for k, v in ds.informative.items()}, "spec": spec.to_dict()}
    (out / "dataset.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return ds, subsets


def read_dataset_dir(path):
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory {path} does not exist")
    meta = json.loads((path / "dataset.json").read_text())
    C = meta["n_classes"]
    subsets = [load_dataset(path / f"{name}.jsonl", n_classes=C) for name in SPLITS]
    J = subsets[0][0].n_joints
    partition = BodyPartition.load(path / "partition.txt", J)
    informative = {int(k): v for k, v in meta["informative"].items()}
    data = SplitData(*(stack(s) for s in subsets), subsets[2], informative, partition.parts)
    return meta, subsets, data


def _out_dir(cfg):
    _require(cfg.out_dir, "an output directory is required (--out)")
    out = Path(cfg.out_dir)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output path {out} exists and is not a directory")
    return out


def _experiment(cfg: RunConfig) -> Experiment:
    exp = Experiment(variant=cfg.variant, mode=cfg.mode, seed=cfg.seed, model=dict(cfg.model),
                     attention=dict(cfg.attention), train=dict(cfg.train))
    _require(cfg.variant in VARIANTS, f"unknown variant {cfg.variant!r}")
    try:
        return exp.validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# -- commands -------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig):
    out = _out_dir(cfg)
    spec_kw = dict(cfg.spec)
    spec_kw.setdefault("seed", cfg.seed)
    try:
        spec = SyntheticSpec.from_dict(spec_kw).validate()
    except TypeError as exc:
        raise ConfigError(f"bad spec: {exc}") from None
    ds, subsets = write_dataset_dir(out, spec)
    J, T = spec.n_joints, spec.n_frames
    print(f"wrote {len(ds.sequences)} sequences to {out}: C={spec.n_classes} J={J} T={T} "
          f"({spec.count_per_class} per class; train/validation/test = "
          f"{'/'.join(str(len(s)) for s in subsets)})")
    for label, name in enumerate(ds.class_names):
        print(f"  class {label} {name}: informative joints {ds.informative[label]}")
    return EXIT_OK


def cmd_train(cfg: RunConfig):
    _require(cfg.data_dir, "a dataset directory is required (--data)")
    exp = _experiment(cfg)
    out = _out_dir(cfg)
    meta, _, data = read_dataset_dir(cfg.data_dir)
    J, T = data.shape
    exp.model_config(J, T, meta["n_classes"], data.partition)
    model = build_for(exp, data, meta["n_classes"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    try:
        report = train_model(model, exp, data)
    except TrainingDiverged as exc:
        (out / "report.jsonl").write_text(exc.report.to_jsonl())
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    (out / "report.jsonl").write_text(report.to_jsonl())
    ckpt.save_checkpoint(out / "checkpoint.gcackpt", model)
    print(f"{exp.variant} ({exp.mode}): {len(report.epochs)} epochs, best validation loss "
          f"{report.best_val_loss:.4f}, test accuracy {report.test_accuracy:.4f}")
    return EXIT_OK


def _load_for_eval(cfg: RunConfig):
    _require(cfg.data_dir, "a dataset directory is required (--data)")
    _require(cfg.checkpoint, "a checkpoint is required (--checkpoint)")
    _require(cfg.split in SPLITS, f"split must be one of {SPLITS}")
    meta, subsets, data = read_dataset_dir(cfg.data_dir)
    header, arrays = ckpt.parse(Path(cfg.checkpoint).read_bytes())
    model_kw = dict(header["model"])
    model_kw.update(cfg.model)
    if cfg.attention:
        model_kw["attention"] = {**model_kw.get("attention", {}), **cfg.attention}
    mcfg = ModelConfig.from_dict(model_kw)
    J, T = data.shape
    if (mcfg.n_joints, mcfg.n_frames, mcfg.n_classes) != (J, T, meta["n_classes"]):
        raise ShapeError(f"checkpoint expects J={mcfg.n_joints}, T={mcfg.n_frames}, C={mcfg.n_classes}; "
                         f"dataset has J={J}, T={T}, C={meta['n_classes']}")
    from .models import build_model

    model = ckpt.load_into(build_model(mcfg), arrays)
    return meta, subsets[SPLITS.index(cfg.split)], model


def cmd_eval(cfg: RunConfig):
    out = _out_dir(cfg)
    meta, seqs, model = _load_for_eval(cfg)
    ev = evaluate(model, seqs)
    metrics = {"split": cfg.split, "accuracy": ev.accuracy, "mean_loss": ev.mean_loss,
               "confusion": ev.confusion.tolist(), "class_names": meta["class_names"]}
    if cfg.noise_sigmas is not None:
        _require(all(s >= 0 for s in cfg.noise_sigmas), "noise sigmas must be >= 0")
        sweep = noise_sweep(model, seqs, cfg.noise_sigmas, seed=cfg.seed)
        metrics["noise_sweep"] = [{"sigma": s, "accuracy": a} for s, a in sweep.items()]
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1) + "\n")
    print(f"{cfg.split}: accuracy {ev.accuracy:.4f}, mean loss {ev.mean_loss:.4f}")
    for row in metrics.get("noise_sweep", []):
        print(f"  sigma {row['sigma']:g} m: accuracy {row['accuracy']:.4f}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig):
    g = dict(cfg.gradcheck)
    variants = g.pop("variants", list(CHECK_VARIANTS))
    tol = float(g.pop("tol", 1e-4))
    eps = float(g.pop("eps", 1e-5))
    inject = bool(g.pop("inject_bug", False))
    g.setdefault("seed", cfg.seed)
    bad = [v for v in variants if v not in VARIANTS]
    _require(not bad, f"unknown variants {bad}")
    try:
        toy = ToySpec(**g).validate()
    except TypeError as exc:
        raise ConfigError(f"bad gradcheck settings: {exc}") from None
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    ok = True
    for v in variants:
        rep = check_variant(v, toy, eps=eps, tol=tol, inject_bug=inject)
        ok &= rep.passed
        print(f"{v}: max relative error {rep.max_rel_error:.3e} over {rep.n_checked} coordinates "
              f"-> {'PASS' if rep.passed else 'FAIL'}")
        for name, err in group_errors(rep).items():
            print(f"    {name:<28s} {err:.3e}")
    return EXIT_OK if ok else EXIT_GRADCHECK


def _write_grid(path, grid, row_names):
    T = grid.shape[1]
    lines = ["\t".join(["unit"] + [f"t{t}" for t in range(T)])]
    for name, row in zip(row_names, grid):
        lines.append("\t".join([name] + [repr(float(v)) for v in row]))
    path.write_text("\n".join(lines) + "\n")


def cmd_attn_export(cfg: RunConfig):
    out = _out_dir(cfg)
    _, seqs, model = _load_for_eval(cfg)
    if not model.streams:
        raise ConfigError(f"variant {model.cfg.variant!r} has no attention maps to export")
    X, _ = stack(seqs)
    J = model.cfg.n_joints
    joint_names = [f"joint{j}" for j in range(J)]
    grid_dir = out / "grids"
    grid_dir.mkdir(parents=True, exist_ok=True)
    totals = {}
    for s in range(0, len(seqs), 64):
        maps = model.attention_maps(model.forward(X[s:s + 64]))
        for stream, per_iter in maps.items():
            rows = joint_names if model.streams[stream].groups is None else list(PART_NAMES)
            for n, m in enumerate(per_iter, 1):
                key = (stream, n)
                totals[key] = totals.get(key, 0.0) + m.sum(axis=2).sum(axis=0)
                for b, grid in enumerate(m):
                    _write_grid(grid_dir / f"{seqs[s + b].id}_{stream}_iter{n}.tsv", grid, rows)
    for stream in model.streams:
        keys = sorted(k for k in totals if k[0] == stream)
        rows = joint_names if model.streams[stream].groups is None else list(PART_NAMES)
        table = np.stack([totals[k] / len(seqs) for k in keys], axis=1)
        lines = ["\t".join(["unit"] + [f"iter{k[1]}" for k in keys])]
        for name, row in zip(rows, table):
            lines.append("\t".join([name] + [repr(float(v)) for v in row]))
        (out / f"average_{stream}.tsv").write_text("\n".join(lines) + "\n")
    print(f"exported attention grids for {len(seqs)} sequences to {out}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "attn-export": cmd_attn_export}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.command](cfg)
    except (ConfigError, ContractError, ShapeError, ckpt.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DataFormatError, json.JSONDecodeError, KeyError) as exc:
        msg = exc.strerror if isinstance(exc, OSError) and exc.strerror else exc
        where = f" ({exc.filename})" if isinstance(exc, OSError) and exc.filename else ""
        print(f"error: {msg}{where}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
