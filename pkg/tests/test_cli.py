import json
import subprocess
import sys

import numpy as np
import pytest

from gcalstm import checkpoint as ckpt
from gcalstm.cli import (EXIT_CONFIG, EXIT_DIVERGED, EXIT_GRADCHECK, EXIT_IO, EXIT_OK, RunConfig, apply_override,
                         main)
from gcalstm.trainer import TrainReport

TINY_SPEC = ["--count-per-class", "6"]
FAST = ["--set", "model.hidden=4", "--set", "model.dropout=0.0", "--set", "attention.score_hidden_dim=4",
        "--set", "train.max_epochs=2", "--set", "train.max_epochs_per_step=1", "--set", "train.learning_rate=0.05"]


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(out), *TINY_SPEC]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(dataset), "--out", str(out), *FAST]) == EXIT_OK
    return out


# -- config -------------------------------------------------------------------------

def test_overrides_and_unknown_keys():
    cfg = RunConfig()
    apply_override(cfg, "train.learning_rate=0.5")
    apply_override(cfg, "seed=4")
    apply_override(cfg, "variant=two_stream")
    assert cfg.train == {"learning_rate": 0.5} and cfg.seed == 4 and cfg.variant == "two_stream"
    with pytest.raises(ValueError):
        apply_override(cfg, "nonsense=1")
    with pytest.raises(ValueError):
        apply_override(cfg, "seed.x=1")
    with pytest.raises(ValueError):
        RunConfig.from_dict({"bogus": 1})


def test_config_file_with_flag_precedence(tmp_path, dataset):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"variant": "coarse", "seed": 9, "train": {"max_epochs": 1}}))
    out = tmp_path / "run"
    code = main(["train", "--config", str(cfg_path), "--data", str(dataset), "--out", str(out),
                 "--variant", "baseline_global_2", "--mode", "direct", *FAST])
    assert code == EXIT_OK
    run = json.loads((out / "run.json").read_text())
    assert run["variant"] == "baseline_global_2" and run["seed"] == 9


# -- synth ---------------------------------------------------------------------------

def test_synth_writes_expected_files(dataset, capsys):
    assert set(_files(dataset)) == {"train.jsonl", "validation.jsonl", "test.jsonl", "partition.txt",
                                    "dataset.json"}
    meta = json.loads((dataset / "dataset.json").read_text())
    assert meta["n_classes"] == 8 and len(meta["class_names"]) == 8
    n = sum(len((dataset / f"{s}.jsonl").read_text().splitlines()) for s in ("train", "validation", "test"))
    assert n == 8 * 6


def test_synth_default_counts(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "1200 sequences" in text and "C=8" in text and "J=15" in text and "T=20" in text
    assert "800/200/200" in text


def test_synth_rerun_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--out", str(a), "--seed", "5", *TINY_SPEC]) == EXIT_OK
    assert main(["synth", "--out", str(b), "--seed", "5", *TINY_SPEC]) == EXIT_OK
    assert _files(a) == _files(b)


def test_synth_single_class_rejected_before_writing(tmp_path):
    out = tmp_path / "x"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"spec": {"classes": [{"name": "only", "joints": [1], "frequency": 1.0,
                                                     "direction": [0, 1, 0]}]}}))
    assert main(["synth", "--config", str(cfg), "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_synth_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["synth", "--out", str(blocker / "sub"), *TINY_SPEC]) == EXIT_IO


# -- train ---------------------------------------------------------------------------

def test_train_outputs(trained):
    assert {"run.json", "report.jsonl", "checkpoint.gcackpt"} <= set(_files(trained))
    rep = TrainReport.from_jsonl((trained / "report.jsonl").read_text())
    assert rep.mode == "stepwise" and len(rep.step_boundaries) == 3
    assert rep.test_accuracy is not None


def test_train_is_deterministic(dataset, trained, tmp_path):
    again = tmp_path / "again"
    assert main(["train", "--data", str(dataset), "--out", str(again), *FAST]) == EXIT_OK
    a, b = _files(again), _files(trained)
    ra, rb = json.loads(a.pop("run.json")), json.loads(b.pop("run.json"))
    assert a == b
    ra.pop("out_dir"), rb.pop("out_dir")
    assert ra == rb


def test_baseline_allocates_no_attention(dataset, tmp_path):
    out = tmp_path / "b"
    assert main(["train", "--data", str(dataset), "--out", str(out), "--variant", "baseline_global_2",
                 "--mode", "direct", *FAST]) == EXIT_OK
    header, _ = ckpt.parse((out / "checkpoint.gcackpt").read_bytes())
    names = [t["name"] for t in header["tensors"]]
    assert not any("score" in n or "refine" in n or "init" in n for n in names)


@pytest.mark.parametrize("extra", [["--set", "train.learning_rate=-1"], ["--set", "attention.n_iterations=0"],
                                   ["--set", "model.bogus=1"], ["--set", "attention.init_mode=zeros"]])
def test_train_config_errors_write_nothing(dataset, tmp_path, extra):
    out = tmp_path / "never"
    assert main(["train", "--data", str(dataset), "--out", str(out), *FAST, *extra]) == EXIT_CONFIG
    assert not out.exists()


def test_train_missing_data_is_io_error(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == EXIT_IO


def test_train_divergence_exit_code(dataset, tmp_path, monkeypatch):
    import gcalstm.trainer as trainer

    def boom(*a, **k):
        raise trainer.NonFiniteError("non-finite training loss at epoch 0")

    monkeypatch.setattr(trainer, "_run_epoch", boom)
    out = tmp_path / "div"
    assert main(["train", "--data", str(dataset), "--out", str(out), *FAST]) == EXIT_DIVERGED
    rep = TrainReport.from_jsonl((out / "report.jsonl").read_text())
    assert rep.diverged and not (out / "checkpoint.gcackpt").exists()


# -- eval ----------------------------------------------------------------------------

def _eval(dataset, trained, out, *extra):
    return main(["eval", "--data", str(dataset), "--checkpoint", str(trained / "checkpoint.gcackpt"),
                 "--out", str(out), *extra])


def test_eval_metrics(dataset, trained, tmp_path):
    assert _eval(dataset, trained, tmp_path) == EXIT_OK
    m = json.loads((tmp_path / "metrics.json").read_text())
    conf = np.array(m["confusion"])
    assert conf.shape == (8, 8)
    assert m["accuracy"] == pytest.approx(np.trace(conf) / conf.sum())
    rep = TrainReport.from_jsonl((trained / "report.jsonl").read_text())
    assert m["accuracy"] == rep.test_accuracy


def test_noise_sweep_zero_equals_plain_eval(dataset, trained, tmp_path):
    assert _eval(dataset, trained, tmp_path, "--sigmas", "0,0.05") == EXIT_OK
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["noise_sweep"][0] == {"sigma": 0.0, "accuracy": m["accuracy"]}
    assert len(m["noise_sweep"]) == 2


def test_eval_negative_sigma_rejected(dataset, trained, tmp_path):
    assert _eval(dataset, trained, tmp_path / "o", "--sigmas", "-1") == EXIT_CONFIG
    assert _eval(dataset, trained, tmp_path / "o", "--sigmas", "a,b") == EXIT_CONFIG


def test_eval_mismatched_config_names_tensor(dataset, trained, tmp_path, capsys):
    assert _eval(dataset, trained, tmp_path / "o", "--set", "model.hidden=5") == EXIT_CONFIG
    assert "layer1.W" in capsys.readouterr().err


def test_eval_corrupted_checkpoint_names_tensor(dataset, trained, tmp_path, capsys):
    blob = bytearray((trained / "checkpoint.gcackpt").read_bytes())
    header, _ = ckpt.parse(bytes(blob))
    last = header["tensors"][-1]
    bad = tmp_path / "bad.gcackpt"
    bad.write_bytes(bytes(blob[:-16]))
    code = main(["eval", "--data", str(dataset), "--checkpoint", str(bad), "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG
    assert last["name"] in capsys.readouterr().err


def test_eval_missing_checkpoint(dataset, tmp_path):
    code = main(["eval", "--data", str(dataset), "--checkpoint", str(tmp_path / "none"), "--out", str(tmp_path)])
    assert code == EXIT_IO


# -- attention export -------------------------------------------------------------------

def _read_grid(path):
    lines = path.read_text().splitlines()
    return np.array([[float(v) for v in line.split("\t")[1:]] for line in lines[1:]])


def test_attn_export_grids_and_average(dataset, trained, tmp_path):
    code = main(["attn-export", "--data", str(dataset), "--checkpoint", str(trained / "checkpoint.gcackpt"),
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    grids = sorted((tmp_path / "grids").glob("*_fine_iter1.tsv"))
    test_ids = [json.loads(line)["id"] for line in (dataset / "test.jsonl").read_text().splitlines()]
    assert len(grids) == len(test_ids)
    for path in (tmp_path / "grids").iterdir():
        g = _read_grid(path)
        assert g.shape == (15, 20)
        assert abs(g.sum() - 1.0) < 1e-9
    avg = _read_grid(tmp_path / "average_fine.tsv")
    assert avg.shape == (15, 2)
    # recompute the per-joint average from the exported grids
    for n in (1, 2):
        want = np.mean([_read_grid(tmp_path / "grids" / f"{i}_fine_iter{n}.tsv").sum(axis=1) for i in test_ids],
                       axis=0)
        np.testing.assert_allclose(avg[:, n - 1], want, rtol=1e-12)
        assert abs(avg[:, n - 1].sum() - 1.0) < 1e-9


def test_attn_export_untrained_is_near_uniform(dataset, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--out", str(run), *FAST, "--set", "train.learning_rate=0"]) == 0
    out = tmp_path / "attn"
    assert main(["attn-export", "--data", str(dataset), "--checkpoint", str(run / "checkpoint.gcackpt"),
                 "--out", str(out)]) == EXIT_OK
    for path in (out / "grids").glob("*_fine_*.tsv"):
        g = _read_grid(path)
        assert np.all(np.abs(g * g.size - 1.0) < 0.5)


def test_attn_export_two_stream_writes_part_grids(dataset, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--out", str(run), "--variant", "two_stream", *FAST]) == 0
    out = tmp_path / "attn"
    assert main(["attn-export", "--data", str(dataset), "--checkpoint", str(run / "checkpoint.gcackpt"),
                 "--out", str(out), "--split", "validation"]) == EXIT_OK
    g = _read_grid(next((out / "grids").glob("*_coarse_iter2.tsv")))
    assert g.shape == (5, 20) and abs(g.sum() - 1.0) < 1e-9
    assert (out / "average_coarse.tsv").exists()


def test_attn_export_refuses_baseline(dataset, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--out", str(run), "--variant", "baseline_global_1",
                 "--mode", "direct", *FAST]) == 0
    code = main(["attn-export", "--data", str(dataset), "--checkpoint", str(run / "checkpoint.gcackpt"),
                 "--out", str(tmp_path / "a")])
    assert code == EXIT_CONFIG


# -- gradcheck ---------------------------------------------------------------------------

def test_gradcheck_single_variant_passes(capsys):
    assert main(["gradcheck", "--variants", "baseline_global_2", "--joints", "3", "--frames", "3",
                 "--hidden", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS" in out and "layer1" in out


def test_gradcheck_injected_bug_fails(capsys):
    code = main(["gradcheck", "--variants", "gca", "--joints", "3", "--frames", "3", "--hidden", "3",
                 "--inject-bug"])
    assert code == EXIT_GRADCHECK
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck_guard(capsys):
    assert main(["gradcheck", "--joints", "50", "--frames", "50", "--hidden", "8"]) == EXIT_CONFIG
    assert "10000" in capsys.readouterr().err


def test_gradcheck_output_deterministic(capsys):
    argv = ["gradcheck", "--variants", "baseline_global_1", "--joints", "3", "--frames", "2", "--hidden", "3"]
    main(argv)
    first = capsys.readouterr().out
    main(argv)
    assert capsys.readouterr().out == first


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "gcalstm.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("synth", "train", "eval", "gradcheck", "attn-export"):
        assert cmd in res.stdout
