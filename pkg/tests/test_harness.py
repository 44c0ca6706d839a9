"""Experiment harness: config validation, runs, CSV contracts, CLI exit codes."""

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from contrastive_lab import ConfigInvalid, config_from_dict, load_config
from contrastive_lab.cli import main
from contrastive_lab.harness import (DEFAULT_CONFIG, GRID_HEADER,
                                     METRICS_HEADER, fmt, list_checkpoints,
                                     run_eval, run_grid, run_train, run_verify)
from contrastive_lab.seeding import derive_seed

TINY = {
    "seed": 3,
    "batch_size": 16,
    "checkpoint_every": 1,
    "test_samples": 16,
    "dataset": {"n_classes": 4, "d_in": 8, "total_samples": 64,
                "class_noise_sigma": 0.2},
    "augmentation": {"noise_sigma": 0.1, "rotation_angle_max": 0.3, "mask_prob": 0.05},
    "encoder": {"hidden_dims": [16], "rep_dim": 6},
    "optimizer": {"learning_rate": 0.05, "epochs": 2},
    "eval": {"probe_epochs": 20, "probe_lr": 0.5},
}


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


# ---------------------------------------------------------------------------
# seeding


def test_derive_seed_is_stable_and_keyed():
    assert derive_seed(0, "dataset", 0) == derive_seed(0, "dataset", 0)
    assert derive_seed(0, "dataset", 0) != derive_seed(0, "dataset", 1)
    assert derive_seed(0, "dataset", 0) != derive_seed(0, "encoder-init", 0)
    assert derive_seed(0, "dataset", 0) != derive_seed(1, "dataset", 0)
    assert 0 <= derive_seed(5, "x", 2) < 2 ** 64


def test_fmt_nine_significant_digits():
    assert fmt(1.0 / 3.0) == "0.333333333"
    assert fmt(2.0) == "2"
    assert fmt(float("nan")) == "nan"


# ---------------------------------------------------------------------------
# config parsing


def test_empty_config_inherits_defaults():
    cfg = config_from_dict({})
    assert cfg.seed == DEFAULT_CONFIG["seed"]
    assert cfg.batch_size == 64
    assert cfg.dataset.n_classes == 8
    assert cfg.loss_name == "balanced"
    assert cfg.loss_params.alpha == 4.0 and cfg.loss_params.lam == 2.0
    assert cfg.knn_k == 5
    assert not cfg.dataset_seed_pinned


def test_unknown_keys_rejected_at_every_level():
    with pytest.raises(ConfigInvalid):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigInvalid):
        config_from_dict({"dataset": {"n_classe": 4}})
    with pytest.raises(ConfigInvalid):
        config_from_dict({"loss": {"name": "balanced", "temperature": 0.5}})


def test_loss_params_do_not_leak_across_selectors():
    # The default section configures the balanced loss; switching the
    # selector must not drag alpha/lam along.
    cfg = config_from_dict({"loss": {"name": "ntxent"}})
    assert cfg.loss_name == "ntxent"
    assert cfg.loss_params.alpha == pytest.approx(2.0)  # 1 / default tau 0.5
    assert cfg.loss_params.lam == 1.0
    gen = config_from_dict({"loss": {"name": "generalized", "alpha": 4}})
    assert gen.loss_params.lam == 1.0  # not balanced's 2.0
    same = config_from_dict({"loss": {"alpha": 8}})
    assert same.loss_name == "balanced" and same.loss_params.lam == 2.0


def test_loss_selector_specific_keys():
    with pytest.raises(ConfigInvalid):
        config_from_dict({"loss": {"name": "ntxent", "alpha": 2}})
    with pytest.raises(ConfigInvalid):
        config_from_dict({"loss": {"name": "decoupled", "lam": 2}})
    with pytest.raises(ConfigInvalid):
        config_from_dict({"loss": {"name": "ntxent", "tau": 0.0}})
    with pytest.raises(ConfigInvalid):
        config_from_dict({"loss": {"name": "softmax"}})
    cfg = config_from_dict({"loss": {"name": "ntxent", "tau": 0.25}})
    assert cfg.loss_params.alpha == pytest.approx(4.0)


def test_invalid_values_rejected():
    for bad in (
        {"batch_size": 1},
        {"checkpoint_every": 0},
        {"test_samples": 15},  # not a multiple of 8 classes
        {"seed": -1},
        {"eval": {"probe_lr": 0.0}},
        {"optimizer": {"learning_rate": -0.1}},
        {"encoder": {"rep_dim": 0}},
        {"dataset": {"total_samples": 4}},  # below n_classes
    ):
        with pytest.raises(ConfigInvalid):
            config_from_dict(bad)


def test_dataset_seed_pinning():
    free = config_from_dict({})
    assert free.resolved_dataset_spec(7).seed == derive_seed(7, "dataset", 0)
    assert free.resolved_dataset_spec(7) != free.resolved_dataset_spec(8)
    pinned = config_from_dict({"dataset": {"seed": 123}})
    assert pinned.dataset_seed_pinned
    assert pinned.resolved_dataset_spec(7).seed == 123
    assert pinned.resolved_dataset_spec(8).seed == 123


def test_seed_override_wins():
    cfg = config_from_dict({"seed": 4}, seed_override=9)
    assert cfg.seed == 9


def test_encoder_config_derivation():
    cfg = config_from_dict(TINY)
    enc = cfg.encoder_config(cfg.seed)
    assert enc.layer_dims == (8, 16, 6)
    assert enc.seed == derive_seed(3, "encoder-init", 0)


def test_load_config_error_paths(tmp_path):
    bad_json = tmp_path / "broken.json"
    bad_json.write_text("{not json")
    with pytest.raises(ConfigInvalid):
        load_config(bad_json)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.json")
    with pytest.raises(ConfigInvalid):
        config_from_dict(["not", "a", "dict"])


# ---------------------------------------------------------------------------
# training runs


def test_zero_epoch_run_emits_header_and_initial_checkpoint(tmp_path):
    cfg = config_from_dict({**TINY, "optimizer": {**TINY["optimizer"], "epochs": 0}})
    result = run_train(cfg, tmp_path)
    assert result.rows == []
    assert result.metrics_path.read_text() == METRICS_HEADER + "\n"
    assert list_checkpoints(tmp_path) == [(0, tmp_path / "checkpoints" / "ckpt_0.txt")]


def test_run_train_writes_metrics_and_checkpoints(tmp_path):
    cfg = config_from_dict(TINY)
    result = run_train(cfg, tmp_path)
    lines = result.metrics_path.read_text().splitlines()
    assert lines[0] == METRICS_HEADER
    assert len(lines) == 1 + 2  # checkpoint_every=1 over 2 epochs
    assert [e for e, _ in list_checkpoints(tmp_path)] == [0, 1, 2]
    first = lines[1].split(",")
    assert int(first[0]) == 1
    assert all(math.isfinite(float(v)) for v in first[1:])


def test_same_seed_rerun_is_byte_identical(tmp_path):
    cfg = config_from_dict(TINY)
    a = run_train(cfg, tmp_path / "a")
    b = run_train(cfg, tmp_path / "b")
    assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()
    for (ea, pa), (eb, pb) in zip(list_checkpoints(tmp_path / "a"),
                                  list_checkpoints(tmp_path / "b")):
        assert ea == eb
        assert pa.read_bytes() == pb.read_bytes()


def test_different_seed_changes_the_run(tmp_path):
    base = config_from_dict(TINY)
    other = config_from_dict(TINY, seed_override=4)
    a = run_train(base, tmp_path / "a")
    b = run_train(other, tmp_path / "b")
    assert a.metrics_path.read_bytes() != b.metrics_path.read_bytes()


def test_unbalanced_run_reports_nan_repel_gap(tmp_path):
    cfg = config_from_dict({
        **TINY,
        "dataset": {**TINY["dataset"], "n_classes": 5, "total_samples": 65,
                    "distribution": "pareto"},
        "test_samples": 20,
        "optimizer": {**TINY["optimizer"], "epochs": 1},
    })
    result = run_train(cfg, tmp_path)
    assert math.isnan(result.rows[-1].gap_repel_mean)
    assert math.isfinite(result.rows[-1].gap_attract_mean)
    assert ",nan," in result.metrics_path.read_text().splitlines()[1]


# ---------------------------------------------------------------------------
# grid


def test_degenerate_grid_cell_equals_a_plain_training_run(tmp_path):
    cfg = config_from_dict({**TINY, "checkpoint_every": 2})
    rows = run_grid(cfg, alphas=[4.0], lambdas=[2.0], selectors=("balanced",),
                    out_dir=tmp_path / "grid")
    assert len(rows) == 1
    cell_seed = derive_seed(cfg.seed, f"grid-balanced-a{fmt(4.0)}-l{fmt(2.0)}", 0)
    solo = run_train(replace(cfg, seed=cell_seed), tmp_path / "solo")
    assert rows[0]["knn_acc"] == solo.rows[-1].knn_acc
    knn, probe = run_eval(replace(cfg, seed=cell_seed), tmp_path / "solo")
    assert rows[0]["knn_acc"] == knn.top1_accuracy
    assert rows[0]["probe_acc"] == probe.top1_accuracy


def test_grid_cells_do_not_depend_on_the_rest_of_the_grid(tmp_path):
    cfg = config_from_dict(TINY)
    small = run_grid(cfg, alphas=[4.0], lambdas=[2.0], selectors=("balanced",))
    bigger = run_grid(cfg, alphas=[2.0, 4.0], lambdas=[2.0], selectors=("balanced",))
    match = [r for r in bigger if r["alpha"] == 4.0 and r["lambda"] == 2.0]
    assert match and match[0] == small[0]


def test_grid_csv_shape_and_determinism(tmp_path):
    cfg = config_from_dict({**TINY, "optimizer": {**TINY["optimizer"], "epochs": 1}})
    rows = run_grid(cfg, alphas=[1.0, 2.0], lambdas=[1.0, 4.0], out_dir=tmp_path / "g1")
    assert len(rows) == 8  # 2 alphas x 2 lambdas x 2 selectors
    text = (tmp_path / "g1" / "grid.csv").read_text()
    assert text.splitlines()[0] == GRID_HEADER
    assert len(text.splitlines()) == 9
    run_grid(cfg, alphas=[1.0, 2.0], lambdas=[1.0, 4.0], out_dir=tmp_path / "g2")
    assert text == (tmp_path / "g2" / "grid.csv").read_text()


def test_grid_argument_validation():
    cfg = config_from_dict(TINY)
    with pytest.raises(ConfigInvalid):
        run_grid(cfg, alphas=[], lambdas=[1.0])
    with pytest.raises(ConfigInvalid):
        run_grid(cfg, alphas=[1.0], lambdas=[1.0], selectors=("ntxent",))
    with pytest.raises(ConfigInvalid):
        run_grid(cfg, alphas=[-1.0], lambdas=[1.0])


# ---------------------------------------------------------------------------
# verify


def test_run_verify_writes_csv(tmp_path):
    results = run_verify(trials=50, seed=0, out_dir=tmp_path)
    lines = (tmp_path / "verify.csv").read_text().splitlines()
    assert lines[0] == "suite,trials,violations,max_violation,mean_gap"
    assert len(lines) == 6
    assert all(r.violations == 0 for r in results)


# ---------------------------------------------------------------------------
# CLI


def run_cli(*argv):
    return main(list(argv))


def test_cli_train_then_measure_roundtrip(tmp_path, capsys):
    cfg_path = write_config(tmp_path, TINY)
    out = str(tmp_path / "run")
    assert run_cli("train", "--config", cfg_path, "--out", out) == 0
    stdout = capsys.readouterr().out
    assert "knn_acc=" in stdout
    assert (tmp_path / "run" / "metrics.csv").exists()

    assert run_cli("gaps", "--config", cfg_path, "--out", out) == 0
    gaps_lines = (tmp_path / "run" / "gaps.csv").read_text().splitlines()
    assert gaps_lines[0] == "epoch,gap_attract_mean,gap_repel_mean"
    assert len(gaps_lines) == 1 + 3  # checkpoints 0, 1, 2

    assert run_cli("bias", "--config", cfg_path, "--out", out) == 0
    assert (tmp_path / "run" / "bias.csv").exists()

    assert run_cli("eval", "--config", cfg_path, "--out", out) == 0
    eval_lines = (tmp_path / "run" / "eval.csv").read_text().splitlines()
    assert eval_lines[0] == "protocol,top1_accuracy,n_test,k_or_epochs"
    assert eval_lines[1].startswith("knn,") and eval_lines[2].startswith("linear,")


def test_cli_missing_config_exits_5(tmp_path, capsys):
    assert run_cli("train", "--config", str(tmp_path / "nope.json")) == 5
    err = capsys.readouterr().err
    assert err.startswith("ERROR FileNotFoundError:")
    assert err.count("\n") == 1


def test_cli_invalid_config_exits_2(tmp_path, capsys):
    bad = write_config(tmp_path, {"loss": {"name": "softmax"}})
    assert run_cli("train", "--config", bad) == 2
    assert capsys.readouterr().err.startswith("ERROR ConfigInvalid:")


def test_cli_measurement_without_checkpoints_exits_5(tmp_path, capsys):
    cfg_path = write_config(tmp_path, TINY)
    assert run_cli("gaps", "--config", cfg_path, "--out", str(tmp_path)) == 5
    assert capsys.readouterr().err.startswith("ERROR FileNotFoundError:")


def test_cli_verify_passes_and_corrupt_control_fails(tmp_path, capsys):
    out = str(tmp_path)
    assert run_cli("verify", "--trials", "40", "--suite", "lemma1,lemma3",
                   "--out", out) == 0
    stdout = capsys.readouterr().out
    assert stdout.count("violations=0") == 2
    assert run_cli("verify", "--trials", "40", "--suite", "lemma1",
                   "--corrupt", "--out", out) == 3


def test_cli_verify_argument_errors(tmp_path, capsys):
    assert run_cli("verify", "--trials", "0", "--out", str(tmp_path)) == 2
    assert run_cli("verify", "--suite", "lemma9", "--out", str(tmp_path)) == 2
    capsys.readouterr()


def test_cli_grid_smoke(tmp_path, capsys):
    quick = {**TINY, "optimizer": {**TINY["optimizer"], "epochs": 1}}
    cfg_path = write_config(tmp_path, quick)
    out = str(tmp_path / "grid")
    assert run_cli("grid", "--config", cfg_path, "--out", out,
                   "--alphas", "2", "--lambdas", "1,2", "--losses", "balanced") == 0
    assert "cells=2" in capsys.readouterr().out
    assert run_cli("grid", "--config", cfg_path, "--out", out,
                   "--alphas", "x", "--lambdas", "1") == 2


def test_cli_seed_override_changes_artifacts(tmp_path):
    cfg_path = write_config(tmp_path, TINY)
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run_cli("train", "--config", cfg_path, "--out", out_a) == 0
    assert run_cli("train", "--config", cfg_path, "--seed", "99", "--out", out_b) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a != b
