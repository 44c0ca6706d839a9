"""Experiment orchestration: config files, training runs, the parameter
grid, verification suites, and CSV emission.

Every run is a pure function of (config, master seed).  Child seeds are
derived per component and index, so the dataset, the shuffle of epoch 17,
or one grid cell can be reproduced in isolation, and adding a consumer
never shifts the draws of another.  All CSV floats print with 9
significant digits, making byte-identity across reruns a meaningful
contract.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .diagnostics import (SuiteResult, checkpoint_gaps, gap_curve,
                          prototype_bias, run_all_suites)
from .encoder import (EncoderConfig, MlpParams, OptimizerConfig, cosine_lr,
                      forward_batch, init_params, load_checkpoint,
                      save_checkpoint, train_step)
from .errors import ConfigInvalid
from .evaluation import EvalReport, knn_eval, linear_probe
from .losses import LOSS_KINDS, LossParams
from .seeding import derive_seed
from .synthdata import (AugmentationSpec, Dataset, DatasetSpec,
                        generate_dataset, resample_balanced)

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "batch_size": 64,
    "checkpoint_every": 10,
    "test_samples": 400,
    "bias_k_samples": 8,
    "gap_k_views": 10,
    "dataset": {
        "n_classes": 8,
        "d_in": 32,
        "total_samples": 2000,
        "class_noise_sigma": 0.25,
        "distribution": "uniform",
        "pareto_shape": 6.0,
    },
    "augmentation": {
        "noise_sigma": 0.1,
        "rotation_angle_max": 0.5,
        "mask_prob": 0.05,
        "enabled": ["noise", "rotation", "mask"],
    },
    "encoder": {"hidden_dims": [64, 64], "rep_dim": 16},
    "optimizer": {
        "learning_rate": 0.1,
        "momentum": 0.9,
        "weight_decay": 1e-4,
        "epochs": 200,
    },
    "loss": {"name": "balanced", "alpha": 4.0, "lam": 2.0},
    "eval": {"knn_k": 5, "probe_epochs": 100, "probe_lr": 0.5},
}

METRICS_HEADER = ("epoch,loss_total,loss_attract,loss_repel,knn_acc,"
                  "bias_mc,bias_single,gap_attract_mean,gap_repel_mean,lr")
GRID_HEADER = "loss,alpha,lambda,knn_acc,probe_acc"
VERIFY_HEADER = "suite,trials,violations,max_violation,mean_gap"
GAPS_HEADER = "epoch,gap_attract_mean,gap_repel_mean"
BIAS_HEADER = "bias_mc,bias_single,k_samples,n_points"
EVAL_HEADER = "protocol,top1_accuracy,n_test,k_or_epochs"


def fmt(x: float) -> str:
    """Canonical CSV float rendering: 9 significant digits."""
    return f"{float(x):.9g}"


@dataclass
class MetricsRow:
    epoch: int
    loss_total: float
    loss_attract: float
    loss_repel: float
    knn_acc: float
    bias_mc: float
    bias_single: float
    gap_attract_mean: float
    gap_repel_mean: float
    lr: float

    def to_csv(self) -> str:
        return ",".join([str(self.epoch)] + [fmt(v) for v in (
            self.loss_total, self.loss_attract, self.loss_repel, self.knn_acc,
            self.bias_mc, self.bias_single, self.gap_attract_mean,
            self.gap_repel_mean, self.lr)])


@dataclass
class ExperimentConfig:
    """Fully validated experiment description; see DEFAULT_CONFIG for shape."""

    seed: int
    batch_size: int
    checkpoint_every: int
    test_samples: int
    bias_k_samples: int
    gap_k_views: int
    dataset: DatasetSpec  # seed field meaningful only when dataset_seed_pinned
    dataset_seed_pinned: bool
    augmentation: AugmentationSpec
    hidden_dims: tuple[int, ...]
    rep_dim: int
    optimizer: OptimizerConfig
    loss_name: str
    loss_params: LossParams
    knn_k: int
    probe_epochs: int
    probe_lr: float

    def resolved_dataset_spec(self, master: int) -> DatasetSpec:
        if self.dataset_seed_pinned:
            return self.dataset
        return replace(self.dataset, seed=derive_seed(master, "dataset", 0))

    def encoder_config(self, master: int) -> EncoderConfig:
        dims = (self.dataset.d_in, *self.hidden_dims, self.rep_dim)
        return EncoderConfig(layer_dims=dims, seed=derive_seed(master, "encoder-init", 0))


def _merge_section(defaults: dict, given: dict, path: str,
                   extra_allowed: tuple[str, ...] = ()) -> dict:
    unknown = set(given) - set(defaults) - set(extra_allowed)
    if unknown:
        raise ConfigInvalid(f"unknown key(s) {sorted(unknown)} in {path}")
    merged = dict(defaults)
    merged.update(given)
    return merged


def _parse_loss(section: dict) -> tuple[str, LossParams]:
    name = section.get("name")
    if name not in LOSS_KINDS:
        raise ConfigInvalid(f"loss.name must be one of {LOSS_KINDS}, got {name!r}")
    keys = set(section) - {"name"}
    try:
        if name == "ntxent":
            if keys - {"tau"}:
                raise ConfigInvalid(f"ntxent accepts only 'tau', got {sorted(keys)}")
            tau = float(section.get("tau", 0.5))
            if tau <= 0:
                raise ConfigInvalid(f"loss.tau must be > 0, got {tau}")
            return name, LossParams(alpha=1.0 / tau)
        if name == "decoupled":
            if keys - {"alpha"}:
                raise ConfigInvalid(f"decoupled accepts only 'alpha', got {sorted(keys)}")
            return name, LossParams(alpha=float(section.get("alpha", 2.0)))
        if keys - {"alpha", "lam"}:
            raise ConfigInvalid(f"{name} accepts 'alpha' and 'lam', got {sorted(keys)}")
        return name, LossParams(alpha=float(section.get("alpha", 2.0)),
                                lam=float(section.get("lam", 1.0)))
    except ValueError as exc:  # LossParams invariants
        raise ConfigInvalid(f"invalid loss parameters: {exc}") from exc


def config_from_dict(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Build and validate a config, filling gaps from DEFAULT_CONFIG."""
    if not isinstance(raw, dict):
        raise ConfigInvalid(f"config root must be an object, got {type(raw).__name__}")
    top = _merge_section(DEFAULT_CONFIG, raw, "config")
    for key in ("dataset", "augmentation", "encoder", "optimizer", "loss", "eval"):
        if not isinstance(top[key], dict):
            raise ConfigInvalid(f"config.{key} must be an object")
    ds = _merge_section(DEFAULT_CONFIG["dataset"], top["dataset"], "dataset",
                        extra_allowed=("seed",))
    aug = _merge_section(DEFAULT_CONFIG["augmentation"], top["augmentation"], "augmentation")
    enc = _merge_section(DEFAULT_CONFIG["encoder"], top["encoder"], "encoder")
    opt = _merge_section(DEFAULT_CONFIG["optimizer"], top["optimizer"], "optimizer")
    ev = _merge_section(DEFAULT_CONFIG["eval"], top["eval"], "eval")
    loss_given = top["loss"]
    unknown = set(loss_given) - {"name", "tau", "alpha", "lam"}
    if unknown:
        raise ConfigInvalid(f"unknown key(s) {sorted(unknown)} in loss")
    # Parameter keys only carry over from the default loss section when the
    # selector matches; an ntxent config must not inherit balanced's alpha/lam.
    loss_sel = loss_given.get("name", DEFAULT_CONFIG["loss"]["name"])
    if loss_sel == DEFAULT_CONFIG["loss"]["name"]:
        loss_section = {**DEFAULT_CONFIG["loss"], **loss_given}
    else:
        loss_section = {**loss_given, "name": loss_sel}
    loss_name, loss_params = _parse_loss(loss_section)
    try:
        dataset_seed_pinned = "seed" in ds
        dataset = DatasetSpec(
            n_classes=int(ds["n_classes"]), d_in=int(ds["d_in"]),
            total_samples=int(ds["total_samples"]),
            class_noise_sigma=float(ds["class_noise_sigma"]),
            distribution=str(ds["distribution"]),
            pareto_shape=float(ds["pareto_shape"]),
            seed=int(ds.get("seed", 0)))
        augmentation = AugmentationSpec(
            noise_sigma=float(aug["noise_sigma"]),
            rotation_angle_max=float(aug["rotation_angle_max"]),
            mask_prob=float(aug["mask_prob"]),
            enabled=tuple(aug["enabled"]))
        optimizer = OptimizerConfig(
            learning_rate=float(opt["learning_rate"]),
            momentum=float(opt["momentum"]),
            weight_decay=float(opt["weight_decay"]),
            epochs=int(opt["epochs"]))
        config = ExperimentConfig(
            seed=int(top["seed"] if seed_override is None else seed_override),
            batch_size=int(top["batch_size"]),
            checkpoint_every=int(top["checkpoint_every"]),
            test_samples=int(top["test_samples"]),
            bias_k_samples=int(top["bias_k_samples"]),
            gap_k_views=int(top["gap_k_views"]),
            dataset=dataset,
            dataset_seed_pinned=dataset_seed_pinned,
            augmentation=augmentation,
            hidden_dims=tuple(int(d) for d in enc["hidden_dims"]),
            rep_dim=int(enc["rep_dim"]),
            optimizer=optimizer,
            loss_name=loss_name,
            loss_params=loss_params,
            knn_k=int(ev["knn_k"]),
            probe_epochs=int(ev["probe_epochs"]),
            probe_lr=float(ev["probe_lr"]))
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"invalid config value: {exc}") from exc
    _validate_config(config)
    return config


def _validate_config(c: ExperimentConfig) -> None:
    if c.seed < 0:
        raise ConfigInvalid("seed must be >= 0")
    if c.batch_size < 2:
        raise ConfigInvalid(f"batch_size must be >= 2, got {c.batch_size}")
    if c.checkpoint_every < 1:
        raise ConfigInvalid("checkpoint_every must be >= 1")
    if c.test_samples < c.dataset.n_classes or c.test_samples % c.dataset.n_classes:
        raise ConfigInvalid(
            f"test_samples must be a positive multiple of n_classes, got "
            f"{c.test_samples} for {c.dataset.n_classes} classes")
    if c.bias_k_samples < 1 or c.gap_k_views < 1:
        raise ConfigInvalid("bias_k_samples and gap_k_views must be >= 1")
    if c.knn_k < 1:
        raise ConfigInvalid("eval.knn_k must be >= 1")
    if c.probe_epochs < 1 or c.probe_lr <= 0:
        raise ConfigInvalid("eval.probe_epochs must be >= 1 and probe_lr > 0")
    if not c.rep_dim or c.rep_dim < 1:
        raise ConfigInvalid("encoder.rep_dim must be >= 1")
    try:
        EncoderConfig((c.dataset.d_in, *c.hidden_dims, c.rep_dim))
    except ValueError as exc:
        raise ConfigInvalid(f"invalid encoder dims: {exc}") from exc


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    """Parse a JSON config file; ConfigInvalid carries the offending field."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(raw, seed_override=seed_override)


# ---------------------------------------------------------------------------
# Training


def _metrics_row(config: ExperimentConfig, master: int, params: MlpParams,
                 data: Dataset, test: Dataset, epoch: int, lr_now: float,
                 loss_means: tuple[float, float, float]) -> MetricsRow:
    train_reps = forward_batch(params, data.xs)[0]
    test_reps = forward_batch(params, test.xs)[0]
    knn = knn_eval(train_reps, data.ys, test_reps, test.ys, config.knn_k)
    bias = prototype_bias(params, data, config.augmentation, config.bias_k_samples,
                          mode="both", seed=derive_seed(master, "metrics-bias", epoch))
    balanced = len(set(int(v) for v in data.counts)) == 1 and data.n_classes >= 2
    gap_a, gap_r = checkpoint_gaps(
        params, data, config.augmentation, config.gap_k_views,
        config.loss_params.alpha, seed=derive_seed(master, "metrics-gaps", epoch),
        include_repel=balanced)
    return MetricsRow(epoch=epoch, loss_total=loss_means[0],
                      loss_attract=loss_means[1], loss_repel=loss_means[2],
                      knn_acc=knn.top1_accuracy, bias_mc=bias.bias_mc,
                      bias_single=bias.bias_single, gap_attract_mean=gap_a,
                      gap_repel_mean=gap_r, lr=lr_now)


def _fit(config: ExperimentConfig, master: int, save_cb=None, with_metrics=True
         ) -> tuple[MlpParams, Dataset, Dataset, list[MetricsRow]]:
    """Train per config; the entire trajectory is fixed by (config, master).

    ``save_cb(epoch, params)`` fires at epoch 0 and at every logging epoch
    (multiples of checkpoint_every, plus the final epoch).  Trailing
    single-sample shuffle remainders are dropped: a contrastive batch needs
    at least two images.
    """
    data = generate_dataset(config.resolved_dataset_spec(master))
    test = resample_balanced(data, config.test_samples,
                             derive_seed(master, "test-set", 0))
    params = init_params(config.encoder_config(master))
    if save_cb is not None:
        save_cb(0, params)
    rows: list[MetricsRow] = []
    epochs = config.optimizer.epochs
    for epoch in range(1, epochs + 1):
        lr_now = cosine_lr(config.optimizer.learning_rate, epoch - 1, epochs)
        perm = np.random.default_rng(derive_seed(master, "shuffle", epoch)
                                     ).permutation(data.n)
        aug_rng = np.random.default_rng(derive_seed(master, "train-aug", epoch))
        sums = np.zeros(3)
        seen = 0
        for start in range(0, data.n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            params, br = train_step(params, data.xs[idx], config.augmentation,
                                    config.loss_params, config.loss_name,
                                    config.optimizer, lr_now, aug_rng)
            sums += len(idx) * np.array([br.total, br.attract, br.repel])
            seen += len(idx)
        if epoch % config.checkpoint_every == 0 or epoch == epochs:
            if save_cb is not None:
                save_cb(epoch, params)
            if with_metrics:
                rows.append(_metrics_row(config, master, params, data, test,
                                         epoch, lr_now, tuple(sums / seen)))
    return params, data, test, rows


@dataclass
class TrainResult:
    params: MlpParams
    data: Dataset
    test: Dataset
    rows: list[MetricsRow]
    metrics_path: Path
    checkpoint_dir: Path


def run_train(config: ExperimentConfig, out_dir) -> TrainResult:
    """Full training run: metrics.csv plus checkpoints/ckpt_<epoch>.txt."""
    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    master = config.seed

    def save_cb(epoch: int, params: MlpParams) -> None:
        save_checkpoint(ckpt_dir / f"ckpt_{epoch}.txt", params, master, epoch)

    params, data, test, rows = _fit(config, master, save_cb=save_cb)
    metrics_path = out / "metrics.csv"
    _write_csv(metrics_path, METRICS_HEADER, (r.to_csv() for r in rows))
    return TrainResult(params=params, data=data, test=test, rows=rows,
                       metrics_path=metrics_path, checkpoint_dir=ckpt_dir)


def _final_eval(config: ExperimentConfig, params: MlpParams, data: Dataset,
                test: Dataset) -> tuple[EvalReport, EvalReport]:
    train_reps = forward_batch(params, data.xs)[0]
    test_reps = forward_batch(params, test.xs)[0]
    knn = knn_eval(train_reps, data.ys, test_reps, test.ys, config.knn_k)
    probe = linear_probe(train_reps, data.ys, test_reps, test.ys,
                         config.probe_epochs, config.probe_lr)
    return knn, probe


def run_grid(config: ExperimentConfig, alphas, lambdas,
             selectors=("balanced", "generalized"), out_dir=None) -> list[dict]:
    """One full training per (selector, alpha, lambda) cell.

    Cell seeds derive from (master, selector, alpha, lambda) alone, so
    growing the grid never changes existing cells.  Returns row dicts and
    writes grid.csv when ``out_dir`` is given.
    """
    alphas = [float(a) for a in alphas]
    lambdas = [float(l) for l in lambdas]
    if not alphas or not lambdas:
        raise ConfigInvalid("grid needs nonempty alpha and lambda lists")
    rows = []
    for selector in selectors:
        if selector not in ("balanced", "generalized"):
            raise ConfigInvalid(f"grid supports balanced/generalized, got {selector!r}")
        for alpha in alphas:
            for lam in lambdas:
                try:
                    cell_params = LossParams(alpha=alpha, lam=lam)
                except ValueError as exc:
                    raise ConfigInvalid(f"invalid grid cell ({alpha}, {lam}): {exc}")
                cell_cfg = replace(config, loss_name=selector, loss_params=cell_params)
                cell_seed = derive_seed(config.seed,
                                        f"grid-{selector}-a{fmt(alpha)}-l{fmt(lam)}", 0)
                params, data, test, _ = _fit(cell_cfg, cell_seed, with_metrics=False)
                knn, probe = _final_eval(cell_cfg, params, data, test)
                rows.append({"loss": selector, "alpha": alpha, "lambda": lam,
                             "knn_acc": knn.top1_accuracy,
                             "probe_acc": probe.top1_accuracy})
    if out_dir is not None:
        _write_csv(Path(out_dir) / "grid.csv", GRID_HEADER,
                   (",".join([r["loss"], fmt(r["alpha"]), fmt(r["lambda"]),
                              fmt(r["knn_acc"]), fmt(r["probe_acc"])])
                    for r in rows))
    return rows


# ---------------------------------------------------------------------------
# Verification and measurement commands


def run_verify(trials: int, seed: int, suites=None, corrupt: bool = False,
               out_dir=None) -> list[SuiteResult]:
    """Run randomized suites; write verify.csv when ``out_dir`` is given."""
    results = run_all_suites(trials, seed, suites=suites, corrupt=corrupt)
    if out_dir is not None:
        _write_csv(Path(out_dir) / "verify.csv", VERIFY_HEADER,
                   (",".join([r.suite, str(r.trials), str(r.violations),
                              fmt(r.max_violation), fmt(r.mean_gap)])
                    for r in results))
    return results


_CKPT_RE = re.compile(r"ckpt_(\d+)\.txt$")


def list_checkpoints(out_dir) -> list[tuple[int, Path]]:
    """(epoch, path) pairs found under out_dir/checkpoints, epoch order."""
    ckpt_dir = Path(out_dir) / "checkpoints"
    if not ckpt_dir.is_dir():
        raise FileNotFoundError(f"no checkpoint directory at {ckpt_dir}")
    found = []
    for p in ckpt_dir.iterdir():
        m = _CKPT_RE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    if not found:
        raise FileNotFoundError(f"no checkpoints in {ckpt_dir}")
    return sorted(found)


def _rebuild_data(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    master = config.seed
    data = generate_dataset(config.resolved_dataset_spec(master))
    test = resample_balanced(data, config.test_samples,
                             derive_seed(master, "test-set", 0))
    return data, test


def run_bias(config: ExperimentConfig, out_dir) -> dict:
    """Bias of the latest checkpoint under the config's augmentations."""
    epoch, path = list_checkpoints(out_dir)[-1]
    params, _ = load_checkpoint(path)
    data, _ = _rebuild_data(config)
    report = prototype_bias(params, data, config.augmentation,
                            config.bias_k_samples, mode="both",
                            seed=derive_seed(config.seed, "bias-cli", 0))
    _write_csv(Path(out_dir) / "bias.csv", BIAS_HEADER,
               [",".join([fmt(report.bias_mc), fmt(report.bias_single),
                          str(report.k_samples), str(report.n_points)])])
    return {"epoch": epoch, "bias_mc": report.bias_mc,
            "bias_single": report.bias_single}


def run_gaps(config: ExperimentConfig, out_dir) -> list[tuple[int, float, float]]:
    """Bound-gap curve over every stored checkpoint; writes gaps.csv."""
    found = list_checkpoints(out_dir)
    params_seq = [load_checkpoint(p)[0] for _, p in found]
    data, _ = _rebuild_data(config)
    curve = gap_curve(params_seq, data, config.augmentation, config.gap_k_views,
                      config.loss_params.alpha,
                      seed=derive_seed(config.seed, "gaps-cli", 0))
    rows = [(epoch, a, r) for (epoch, _), (a, r) in zip(found, curve)]
    _write_csv(Path(out_dir) / "gaps.csv", GAPS_HEADER,
               (",".join([str(e), fmt(a), fmt(r)]) for e, a, r in rows))
    return rows


def run_eval(config: ExperimentConfig, out_dir) -> tuple[EvalReport, EvalReport]:
    """kNN and linear-probe accuracy of the latest checkpoint; eval.csv."""
    _, path = list_checkpoints(out_dir)[-1]
    params, _ = load_checkpoint(path)
    data, test = _rebuild_data(config)
    knn, probe = _final_eval(config, params, data, test)
    _write_csv(Path(out_dir) / "eval.csv", EVAL_HEADER,
               (",".join([r.protocol, fmt(r.top1_accuracy), str(r.n_test),
                          str(r.k_or_epochs)]) for r in (knn, probe)))
    return knn, probe


def _write_csv(path: Path, header: str, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")
