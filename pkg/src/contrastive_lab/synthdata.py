"""Synthetic labeled vector datasets with label-preserving augmentations.

Classes are unit prototype directions plus isotropic Gaussian noise; class
counts follow either a uniform or a rank-based Pareto profile.  The three
augmentation knobs (additive noise, random 2-plane rotation, coordinate
masking) are vector stand-ins for image transforms and never touch labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .geometry import normalize

ALL_TRANSFORMS = ("noise", "rotation", "mask")
# Prototype directions are re-drawn until pairwise cosine <= this, keeping
# classes separable at desk scale.
PROTO_MAX_COS = 0.9


@dataclass
class DatasetSpec:
    """Recipe for one synthetic dataset; fully determined by ``seed``."""

    n_classes: int
    d_in: int
    total_samples: int
    class_noise_sigma: float = 0.25
    distribution: str = "uniform"  # "uniform" | "pareto"
    pareto_shape: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.d_in < 1:
            raise ValueError("n_classes and d_in must be >= 1")
        if self.total_samples < self.n_classes:
            raise ValueError("total_samples must be >= n_classes")
        if self.class_noise_sigma < 0:
            raise ValueError("class_noise_sigma must be >= 0")
        if self.distribution not in ("uniform", "pareto"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.distribution == "pareto" and self.pareto_shape <= 0:
            raise ValueError("pareto_shape must be > 0")


@dataclass
class AugmentationSpec:
    """Stochastic label-preserving transform family.

    Enabled transforms apply in fixed order: additive Gaussian noise,
    rotation by a uniform angle in a random 2-plane, independent
    coordinate zeroing with probability ``mask_prob``.
    """

    noise_sigma: float = 0.0
    rotation_angle_max: float = 0.0
    mask_prob: float = 0.0
    enabled: tuple[str, ...] = ALL_TRANSFORMS

    def __post_init__(self):
        if self.noise_sigma < 0 or self.rotation_angle_max < 0:
            raise ValueError("noise_sigma and rotation_angle_max must be >= 0")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError("mask_prob must be in [0, 1]")
        unknown = set(self.enabled) - set(ALL_TRANSFORMS)
        if unknown:
            raise ValueError(f"unknown transforms {sorted(unknown)}")
        self.enabled = tuple(self.enabled)


@dataclass
class LabeledSample:
    x: np.ndarray
    y: int


@dataclass
class Dataset:
    """Generated samples in class order plus the prototypes they came from."""

    xs: np.ndarray  # (N, d_in)
    ys: np.ndarray  # (N,) int class indices
    counts: np.ndarray  # per-class sample counts
    prototypes: np.ndarray | None = None  # (n_classes, d_in) unit rows
    spec: DatasetSpec | None = None

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.counts)

    @property
    def d_in(self) -> int:
        return self.xs.shape[1]

    def samples(self) -> Iterator[LabeledSample]:
        for x, y in zip(self.xs, self.ys):
            yield LabeledSample(x=x, y=int(y))

    def class_indices(self, y: int) -> np.ndarray:
        return np.flatnonzero(self.ys == y)


def pareto_counts(n_classes: int, total: int, shape: float) -> np.ndarray:
    """Deterministic long-tailed class counts summing exactly to ``total``.

    Counts are proportional to rank^(-1/shape) (rank 1 = head class),
    rounded by largest remainder with index tie-breaking, then bumped so
    every class keeps at least one sample.  Output is nonincreasing.
    """
    if shape <= 0:
        raise ValueError("shape must be > 0")
    if total < n_classes:
        raise ValueError("total must be >= n_classes")
    ranks = np.arange(1, n_classes + 1, dtype=np.float64)
    weights = ranks ** (-1.0 / shape)
    quotas = total * weights / weights.sum()
    counts = np.floor(quotas).astype(np.int64)
    frac = quotas - counts
    leftover = total - int(counts.sum())
    order = np.argsort(-frac, kind="stable")
    counts[order[:leftover]] += 1
    # Guarantee a nonempty tail: move samples from the head until min >= 1.
    while np.any(counts == 0):
        counts[int(np.argmax(counts))] -= 1
        counts[int(np.argmin(counts))] += 1
    return counts


def _draw_prototypes(n_classes: int, d_in: int, rng: np.random.Generator) -> np.ndarray:
    protos: list[np.ndarray] = []
    attempts = 0
    while len(protos) < n_classes:
        attempts += 1
        if attempts > 1000 * n_classes:
            raise ValueError(
                f"cannot place {n_classes} prototypes with pairwise cos <= "
                f"{PROTO_MAX_COS} in {d_in} dimensions")
        cand = normalize(rng.standard_normal(d_in))
        if all(float(np.dot(cand, p)) <= PROTO_MAX_COS for p in protos):
            protos.append(cand)
    return np.vstack(protos)


def sample_around_prototypes(prototypes: np.ndarray, counts, sigma: float,
                             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``counts[y]`` points around each prototype, in class order."""
    blocks, labels = [], []
    for y, c in enumerate(counts):
        c = int(c)
        blocks.append(prototypes[y] + sigma * rng.standard_normal((c, prototypes.shape[1])))
        labels.append(np.full(c, y, dtype=np.int64))
    return np.vstack(blocks), np.concatenate(labels)


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Generate a dataset as specified; bit-identical for identical specs.

    Uniform mode requires n_classes to divide total_samples so the result
    is exactly balanced rather than approximately so.
    """
    rng = np.random.default_rng(spec.seed)
    protos = _draw_prototypes(spec.n_classes, spec.d_in, rng)
    if spec.distribution == "uniform":
        if spec.total_samples % spec.n_classes != 0:
            raise ValueError(
                f"uniform mode needs n_classes | total_samples, got "
                f"{spec.n_classes} and {spec.total_samples}")
        counts = np.full(spec.n_classes, spec.total_samples // spec.n_classes, dtype=np.int64)
    else:
        counts = pareto_counts(spec.n_classes, spec.total_samples, spec.pareto_shape)
    xs, ys = sample_around_prototypes(protos, counts, spec.class_noise_sigma, rng)
    return Dataset(xs=xs, ys=ys, counts=counts, prototypes=protos, spec=spec)


def resample_balanced(dataset: Dataset, total: int, seed: int) -> Dataset:
    """Fresh balanced draw from the same prototypes (held-out test split)."""
    if dataset.prototypes is None or dataset.spec is None:
        raise ValueError("dataset lacks prototypes; cannot resample")
    if total % dataset.n_classes != 0:
        raise ValueError("balanced resample needs n_classes | total")
    rng = np.random.default_rng(seed)
    counts = np.full(dataset.n_classes, total // dataset.n_classes, dtype=np.int64)
    xs, ys = sample_around_prototypes(dataset.prototypes, counts,
                                      dataset.spec.class_noise_sigma, rng)
    return Dataset(xs=xs, ys=ys, counts=counts, prototypes=dataset.prototypes,
                   spec=dataset.spec)


def _orthonormal_pairs(batch: int, d: int, rng: np.random.Generator
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Per-row random orthonormal 2-frames via Gram-Schmidt."""
    u = rng.standard_normal((batch, d))
    v = rng.standard_normal((batch, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v -= np.einsum("ij,ij->i", v, u)[:, None] * u
    vn = np.linalg.norm(v, axis=1, keepdims=True)
    while np.any(vn < 1e-12):  # measure-zero degenerate draw; retry those rows
        bad = vn[:, 0] < 1e-12
        v[bad] = rng.standard_normal((int(bad.sum()), d))
        v -= np.einsum("ij,ij->i", v, u)[:, None] * u
        vn = np.linalg.norm(v, axis=1, keepdims=True)
    return u, v / vn


def _draw_transform(batch: int, d: int, aug: AugmentationSpec,
                    rng: np.random.Generator) -> dict:
    """Sample per-row transform parameters for every enabled knob."""
    draws: dict = {}
    if "noise" in aug.enabled and aug.noise_sigma > 0:
        draws["noise"] = aug.noise_sigma * rng.standard_normal((batch, d))
    if "rotation" in aug.enabled and aug.rotation_angle_max > 0 and d >= 2:
        u, v = _orthonormal_pairs(batch, d, rng)
        draws["rotation"] = (u, v, rng.uniform(0.0, aug.rotation_angle_max, size=batch))
    if "mask" in aug.enabled and aug.mask_prob > 0:
        draws["mask"] = rng.random((batch, d)) < aug.mask_prob
    return draws


def _apply_transform(xs: np.ndarray, draws: dict) -> np.ndarray:
    out = np.array(xs, dtype=np.float64, copy=True)
    if "noise" in draws:
        out += draws["noise"]
    if "rotation" in draws:
        u, v, theta = draws["rotation"]
        p = np.einsum("ij,ij->i", out, u)
        q = np.einsum("ij,ij->i", out, v)
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        out += ((cos_t - 1.0) * p - sin_t * q)[:, None] * u \
            + ((cos_t - 1.0) * q + sin_t * p)[:, None] * v
    if "mask" in draws:
        out[draws["mask"]] = 0.0
    return out


def augment_batch(xs: np.ndarray, aug: AugmentationSpec,
                  rng: np.random.Generator) -> np.ndarray:
    """Apply one independent augmentation draw to every row of ``xs``."""
    out = np.asarray(xs, dtype=np.float64)
    if out.ndim == 1:
        out = out[None, :]
    return _apply_transform(out, _draw_transform(out.shape[0], out.shape[1], aug, rng))


def augment_pair_batch(xs_a: np.ndarray, xs_b: np.ndarray, aug: AugmentationSpec,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Apply the SAME per-row transform draw to two aligned batches.

    Used where an estimator calls for one transform shared by a pair of
    inputs rather than two independent draws.
    """
    a = np.asarray(xs_a, dtype=np.float64)
    b = np.asarray(xs_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"paired batches must match, got {a.shape} vs {b.shape}")
    draws = _draw_transform(a.shape[0], a.shape[1], aug, rng)
    return _apply_transform(a, draws), _apply_transform(b, draws)


def augment(x, aug: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    """One augmentation draw for a single vector; label unchanged by design."""
    return augment_batch(np.asarray(x, dtype=np.float64)[None, :], aug, rng)[0]


def dump_csv(dataset: Dataset, path) -> None:
    """Write a dataset for cross-implementation comparison.

    Line 1 names the metadata columns (d_in, n_classes), line 2 holds their
    values, line 3 names the sample columns, then one row per sample:
    label followed by the d_in coordinates.
    """
    with open(path, "w", newline="\n") as fh:
        fh.write("d_in,n_classes\n")
        fh.write(f"{dataset.d_in},{dataset.n_classes}\n")
        fh.write("y," + ",".join(f"x{i}" for i in range(dataset.d_in)) + "\n")
        for x, y in zip(dataset.xs, dataset.ys):
            fh.write(f"{int(y)}," + ",".join(f"{v:.17g}" for v in x) + "\n")


def load_csv(path) -> Dataset:
    """Read a dataset written by ``dump_csv`` (prototypes are not stored)."""
    with open(path) as fh:
        if fh.readline().strip() != "d_in,n_classes":
            raise ValueError("not a dataset CSV: bad metadata header")
        d_in, n_classes = (int(t) for t in fh.readline().strip().split(","))
        fh.readline()  # sample column header
        xs, ys = [], []
        for line in fh:
            parts = line.strip().split(",")
            ys.append(int(parts[0]))
            xs.append([float(t) for t in parts[1:]])
    xs_arr = np.asarray(xs, dtype=np.float64).reshape(len(ys), d_in)
    ys_arr = np.asarray(ys, dtype=np.int64)
    counts = np.bincount(ys_arr, minlength=n_classes)
    return Dataset(xs=xs_arr, ys=ys_arr, counts=counts)
