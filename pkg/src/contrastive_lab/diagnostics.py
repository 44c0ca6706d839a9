"""Numerical verification of the bound inequalities and bias estimators.

Four families of checks live here:

* smooth-max lemmas: the scaled log-sum-exp sandwich, its convexity, and
  the max-of-products inequality;
* the attract bound: similarity to the mean of views upper-bounded by the
  mean similarity to the views, under the hemisphere precondition;
* the repel bound: max similarity to any class mean upper-bounded by a
  scaled log-mean-exp over a finite balanced population, with the 1/nu
  class-mean-norm factor;
* estimators used by experiments: per-checkpoint mean bound gaps and the
  prototype-representation bias in its two forms.

Finite populations stand in for the distributions the statements quantify
over, so every expectation is an exact average and the inequalities can be
checked to floating-point accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import MlpParams, forward_batch
from .errors import (DimensionMismatch, EmptyInput, NearZeroNorm,
                     NonPositiveAlpha, PreconditionViolated, SingletonClass,
                     UnbalancedClasses)
from .geometry import NORM_EPS, cosine_similarity, lse_scaled
from .seeding import derive_seed
from .synthdata import (AugmentationSpec, Dataset, augment_batch,
                        augment_pair_batch)

# Slack absorbing float summation error at the population sizes used here.
INEQ_TOL = 1e-9

SUITE_NAMES = ("lemma1", "lemma2", "lemma3", "theorem1", "theorem2")


@dataclass
class AttractBoundReport:
    lhs: float  # -similarity(anchor, mean of views)
    rhs: float  # -(mean similarity of anchor to each view)
    gap: float  # rhs - lhs, nonnegative whenever precondition_ok
    precondition_ok: bool  # hemisphere check: anchor . mean(views) >= 0
    k_views: int


@dataclass
class RepelBoundReport:
    lhs: float  # max over classes of similarity(anchor, class mean)
    rhs: float  # (log mean exp + log n) / (nu * alpha)
    gap: float
    nu: float  # smallest class-mean norm
    alpha: float
    n_classes: int


@dataclass
class BiasReport:
    bias_mc: float  # definition estimator; NaN when not requested
    bias_single: float  # shared-transform estimator; NaN when not requested
    k_samples: int
    n_points: int


@dataclass
class SuiteResult:
    """Aggregate of one randomized inequality suite."""

    suite: str
    trials: int
    violations: int
    max_violation: float  # largest observed negative gap magnitude, else 0
    mean_gap: float
    excluded: int = 0  # trials skipped: precondition failed or degenerate draw


# ---------------------------------------------------------------------------
# Smooth-max lemmas


def _lemma1_slacks(alpha: float, xs: np.ndarray) -> tuple[float, float]:
    u = lse_scaled(alpha, xs)
    mx = float(np.max(xs))
    return u - mx, mx + math.log(len(xs)) / alpha - u


def check_lemma1(alpha: float, xs) -> tuple[bool, bool, tuple[float, float]]:
    """Sandwich check: max <= scaled lse <= max + log(n)/alpha.

    Returns (lower_ok, upper_ok, (lower_slack, upper_slack)); a slack is
    how far the corresponding inequality holds beyond equality.
    """
    xs = np.asarray(xs, dtype=np.float64)
    lower, upper = _lemma1_slacks(alpha, xs)
    return lower >= -INEQ_TOL, upper >= -INEQ_TOL, (lower, upper)


def _lemma2_slack(alpha: float, x: np.ndarray, y: np.ndarray) -> float:
    mid = lse_scaled(alpha, (x + y) / 2.0)
    return (lse_scaled(alpha, x) + lse_scaled(alpha, y)) / 2.0 - mid


def check_lemma2(alpha: float, x, y) -> bool:
    """Midpoint convexity of the scaled log-sum-exp."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"shape mismatch: {x.shape} vs {y.shape}")
    return _lemma2_slack(alpha, x, y) >= -INEQ_TOL


def _lemma3_slack(g1: np.ndarray, g2: np.ndarray) -> float:
    return float(np.max(g1) * np.max(g2) - np.max(g1 * g2))


def check_lemma3(g1, g2) -> bool:
    """max(g1*g2) <= max(g1)*max(g2) for g1 >= 0 and max(g2) >= 0."""
    g1 = np.asarray(g1, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    if g1.size == 0 or g1.shape != g2.shape:
        raise DimensionMismatch(f"paired sequences required, got {g1.shape} vs {g2.shape}")
    if np.any(g1 < 0):
        raise PreconditionViolated("g1 must be elementwise nonnegative")
    if np.max(g2) < 0:
        raise PreconditionViolated("g2 must attain a nonnegative maximum")
    return _lemma3_slack(g1, g2) >= -1e-12


# ---------------------------------------------------------------------------
# Bound gaps on explicit vectors


def attract_bound_gap(anchor, views) -> AttractBoundReport:
    """Gap of the attract inequality for one anchor and its view set."""
    anchor = np.asarray(anchor, dtype=np.float64)
    views = np.asarray(views, dtype=np.float64)
    if views.ndim == 1:
        views = views[None, :]
    if views.size == 0:
        raise EmptyInput("need at least one view")
    a_norm = float(np.linalg.norm(anchor))
    v_norms = np.linalg.norm(views, axis=1)
    if a_norm < NORM_EPS or np.any(v_norms < NORM_EPS):
        raise NearZeroNorm("anchor and views must be nonzero")
    mean_view = views.mean(axis=0)
    lhs = -cosine_similarity(anchor, mean_view)  # NearZeroNorm if mean collapses
    rhs = -float(np.mean((views @ anchor) / (v_norms * a_norm)))
    return AttractBoundReport(
        lhs=lhs, rhs=rhs, gap=rhs - lhs,
        precondition_ok=bool(float(anchor @ mean_view) >= 0.0),
        k_views=views.shape[0])


def _log_mean_exp(values: np.ndarray) -> float:
    m = float(np.max(values))
    return m + math.log(float(np.mean(np.exp(values - m))))


def repel_bound_gap(anchor, population, alpha: float) -> RepelBoundReport:
    """Gap of the repel inequality against a finite balanced population.

    ``population`` is one list of representations per non-anchor class; it
    is treated as the exact law of the negatives, so the class expectation
    is the in-class average and the outer expectation averages the classes.
    """
    if alpha <= 0:
        raise NonPositiveAlpha(f"alpha must be > 0, got {alpha}")
    classes = [np.asarray(c, dtype=np.float64) for c in population]
    classes = [c[None, :] if c.ndim == 1 else c for c in classes]
    if len(classes) < 2:
        raise PreconditionViolated("need at least 2 negative classes")
    sizes = {c.shape[0] for c in classes}
    if len(sizes) != 1:
        raise UnbalancedClasses(f"class sizes differ: {sorted(c.shape[0] for c in classes)}")
    anchor = np.asarray(anchor, dtype=np.float64)
    a_norm = float(np.linalg.norm(anchor))
    if a_norm < NORM_EPS:
        raise NearZeroNorm("anchor must be nonzero")
    n = len(classes)
    means = np.vstack([c.mean(axis=0) for c in classes])
    mean_norms = np.linalg.norm(means, axis=1)
    if np.any(mean_norms < NORM_EPS):
        raise NearZeroNorm("a class-mean representation vanished")
    lhs = float(np.max((means @ anchor) / (mean_norms * a_norm)))
    nu = float(np.min(mean_norms))
    log_inner = np.empty(n)
    for i, c in enumerate(classes):
        sims = (c @ anchor) / (np.linalg.norm(c, axis=1) * a_norm)
        log_inner[i] = _log_mean_exp(alpha * sims)
    rhs = (_log_mean_exp(log_inner) + math.log(n)) / (nu * alpha)
    return RepelBoundReport(lhs=lhs, rhs=rhs, gap=rhs - lhs, nu=nu,
                            alpha=alpha, n_classes=n)


# ---------------------------------------------------------------------------
# Dataset-level estimators


def _require_balanced(data: Dataset) -> int:
    sizes = set(int(c) for c in data.counts)
    if len(sizes) != 1:
        raise UnbalancedClasses(f"class counts differ: {sorted(sizes)}")
    return sizes.pop()


def _mean_attract_gap(anchors: np.ndarray, view_stack: np.ndarray) -> float:
    vmean = view_stack.mean(axis=0)
    vnorm = np.linalg.norm(vmean, axis=1)
    if np.any(vnorm < NORM_EPS):
        raise NearZeroNorm("a mean-of-views representation vanished")
    lhs = -np.einsum("nd,nd->n", anchors, vmean) / vnorm
    rhs = -np.einsum("knd,nd->kn", view_stack, anchors).mean(axis=0)
    return float(np.mean(rhs - lhs))


def _mean_repel_gap(anchors: np.ndarray, ys: np.ndarray, bank: np.ndarray,
                    n_classes: int, per_class: int, alpha: float) -> float:
    mus = np.vstack([bank[ys == y].mean(axis=0) for y in range(n_classes)])
    mu_norms = np.linalg.norm(mus, axis=1)
    if np.any(mu_norms < NORM_EPS):
        raise NearZeroNorm("a class-mean representation vanished")
    scaled = alpha * (anchors @ bank.T)
    m = scaled.max(axis=1, keepdims=True)
    e = np.exp(scaled - m)
    sums = np.stack([e[:, ys == y].sum(axis=1) for y in range(n_classes)], axis=1)
    log_inner = m + np.log(sums / per_class)  # per-class log mean exp
    allow = ys[:, None] != np.arange(n_classes)[None, :]
    li = np.where(allow, log_inner, -np.inf)
    mm = li.max(axis=1, keepdims=True)
    log_outer = mm[:, 0] + np.log(np.exp(li - mm).sum(axis=1) / (n_classes - 1))
    lhs = np.where(allow, (anchors @ mus.T) / mu_norms[None, :], -np.inf).max(axis=1)
    nu = np.where(allow, mu_norms[None, :], np.inf).min(axis=1)
    rhs = (log_outer + math.log(n_classes - 1)) / (nu * alpha)
    return float(np.mean(rhs - lhs))


def checkpoint_gaps(params: MlpParams, data: Dataset, aug: AugmentationSpec,
                    k_views: int, alpha: float, seed: int,
                    include_repel: bool = True) -> tuple[float, float]:
    """Mean attract and repel bound gaps for one encoder state.

    Every sample anchors once through a fresh augmented view; the attract
    side uses ``k_views`` further independent views of the same input, the
    repel side one fresh view of every other-class sample as the finite
    negative population.  With ``include_repel=False`` (e.g. unbalanced
    data, where the repel bound is undefined) the repel slot is NaN.
    """
    if k_views < 1:
        raise ValueError("k_views must be >= 1")
    if alpha <= 0:
        raise NonPositiveAlpha(f"alpha must be > 0, got {alpha}")
    if include_repel:
        per_class = _require_balanced(data)
        if data.n_classes < 2:
            raise PreconditionViolated("repel gap needs at least 2 classes")
    rng = np.random.default_rng(derive_seed(seed, "gap-curve", 0))
    anchors = forward_batch(params, augment_batch(data.xs, aug, rng))[0]
    views = np.stack([
        forward_batch(params, augment_batch(data.xs, aug, rng))[0]
        for _ in range(k_views)])
    attract = _mean_attract_gap(anchors, views)
    if not include_repel:
        return attract, math.nan
    bank = forward_batch(params, augment_batch(data.xs, aug, rng))[0]
    ys = np.asarray(data.ys, dtype=np.int64)
    repel = _mean_repel_gap(anchors, ys, bank, data.n_classes, per_class, alpha)
    return attract, repel


def gap_curve(checkpoints, data: Dataset, aug: AugmentationSpec, k_views: int,
              alpha: float, seed: int) -> list[tuple[float, float]]:
    """Mean attract and repel bound gaps at each encoder checkpoint.

    Augmentation draws restart from ``seed`` at every checkpoint, so
    identical checkpoints score identically and curve points differ only
    through the parameters, never through fresh sampling noise.
    """
    checkpoints = list(checkpoints)
    if len(checkpoints) < 2:
        raise ValueError("need at least 2 checkpoints for a curve")
    return [checkpoint_gaps(params, data, aug, k_views, alpha, seed)
            for params in checkpoints]


def fraction_of_decreases(values) -> float:
    """Share of consecutive steps that strictly decrease; trend statistic."""
    values = list(values)
    if len(values) < 2:
        raise ValueError("need at least 2 values")
    drops = sum(1 for a, b in zip(values, values[1:]) if b < a)
    return drops / (len(values) - 1)


def _classmate_lookup(ys: np.ndarray, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Padded class-member index table plus per-row class size.

    Lookup depends only on the partition of indices into classes, so any
    relabeling of class ids leaves every row's candidate set unchanged.
    """
    members = [np.flatnonzero(ys == y) for y in range(n_classes)]
    width = max(len(m) for m in members)
    table = np.zeros((n_classes, width), dtype=np.int64)
    for y, m in enumerate(members):
        table[y, :len(m)] = m
    sizes = np.array([len(m) for m in members], dtype=np.int64)
    return table, sizes


def prototype_bias(params: MlpParams, data: Dataset, aug: AugmentationSpec,
                   k_samples: int, mode: str = "both", seed: int = 0) -> BiasReport:
    """Distance between class-level and per-input mean representations.

    definition mode: for every point, Monte Carlo estimates (k_samples
    draws each) of the class mean representation and of the mean over
    augmentations of the point itself; reports the average norm of their
    difference.  single_sample mode: one classmate draw and one transform
    draw per point, with the SAME transform applied to both the point and
    its classmate; reports the average representation distance.  ``both``
    computes the two estimators from independent streams, so each value
    matches what the corresponding single-mode call returns.
    """
    if k_samples < 1:
        raise ValueError("k_samples must be >= 1")
    if mode not in ("definition", "single_sample", "both"):
        raise ValueError(f"unknown mode {mode!r}")
    if np.any(np.asarray(data.counts) < 2):
        raise SingletonClass("every class needs at least 2 samples")
    ys = np.asarray(data.ys, dtype=np.int64)
    n_points = data.n
    table, sizes = _classmate_lookup(ys, data.n_classes)
    row_sizes = sizes[ys]

    def classmates(rng: np.random.Generator) -> np.ndarray:
        # One uniform per point, independent of class ids: relabel-invariant.
        picks = (rng.random(n_points) * row_sizes).astype(np.int64)
        return table[ys, picks]

    bias_mc = math.nan
    bias_single = math.nan
    if mode in ("definition", "both"):
        rng = np.random.default_rng(derive_seed(seed, "bias-definition", 0))
        proto_sum = None
        surr_sum = None
        for _ in range(k_samples):
            z_mate = forward_batch(params, augment_batch(data.xs[classmates(rng)], aug, rng))[0]
            z_self = forward_batch(params, augment_batch(data.xs, aug, rng))[0]
            proto_sum = z_mate if proto_sum is None else proto_sum + z_mate
            surr_sum = z_self if surr_sum is None else surr_sum + z_self
        diffs = (proto_sum - surr_sum) / k_samples
        bias_mc = float(np.mean(np.linalg.norm(diffs, axis=1)))
    if mode in ("single_sample", "both"):
        rng = np.random.default_rng(derive_seed(seed, "bias-single", 0))
        mates = classmates(rng)
        x_mate, x_self = augment_pair_batch(data.xs[mates], data.xs, aug, rng)
        z_mate = forward_batch(params, x_mate)[0]
        z_self = forward_batch(params, x_self)[0]
        bias_single = float(np.mean(np.linalg.norm(z_mate - z_self, axis=1)))
    return BiasReport(bias_mc=bias_mc, bias_single=bias_single,
                      k_samples=k_samples, n_points=n_points)


# ---------------------------------------------------------------------------
# Randomized suites


def _unit_rows(rng: np.random.Generator, rows: int, d: int) -> np.ndarray:
    v = rng.standard_normal((rows, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    while np.any(norms < 1e-12):  # probability-zero degenerate draw
        bad = norms[:, 0] < 1e-12
        v[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / norms


def _trial_lemma1(rng: np.random.Generator) -> float:
    n = int(rng.integers(2, 65))
    alpha = float(10.0 ** rng.uniform(-1.0, 2.0))
    scale = float(10.0 ** rng.uniform(-1.0, 1.0))
    xs = scale * rng.standard_normal(n)
    return min(_lemma1_slacks(alpha, xs))


def _trial_lemma2(rng: np.random.Generator) -> float:
    n = int(rng.integers(2, 65))
    alpha = float(10.0 ** rng.uniform(-1.0, 2.0))
    scale = float(10.0 ** rng.uniform(-1.0, 1.0))
    x = scale * rng.standard_normal(n)
    y = scale * rng.standard_normal(n)
    return _lemma2_slack(alpha, x, y)


def _trial_lemma3(rng: np.random.Generator) -> float:
    n = int(rng.integers(1, 65))
    g1 = np.abs(rng.standard_normal(n)) * float(10.0 ** rng.uniform(-1.0, 1.0))
    g2 = rng.standard_normal(n) + rng.uniform(-1.0, 1.0)
    while np.max(g2) < 0:  # keep the precondition; resample deterministically
        g2 = rng.standard_normal(n) + rng.uniform(-1.0, 1.0)
    return _lemma3_slack(g1, g2)


def _trial_theorem1(rng: np.random.Generator) -> float | None:
    d = int(rng.integers(2, 65))
    k = int(rng.integers(1, 17))
    anchor = _unit_rows(rng, 1, d)[0]
    views = _unit_rows(rng, k, d)
    try:
        report = attract_bound_gap(anchor, views)
    except NearZeroNorm:
        return None
    if not report.precondition_ok:
        return None
    return report.gap


def _trial_theorem2(rng: np.random.Generator) -> float | None:
    n = int(rng.integers(2, 17))
    per_class = int(rng.integers(2, 33))
    d = int(rng.integers(8, 65))
    alpha = float(rng.uniform(0.5, 16.0))
    anchor = _unit_rows(rng, 1, d)[0]
    population = [_unit_rows(rng, per_class, d) for _ in range(n)]
    try:
        report = repel_bound_gap(anchor, population, alpha)
    except NearZeroNorm:
        return None
    return report.gap


_TRIALS = {
    "lemma1": _trial_lemma1,
    "lemma2": _trial_lemma2,
    "lemma3": _trial_lemma3,
    "theorem1": _trial_theorem1,
    "theorem2": _trial_theorem2,
}


def run_suite(name: str, trials: int, seed: int, corrupt: bool = False) -> SuiteResult:
    """Run one randomized inequality suite.

    Each trial derives its generator from (seed, suite, trial index), so
    results do not depend on scheduling or on other suites.  ``corrupt``
    flips the sign of every measured gap; it exists as a negative control
    proving the machinery can fail.
    """
    if name not in _TRIALS:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITE_NAMES}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    violations = 0
    counted = 0
    excluded = 0
    gap_total = 0.0
    worst = 0.0
    trial = _TRIALS[name]
    for i in range(trials):
        rng = np.random.default_rng(derive_seed(seed, f"suite-{name}", i))
        gap = trial(rng)
        if gap is None:
            excluded += 1
            continue
        if corrupt:
            gap = -gap
        counted += 1
        gap_total += gap
        worst = max(worst, -gap)
        if gap < -INEQ_TOL:
            violations += 1
    mean_gap = gap_total / counted if counted else math.nan
    return SuiteResult(suite=name, trials=trials, violations=violations,
                       max_violation=worst, mean_gap=mean_gap, excluded=excluded)


def run_all_suites(trials: int, seed: int, suites=None,
                   corrupt: bool = False) -> list[SuiteResult]:
    names = SUITE_NAMES if suites is None else tuple(suites)
    return [run_suite(name, trials, seed, corrupt=corrupt) for name in names]
