"""Contrastive loss family with exact gradients w.r.t. input representations.

Four batch losses share one per-anchor shape::

    -s(z, z+) + lam * (1/alpha) * log sum_{r in N(z)} exp(alpha * s(z, r))

and differ only in the anchor set, the negative set ``N(z)`` and the
effective ``lam``:

===============  ==================  ===============================  =====
loss             anchors             negative set N(z)                lam
===============  ==================  ===============================  =====
ntxent           both views (2m)     all 2m-1 other representations   1
decoupled        first view (m)      other-image second views (m-1)   1
balanced         both views (2m)     other-image reps (2(m-1))        lam
generalized      both views (2m)     all 2m-1 other representations   lam
===============  ==================  ===============================  =====

Reporting convention: every loss is the mean per-anchor value of the form
above, i.e. the cross-entropy bracket divided by alpha.  Under this single
convention ``generalized(lam=1, alpha=1/tau)`` equals ``ntxent(tau)``
anchor-wise; the two are implemented through different numerical routes so
that the equality is a meaningful regression check.

Gradients treat the representations as free inputs: the cosine terms are
differentiated by the full quotient rule at the given vectors and no
normalization Jacobian is applied here (that lives in the encoder, which
owns the mapping from pre-normalization activations to unit outputs).
"""

from __future__ import annotations

import math
from dataclasses import InitVar, dataclass, field

import numpy as np

from .errors import EmptyInput, NonPositiveAlpha
from .geometry import cosine_matrix, lse_scaled, row_norms

LOSS_KINDS = ("ntxent", "decoupled", "balanced", "generalized")


@dataclass
class LossParams:
    """Balancing parameters: ``alpha`` (inverse temperature) and ``lam``.

    ``lam`` absorbs the 1/nu factor of the theoretical bound; both must be
    strictly positive and finite.
    """

    alpha: float
    lam: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be finite and > 0, got {self.alpha}")
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lam must be finite and > 0, got {self.lam}")

    @property
    def tau(self) -> float:
        """Temperature, the inverse of ``alpha``."""
        return 1.0 / self.alpha


@dataclass
class BatchViews:
    """m positive pairs (z_i, z'_i): two augmented views per image.

    Rows of ``z`` and ``z_prime`` are unit vectors; index i pairs them as
    the positive pair.  Pass ``validate=False`` to skip the unit-norm check,
    e.g. when finite-difference probes push points slightly off the sphere.
    """

    z: np.ndarray
    z_prime: np.ndarray
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.z_prime = np.asarray(self.z_prime, dtype=np.float64)
        if self.z.shape != self.z_prime.shape or self.z.ndim != 2:
            raise ValueError(f"views must share shape (m, d), got {self.z.shape} vs {self.z_prime.shape}")
        if self.m < 2:
            raise ValueError(f"need m >= 2 pairs, got {self.m}")
        if validate:
            for name, mat in (("z", self.z), ("z_prime", self.z_prime)):
                err = np.max(np.abs(row_norms(mat) - 1.0))
                if err > 1e-9:
                    raise ValueError(f"{name} rows deviate from unit norm by {err:.3e}")

    @property
    def m(self) -> int:
        return self.z.shape[0]

    def stacked(self) -> np.ndarray:
        """All 2m representations, first view rows 0..m-1, second m..2m-1."""
        return np.vstack([self.z, self.z_prime])


@dataclass
class LossBreakdown:
    """Loss value split into its attracting and repelling components."""

    total: float
    attract: float
    repel: float
    per_anchor: np.ndarray = field(repr=False)


@dataclass
class RepGradients:
    """d(total)/d(representation) for every input view, shapes as BatchViews."""

    d_z: np.ndarray
    d_z_prime: np.ndarray


def _anchor_mask(kind: str, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Anchor indices into the stacked 2m representations and, per anchor,
    the boolean mask of its negative set over the stacked columns."""
    two_m = 2 * m
    if kind in ("ntxent", "generalized"):
        anchors = np.arange(two_m)
        mask = ~np.eye(two_m, dtype=bool)
    elif kind == "balanced":
        anchors = np.arange(two_m)
        mask = ~np.eye(two_m, dtype=bool)
        mask[anchors, (anchors + m) % two_m] = False
    elif kind == "decoupled":
        anchors = np.arange(m)
        mask = np.zeros((m, two_m), dtype=bool)
        mask[:, m:] = ~np.eye(m, dtype=bool)
    else:
        raise ValueError(f"unknown loss kind {kind!r}, expected one of {LOSS_KINDS}")
    return anchors, mask


def _masked_softmax_lse(scores: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise log-sum-exp and softmax weights restricted to ``mask``."""
    neg_inf = np.full_like(scores, -np.inf)
    masked = np.where(mask, scores, neg_inf)
    row_max = masked.max(axis=1)
    expd = np.where(mask, np.exp(masked - row_max[:, None]), 0.0)
    z = expd.sum(axis=1)
    lse = row_max + np.log(z)
    return lse, expd / z[:, None]


def _evaluate(batch: BatchViews, kind: str, alpha: float, lam: float,
              want_grad: bool) -> tuple[LossBreakdown, RepGradients | None]:
    if alpha <= 0:
        raise NonPositiveAlpha(f"alpha must be > 0, got {alpha}")
    m = batch.m
    reps = batch.stacked()
    sims = cosine_matrix(reps, reps)
    anchors, mask = _anchor_mask(kind, m)
    partners = (anchors + m) % (2 * m)

    pos = sims[anchors, partners]
    lse_rows, weights = _masked_softmax_lse(alpha * sims[anchors], mask)
    repel_terms = lse_rows / alpha

    if kind == "ntxent":
        # Literal cross-entropy route: tau * (-alpha*s_pos + log sum exp(alpha*s)).
        per_anchor = (1.0 / alpha) * (-alpha * pos + lse_rows)
    else:
        per_anchor = -pos + lam * repel_terms

    attract = float(np.mean(-pos))
    repel = float(np.mean(repel_terms))
    breakdown = LossBreakdown(
        total=float(np.mean(per_anchor)),
        attract=attract,
        repel=repel,
        per_anchor=per_anchor,
    )
    if not want_grad:
        return breakdown, None

    # d(total)/d(sims[a, b]) accumulated over anchor rows.
    n_anchors = anchors.size
    coeff = np.zeros_like(sims)
    np.add.at(coeff, (anchors, partners), -1.0 / n_anchors)
    coeff[anchors] += (lam / n_anchors) * weights

    # Chain into the cosine quotient rule; sims is symmetric so fold both
    # orientations into sym and differentiate each pair once per row.
    sym = coeff + coeff.T
    norms = row_norms(reps)
    grad = (sym / np.outer(norms, norms)) @ reps
    grad -= ((sym * sims).sum(axis=1) / norms**2)[:, None] * reps
    return breakdown, RepGradients(d_z=grad[:m], d_z_prime=grad[m:])


def ntxent_loss(batch: BatchViews, tau: float) -> LossBreakdown:
    """NT-Xent with temperature ``tau``, symmetrized over both views.

    The denominator for anchor z_i sums exp(s/tau) over every other
    representation in the batch, positive included; the reported value is
    tau times the usual cross-entropy, matching the package convention.
    """
    if tau <= 0:
        raise NonPositiveAlpha(f"tau must be > 0, got {tau}")
    breakdown, _ = _evaluate(batch, "ntxent", alpha=1.0 / tau, lam=1.0, want_grad=False)
    return breakdown


def decoupled_loss(batch: BatchViews, alpha: float) -> LossBreakdown:
    """Decoupled contrastive loss: positive pair excluded from the denominator.

    Anchors only the first view (the literal single-sided form); negatives
    are the cross-view representations of the other m-1 images.
    """
    breakdown, _ = _evaluate(batch, "decoupled", alpha=alpha, lam=1.0, want_grad=False)
    return breakdown


def balanced_contrastive_loss(batch: BatchViews, p: LossParams) -> LossBreakdown:
    """Balanced contrastive loss over the 2(m-1) other-image negatives.

    Per anchor z: ``-s(z, z+) + lam * (1/alpha) log sum exp(alpha s(z, z-))``,
    averaged over all 2m anchors.
    """
    breakdown, _ = _evaluate(batch, "balanced", alpha=p.alpha, lam=p.lam, want_grad=False)
    return breakdown


def generalized_ntxent_loss(batch: BatchViews, p: LossParams) -> LossBreakdown:
    """Balanced-form loss whose repelling set also contains the positive.

    The repelling sum runs over all 2m-1 representations other than the
    anchor itself; at ``lam = 1`` this reproduces ``ntxent_loss(1/alpha)``.
    """
    breakdown, _ = _evaluate(batch, "generalized", alpha=p.alpha, lam=p.lam, want_grad=False)
    return breakdown


def loss_by_name(batch: BatchViews, p: LossParams, which: str) -> LossBreakdown:
    """Dispatch helper for training code; ``which`` is one of LOSS_KINDS."""
    if which == "ntxent":
        return ntxent_loss(batch, tau=p.tau)
    if which == "decoupled":
        return decoupled_loss(batch, alpha=p.alpha)
    if which == "balanced":
        return balanced_contrastive_loss(batch, p)
    if which == "generalized":
        return generalized_ntxent_loss(batch, p)
    raise ValueError(f"unknown loss kind {which!r}, expected one of {LOSS_KINDS}")


def loss_grad_wrt_reps(batch: BatchViews, p: LossParams, which: str) -> RepGradients:
    """Analytic gradient of the selected loss total w.r.t. every view.

    ``ntxent`` and ``decoupled`` ignore ``p.lam`` (their effective lam is 1).
    Matches central finite differences of the loss on freely perturbed
    representations to <= 1e-4 relative error.
    """
    lam = 1.0 if which in ("ntxent", "decoupled") else p.lam
    _, grads = _evaluate(batch, which, alpha=p.alpha, lam=lam, want_grad=True)
    return grads


def total_loss_theoretical(anchor, views, negatives, alpha: float,
                           lambda_over_nu: float) -> float:
    """One-anchor total loss: view-averaged attract plus weighted repel.

    Computes both the direct sum-of-terms form and the rearranged
    log-of-ratio form and asserts they agree to 1e-9 before returning the
    direct value.
    """
    if lambda_over_nu <= 0:
        raise ValueError(f"lambda_over_nu must be > 0, got {lambda_over_nu}")
    if alpha <= 0:
        raise NonPositiveAlpha(f"alpha must be > 0, got {alpha}")
    a = np.asarray(anchor, dtype=np.float64).reshape(1, -1)
    v = np.asarray(views, dtype=np.float64)
    n = np.asarray(negatives, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise EmptyInput("views must be a nonempty sequence of vectors")
    if n.ndim != 2 or n.shape[0] == 0:
        raise EmptyInput("negatives must be a nonempty sequence of vectors")

    s_views = cosine_matrix(a, v)[0]
    s_negs = cosine_matrix(a, n)[0]

    repel = lse_scaled(alpha, s_negs)
    direct = float(np.mean(-s_views + lambda_over_nu * repel))

    # Rearranged route: mean over views of -(1/alpha) log(exp(alpha s_k) / D^l),
    # evaluated through the literal ratio when neither exp nor D^l can
    # overflow; otherwise through the expanded stable form.
    if alpha <= 500.0 and lambda_over_nu * (alpha + math.log(n.shape[0])) <= 600.0:
        denom = float(np.sum(np.exp(alpha * s_negs)))
        ratios = np.exp(alpha * s_views) / denom**lambda_over_nu
        rearranged = float(np.mean(-np.log(ratios) / alpha))
    else:
        rearranged = float(np.mean(
            (-alpha * s_views + lambda_over_nu * alpha * repel) / alpha))
    assert abs(direct - rearranged) <= 1e-9, (
        f"sum form {direct!r} and log-ratio form {rearranged!r} disagree")
    return direct


__all__ = [
    "LOSS_KINDS",
    "LossParams",
    "BatchViews",
    "LossBreakdown",
    "RepGradients",
    "ntxent_loss",
    "decoupled_loss",
    "balanced_contrastive_loss",
    "generalized_ntxent_loss",
    "loss_by_name",
    "loss_grad_wrt_reps",
    "total_loss_theoretical",
]
