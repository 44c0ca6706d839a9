"""Frozen-representation quality: cosine kNN and a linear probe.

Both protocols are deterministic functions of their inputs.  The kNN
neighbor set and vote are defined purely in terms of similarity values and
labels, so any permutation of the training set scores identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KTooLarge
from .geometry import normalize_rows


@dataclass
class EvalReport:
    protocol: str  # "knn" | "linear"
    top1_accuracy: float
    n_test: int
    k_or_epochs: int


def knn_eval(train_reps, train_labels, test_reps, test_labels, k: int) -> EvalReport:
    """k-nearest-neighbor top-1 accuracy under cosine similarity.

    Votes are majority over the k most similar training points; vote ties
    break by larger summed similarity, then by smaller class index.  When
    several training points tie exactly at the k-th similarity, those with
    smaller class index enter first, keeping the result independent of
    training-set order.
    """
    train_reps = normalize_rows(np.asarray(train_reps, dtype=np.float64))
    test_reps = normalize_rows(np.asarray(test_reps, dtype=np.float64))
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > train_reps.shape[0]:
        raise KTooLarge(f"k={k} exceeds training size {train_reps.shape[0]}")
    n_classes = int(max(train_labels.max(), test_labels.max())) + 1
    sims = test_reps @ train_reps.T
    correct = 0
    for row, truth in zip(sims, test_labels):
        order = np.lexsort((train_labels, -row))[:k]
        top_labels = train_labels[order]
        votes = np.bincount(top_labels, minlength=n_classes)
        vote_sims = np.bincount(top_labels, weights=row[order], minlength=n_classes)
        leaders = np.flatnonzero(votes == votes.max())
        pred = leaders[np.argmax(vote_sims[leaders])]  # argmax takes the first
        correct += int(pred == truth)
    return EvalReport(protocol="knn",
                      top1_accuracy=correct / len(test_labels),
                      n_test=len(test_labels), k_or_epochs=k)


def probe_loss_and_grad(weights: np.ndarray, bias: np.ndarray, reps: np.ndarray,
                        labels: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean softmax cross-entropy and its exact gradients."""
    logits = reps @ weights + bias
    logits -= logits.max(axis=1, keepdims=True)
    expd = np.exp(logits)
    probs = expd / expd.sum(axis=1, keepdims=True)
    n = reps.shape[0]
    idx = np.arange(n)
    loss = float(-np.mean(np.log(probs[idx, labels])))
    probs[idx, labels] -= 1.0
    probs /= n
    return loss, reps.T @ probs, probs.sum(axis=0)


def linear_probe(train_reps, train_labels, test_reps, test_labels,
                 epochs: int, lr: float) -> EvalReport:
    """Multinomial logistic regression on frozen representations.

    Full-batch gradient descent from zero-initialized weights and bias;
    no stochasticity, so repeated runs agree exactly.  Prediction ties go
    to the smaller class index.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if lr <= 0:
        raise ValueError("lr must be > 0")
    train_reps = np.asarray(train_reps, dtype=np.float64)
    test_reps = np.asarray(test_reps, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    n_classes = int(max(train_labels.max(), test_labels.max())) + 1
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    weights = np.zeros((train_reps.shape[1], n_classes))
    bias = np.zeros(n_classes)
    for _ in range(epochs):
        _, d_w, d_b = probe_loss_and_grad(weights, bias, train_reps, train_labels)
        weights -= lr * d_w
        bias -= lr * d_b
    preds = np.argmax(test_reps @ weights + bias, axis=1)
    return EvalReport(protocol="linear",
                      top1_accuracy=float(np.mean(preds == test_labels)),
                      n_test=len(test_labels), k_or_epochs=epochs)
