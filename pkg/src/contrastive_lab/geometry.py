"""Vector primitives: normalization, similarity measures, scaled log-sum-exp.

Everything here is pure, operates on 1-D float64 arrays (or anything
``np.asarray`` accepts), and is safe to call concurrently.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyInput, NearZeroNorm, NonPositiveAlpha

# Norms below this are treated as representation collapse.
NORM_EPS = 1e-9


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    return arr


def normalize(v) -> np.ndarray:
    """Project ``v`` onto the unit sphere.

    Raises ``NearZeroNorm`` when ``||v|| < 1e-9``, which downstream code
    treats as a collapsed representation.
    """
    arr = _as_vector(v)
    n = float(np.linalg.norm(arr))
    if n < NORM_EPS:
        raise NearZeroNorm(f"norm {n:.3e} below threshold {NORM_EPS:.0e}")
    return arr / n


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``; symmetric, scale invariant."""
    va = _as_vector(a)
    vb = _as_vector(b)
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < NORM_EPS or nb < NORM_EPS:
        raise NearZeroNorm(f"norms ({na:.3e}, {nb:.3e}) below threshold")
    return float(np.dot(va, vb) / (na * nb))


def neg_sq_euclidean(a, b) -> float:
    """Negative squared Euclidean distance -||a - b||^2.

    On unit vectors this equals -2 + 2 a.b; computed directly so the
    identity is a testable property rather than an implementation detail.
    """
    va = _as_vector(a)
    vb = _as_vector(b)
    d = va - vb
    return -float(np.dot(d, d))


def lse_scaled(alpha: float, xs) -> float:
    """Scaled log-sum-exp ``(1/alpha) log sum_i exp(alpha x_i)``.

    Uses max-subtraction unconditionally, so it never overflows and is a
    smooth upper approximation of ``max(xs)`` that tightens as alpha grows:
    ``max(xs) <= lse_scaled(alpha, xs) <= max(xs) + log(n)/alpha``.
    """
    if alpha <= 0:
        raise NonPositiveAlpha(f"alpha must be > 0, got {alpha}")
    arr = _as_vector(xs)
    if arr.size == 0:
        raise EmptyInput("lse_scaled needs at least one value")
    scaled = alpha * arr
    m = float(np.max(scaled))
    return (m + float(np.log(np.sum(np.exp(scaled - m))))) / alpha


def row_norms(mat: np.ndarray) -> np.ndarray:
    """Euclidean norm of every row of a 2-D array."""
    return np.sqrt(np.einsum("ij,ij->i", mat, mat))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between rows of ``a`` and rows of ``b``.

    Batched counterpart of ``cosine_similarity`` used by losses, kNN and
    the bound verifiers; raises ``NearZeroNorm`` if any row has collapsed.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = row_norms(a)
    nb = row_norms(b)
    if np.any(na < NORM_EPS) or np.any(nb < NORM_EPS):
        raise NearZeroNorm("a row norm fell below the collapse threshold")
    return (a @ b.T) / np.outer(na, nb)


def normalize_rows(mat: np.ndarray) -> np.ndarray:
    """Normalize every row of ``mat`` to unit length."""
    mat = np.asarray(mat, dtype=np.float64)
    n = row_norms(mat)
    if np.any(n < NORM_EPS):
        raise NearZeroNorm("a row norm fell below the collapse threshold")
    return mat / n[:, None]
