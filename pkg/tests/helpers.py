"""Small shared helpers for the test suite."""

import numpy as np

from contrastive_lab import BatchViews


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """n random unit vectors in R^d; norms bounded away from zero by resampling."""
    v = rng.standard_normal((n, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    while np.any(norms < 1e-12):
        bad = norms[:, 0] < 1e-12
        v[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / norms


def random_batch(rng: np.random.Generator, m: int, d: int) -> BatchViews:
    return BatchViews(unit_rows(rng, m, d), unit_rows(rng, m, d))


def rel_err(analytic: float, numeric: float, floor: float = 1e-4) -> float:
    """Relative error with a floor on the denominator.

    The floor keeps coordinates whose true gradient is essentially zero from
    dividing finite-difference noise by itself.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
