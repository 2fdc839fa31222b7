"""Latin hypercube sampling on the unit cube."""
from __future__ import annotations

import numpy as np


def lhs(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points in ``[0, 1]^dim`` with exactly one point per stratum in every dimension.

    Stratum ``k`` of a dimension is ``[k/n, (k+1)/n)``; each column gets its
    own random permutation of strata and a uniform offset inside the stratum.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if dim < 0:
        raise ValueError("dimension must be non-negative")
    out = np.empty((n, dim))
    for j in range(dim):
        perm = rng.permutation(n)
        out[:, j] = (perm + rng.random(n)) / n
    return out


def strata(points: np.ndarray) -> np.ndarray:
    """Stratum index of every coordinate (``n`` equal strata per dimension)."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    return np.minimum(np.floor(pts * n).astype(int), n - 1)
