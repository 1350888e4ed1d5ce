"""Deterministic point sets on spheres and balls."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc


def sphere_points(dim: int, count: int, seed: int = 42, antipodal: bool = False) -> np.ndarray:
    return _sphere_points(dim, count, seed, antipodal).copy()


@lru_cache(maxsize=64)
def _sphere_points(dim: int, count: int, seed: int, antipodal: bool) -> np.ndarray:
    """Low-discrepancy unit vectors, shape ``(count, dim)``.

    A scrambled Halton sequence is pushed through the Gaussian quantile and
    normalized. With ``antipodal=True`` the set is ``{u} U {-u}`` (``count``
    rounded up to even), which makes odd/even moments of a fit decouple.
    """
    if dim < 1 or count < 1:
        raise ValueError("dim and count must be positive")
    base = (count + 1) // 2 if antipodal else count
    if dim == 1:
        pts = np.ones((base, 1))
        pts[1::2] = -1.0
    else:
        u = qmc.Halton(d=dim, scramble=True, seed=seed).random(base)
        g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        pts = g / norms
    if antipodal:
        pts = np.concatenate([pts, -pts])
    return pts


def ball_points(dim: int, count: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from the closed Euclidean ball of given radius at 0."""
    g = rng.standard_normal((count, dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    r = radius * rng.random((count, 1)) ** (1.0 / dim)
    return g / norms * r
