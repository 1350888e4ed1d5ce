"""Dilation frames, dilated evaluation and scale-ladder diagnostics.

A frame ``(x, delta)`` identifies the ball of radius ``delta`` around ``x``
with unit scale via ``xi -> (xi - x) / delta``. The dilated map
``f^delta_x(v) = (f(x + delta v) - f(x)) / delta`` is the object every other
diagnostic in this package is built on.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .sampling import sphere_points
from .symalg import QuadDifferential

__all__ = [
    "DilationFrame",
    "DeltaLadder",
    "Expansion",
    "RankDeficientDesign",
    "RemainderSlope",
    "batch_eval",
    "dilate",
    "dilated_eval",
    "nested_dilated_eval",
    "fit_expansion",
    "remainder_residuals",
    "remainder_slope",
    "almost_linearity_defect",
    "linearity_samples",
    "noise_floor",
]

Evaluator = Callable[[np.ndarray], np.ndarray]


class RankDeficientDesign(ValueError):
    pass


def batch_eval(f: Evaluator, points: np.ndarray) -> np.ndarray:
    """Evaluate ``f`` on each row; uses ``f.evaluate_many`` when available."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    many = getattr(f, "evaluate_many", None)
    if many is not None:
        return np.asarray(many(points), dtype=float)
    return np.array([np.atleast_1d(np.asarray(f(p), dtype=float)) for p in points])


@dataclass(frozen=True)
class DilationFrame:
    point: np.ndarray
    delta: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.point, dtype=float))
        if not np.all(np.isfinite(x)):
            raise ValueError("base point must be finite")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValueError("delta must be a positive finite number")
        object.__setattr__(self, "point", x)

    def flat(self, xi) -> np.ndarray:
        return (np.asarray(xi, dtype=float) - self.point) / self.delta

    def unflat(self, v) -> np.ndarray:
        return self.point + self.delta * np.asarray(v, dtype=float)


@dataclass(frozen=True)
class DeltaLadder:
    """Geometric scales ``delta0 * ratio**j`` for ``j = 0..levels``."""

    delta0: float = 1e-2
    ratio: float = 0.5
    levels: int = 8

    def __post_init__(self):
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")
        if not 0 < self.ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        if self.levels < 3:
            raise ValueError("a ladder needs at least 4 scales (levels >= 3)")

    @property
    def scales(self) -> np.ndarray:
        return self.delta0 * self.ratio ** np.arange(self.levels + 1)


@dataclass
class Expansion:
    """Taylor data ``f(x + v) ~ value + L v + S2(v, v) + S3(v, v, v)``."""

    point: np.ndarray
    order: int
    value: np.ndarray
    linear: np.ndarray
    quadratic: QuadDifferential | None = None
    cubic: np.ndarray | None = None
    remainder_diagnostics: list[tuple[float, float]] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.value.shape[0]

    def increment(self, v) -> np.ndarray:
        """``L v + S2(v, v) + S3(v, v, v)`` for a vector or stack of rows."""
        v = np.asarray(v, dtype=float)
        single = v.ndim == 1
        v = np.atleast_2d(v)
        out = v @ self.linear.T
        if self.quadratic is not None:
            out = out + np.einsum("ijk,nj,nk->ni", self.quadratic.forms, v, v)
        if self.cubic is not None:
            out = out + np.einsum("ijkl,nj,nk,nl->ni", self.cubic, v, v, v)
        return out[0] if single else out

    def reconstruct(self, v) -> np.ndarray:
        return self.value + self.increment(v)

    def truncated(self, order: int) -> "Expansion":
        if order > self.order:
            raise ValueError("cannot raise the order of an expansion")
        return Expansion(
            point=self.point,
            order=order,
            value=self.value,
            linear=self.linear,
            quadratic=self.quadratic if order >= 2 else None,
            cubic=self.cubic if order >= 3 else None,
        )

    def coefficients(self) -> np.ndarray:
        """All stored Taylor coefficients flattened (value excluded)."""
        parts = [self.linear.ravel()]
        if self.quadratic is not None:
            parts.append(self.quadratic.forms.ravel())
        if self.cubic is not None:
            parts.append(self.cubic.ravel())
        return np.concatenate(parts)

    def to_dict(self) -> dict:
        out = {
            "point": self.point.tolist(),
            "order": self.order,
            "value": self.value.tolist(),
            "linear": self.linear.tolist(),
        }
        if self.quadratic is not None:
            out["quadratic"] = self.quadratic.forms.tolist()
        if self.cubic is not None:
            out["cubic"] = self.cubic.tolist()
        out["remainder_diagnostics"] = [[d, r] for d, r in self.remainder_diagnostics]
        return out


# -- dilated evaluation -------------------------------------------------


def dilate(f: Evaluator, x, delta: float) -> Evaluator:
    """The dilated map ``v -> (f(x + delta v) - f(x)) / delta`` as a callable."""
    frame = DilationFrame(np.asarray(x, dtype=float), float(delta))
    fx = np.asarray(f(frame.point), dtype=float)

    def g(v):
        return (np.asarray(f(frame.unflat(v)), dtype=float) - fx) / frame.delta

    def g_many(vs):
        return (batch_eval(f, frame.unflat(vs)) - fx) / frame.delta

    g.evaluate_many = g_many
    return g


def dilated_eval(f: Evaluator, frame: DilationFrame, v) -> np.ndarray:
    return dilate(f, frame.point, frame.delta)(v)


def nested_dilated_eval(f: Evaluator, x, delta: float, xi, rho) -> np.ndarray:
    """Second-level dilation ``(f^delta_x)^delta_xi(rho)``.

    Satisfies ``f(x + delta xi + delta^2 rho) = f(x) + delta f^delta_x(xi)
    + delta^2 (f^delta_x)^delta_xi(rho)`` up to rounding.
    """
    return dilate(dilate(f, x, delta), xi, delta)(rho)


# -- expansion fitting --------------------------------------------------


def _multi_indices(n: int, degree: int) -> list[tuple[int, ...]]:
    return list(itertools.combinations_with_replacement(range(n), degree))


def _design_blocks(dirs: np.ndarray, order: int) -> list[tuple[int, list, np.ndarray]]:
    n = dirs.shape[1]
    blocks = []
    for deg in range(1, order + 1):
        idx = _multi_indices(n, deg)
        cols = np.stack([np.prod(dirs[:, list(m)], axis=1) for m in idx], axis=1)
        blocks.append((deg, idx, cols))
    return blocks


def noise_floor(value) -> float:
    return 1e3 * np.finfo(float).eps * (float(np.linalg.norm(value)) + 1.0)


def fit_expansion(
    f: Evaluator,
    x,
    order: int,
    ladder: DeltaLadder | None = None,
    directions: np.ndarray | None = None,
    n_directions: int = 64,
    seed: int = 42,
) -> Expansion:
    """Least-squares Taylor data from dilated evaluations across a ladder.

    One joint fit over every ``(delta, u)`` pair of the model
    ``f^delta_x(u) = L u + delta S2(u, u) + delta^2 S3(u, u, u)``. Directions
    default to an antipodally symmetric low-discrepancy set.
    """
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    ladder = ladder or DeltaLadder()
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    dirs = (
        sphere_points(n, n_directions, seed=seed, antipodal=True)
        if directions is None
        else np.asarray(directions, dtype=float)
    )
    blocks = _design_blocks(dirs, order)
    n_unknowns = sum(len(idx) for _, idx, _ in blocks)
    if dirs.shape[0] < n_unknowns:
        raise RankDeficientDesign(
            f"{dirs.shape[0]} directions cannot determine {n_unknowns} coefficients"
        )

    fx = np.asarray(f(x), dtype=float)
    scales = ladder.scales
    rows, rhs = [], []
    for d in scales:
        rows.append(np.concatenate([d ** (deg - 1) * cols for deg, _, cols in blocks], axis=1))
        rhs.append((batch_eval(f, x + d * dirs) - fx) / d)
    design = np.concatenate(rows)
    target = np.concatenate(rhs)

    col_norm = np.linalg.norm(design, axis=0)
    if np.any(col_norm == 0):
        raise RankDeficientDesign("design has an all-zero column")
    scaled = design / col_norm
    sv = np.linalg.svd(scaled, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise RankDeficientDesign("directions are degenerate for this model")
    coef, *_ = np.linalg.lstsq(scaled, target, rcond=None)
    coef = coef / col_norm[:, None]

    linear = np.zeros((n, n))
    quad = np.zeros((n, n, n))
    cubic = np.zeros((n, n, n, n))
    pos = 0
    for deg, idx, _ in blocks:
        for m in idx:
            c = coef[pos]
            pos += 1
            if deg == 1:
                linear[:, m[0]] = c
                continue
            perms = set(itertools.permutations(m))
            share = c / len(perms)
            for p in perms:
                if deg == 2:
                    quad[(slice(None),) + p] = share
                else:
                    cubic[(slice(None),) + p] = share

    exp = Expansion(
        point=x.copy(),
        order=order,
        value=fx,
        linear=linear,
        quadratic=QuadDifferential(quad) if order >= 2 else None,
        cubic=cubic if order == 3 else None,
    )
    exp.remainder_diagnostics = [
        (float(d), float(r)) for d, r in zip(scales, remainder_residuals(f, exp, scales, dirs))
    ]
    return exp


# -- remainder diagnostics ----------------------------------------------


def remainder_residuals(f: Evaluator, expansion: Expansion, scales, directions) -> np.ndarray:
    """Per scale, max over directions of ``|f(x + d u) - reconstruct(d u)|``."""
    dirs = np.asarray(directions, dtype=float)
    out = []
    for d in scales:
        v = d * dirs
        res = batch_eval(f, expansion.point + v) - expansion.reconstruct(v)
        out.append(float(np.linalg.norm(res, axis=1).max()))
    return np.array(out)


@dataclass
class RemainderSlope:
    slope: float | None
    saturated: bool
    scales: list[float]
    residuals: list[float]
    floor: float

    def passes(self, order: int) -> bool:
        return self.saturated or (self.slope is not None and self.slope > order)

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "saturated": self.saturated,
            "floor": self.floor,
            "series": [[s, r] for s, r in zip(self.scales, self.residuals)],
        }


def remainder_slope(
    f: Evaluator,
    expansion: Expansion,
    ladder: DeltaLadder | None = None,
    directions: np.ndarray | None = None,
    n_directions: int = 64,
    seed: int = 42,
) -> RemainderSlope:
    """Log-log slope of the max remainder against the scale.

    Residuals under the noise floor are dropped; with fewer than three left
    the result is reported as saturated rather than as a slope.
    """
    ladder = ladder or DeltaLadder()
    n = expansion.dim
    dirs = (
        sphere_points(n, n_directions, seed=seed, antipodal=True)
        if directions is None
        else np.asarray(directions, dtype=float)
    )
    scales = ladder.scales
    res = remainder_residuals(f, expansion, scales, dirs)
    floor = noise_floor(expansion.value)
    keep = res > floor
    slope = None
    saturated = int(keep.sum()) < 3
    if not saturated:
        slope = float(np.polyfit(np.log(scales[keep]), np.log(res[keep]), 1)[0])
    return RemainderSlope(
        slope=slope,
        saturated=saturated,
        scales=[float(s) for s in scales],
        residuals=[float(r) for r in res],
        floor=floor,
    )


# -- almost linearity ---------------------------------------------------


def linearity_samples(
    dim: int, count: int, bound: float, seed: int = 42
) -> list[tuple[float, float, np.ndarray, np.ndarray]]:
    """Random ``(alpha, beta, v, w)`` with every entry bounded by ``bound``."""
    rng = np.random.default_rng(seed)
    from .sampling import ball_points

    ab = rng.uniform(-bound, bound, size=(count, 2))
    vs = ball_points(dim, count, bound, rng)
    ws = ball_points(dim, count, bound, rng)
    return [(float(a), float(b), v, w) for (a, b), v, w in zip(ab, vs, ws)]


def almost_linearity_defect(
    g: Evaluator, samples: Sequence[tuple[float, float, np.ndarray, np.ndarray]], bound: float
) -> float:
    """``max |g(a v + b w) - a g(v) - b g(w)|`` over samples within ``bound``."""
    if not samples:
        raise ValueError("no samples")
    if not math.isfinite(bound):
        raise ValueError("bound must be finite")
    worst = 0.0
    for a, b, v, w in samples:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if abs(a) > bound or abs(b) > bound or np.linalg.norm(v) > bound or np.linalg.norm(w) > bound:
            continue
        gap = np.asarray(g(a * v + b * w)) - a * np.asarray(g(v)) - b * np.asarray(g(w))
        worst = max(worst, float(np.linalg.norm(gap)))
    return worst
