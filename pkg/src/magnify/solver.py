"""Local inversion near regular and quadratically degenerate points."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .magnification import Evaluator
from .sampling import ball_points, sphere_points
from .symalg import QuadDifferential, pencil_matrix, quadratic

__all__ = [
    "InverseSolution",
    "CoverageRegion",
    "CoverageResult",
    "invert_regular",
    "invert_quadratic",
    "invert_degenerate",
    "coverage_check",
]

log = logging.getLogger(__name__)

CONVERGED = "converged"
DIVERGED = "diverged"
MAX_ITER = "max_iter"
STAGNATED = "stagnated"


@dataclass
class InverseSolution:
    preimages: list[np.ndarray]
    residuals: list[float]
    iterations: list[int]
    trace: list[tuple[list[float], float]]
    status: str
    best_residual: float = float("nan")
    notes: list[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "preimages": [p.tolist() for p in self.preimages],
            "residuals": self.residuals,
            "iterations": self.iterations,
            "best_residual": self.best_residual,
            "trace": [[pt, r] for pt, r in self.trace],
            "notes": list(self.notes),
        }


def _residual(f: Evaluator, point: np.ndarray, target: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(f(point), dtype=float) - target))


def invert_regular(f: Evaluator, L, x, w, tol: float = 1e-12, max_iter: int = 100) -> InverseSolution:
    """Residual stepping ``xi <- xi + L^{-1} (w - f(xi))`` from ``xi = x``.

    Declares divergence after five consecutive residual increases or a
    non-finite iterate; never returns an unverified point.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    xi = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    lu = np.linalg.inv(L)
    r = w - np.asarray(f(xi), dtype=float)
    res = float(np.linalg.norm(r))
    trace = [(xi.tolist(), res)]
    best = res
    increases = 0
    status = MAX_ITER
    it = 0
    while True:
        if res <= tol:
            status = CONVERGED
            break
        if it >= max_iter:
            break
        xi = xi + lu @ r
        it += 1
        if not np.all(np.isfinite(xi)):
            status = DIVERGED
            break
        r = w - np.asarray(f(xi), dtype=float)
        new = float(np.linalg.norm(r))
        trace.append((xi.tolist(), new))
        if not np.isfinite(new):
            status = DIVERGED
            break
        increases = increases + 1 if new > res else 0
        res = new
        best = min(best, res)
        if increases >= 5:
            status = DIVERGED
            break
    if status != CONVERGED:
        return InverseSolution([], [], [it], trace, status, best_residual=best)
    check = _residual(f, xi, w)
    if check > tol:
        return InverseSolution([], [], [it], trace, MAX_ITER, best_residual=check)
    return InverseSolution([xi], [check], [it], trace, CONVERGED, best_residual=check)


def _canonical(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(v != 0)
    return -v if nz.size and v[nz[0]] < 0 else v


def invert_quadratic(
    A: QuadDifferential,
    w,
    c_hat: float,
    tol: float = 1e-12,
    max_iter: int = 50,
    multistart: int = 8,
    seed: int = 42,
) -> InverseSolution:
    """Solve ``Q(v) = w`` for the quadratic part ``Q(v) = d2f(v, v)``.

    Newton steps ``v <- v + H_v^{-1} (w - Q(v)) / 2`` run from ``multistart``
    low-discrepancy points on the sphere of radius ``sqrt(|w| / c_hat)``, all
    starts advanced together. Returns ``v*`` and ``-v*``.
    """
    w = np.asarray(w, dtype=float)
    n = A.dim
    wn = float(np.linalg.norm(w))
    if wn == 0.0:
        z = np.zeros(n)
        return InverseSolution([z], [0.0], [0], [(z.tolist(), 0.0)], CONVERGED, best_residual=0.0)
    if not c_hat > 0:
        raise ValueError("c_hat must be positive")
    r0 = np.sqrt(wn / c_hat)
    # spare starts replace ones whose pencil goes singular
    pool = r0 * sphere_points(n, 3 * multistart, seed=seed)
    V = pool[:multistart].copy()
    spare = list(range(multistart, pool.shape[0]))
    active = np.ones(multistart, dtype=bool)
    increases = np.zeros(multistart, dtype=int)
    R = w - quadratic(A, V)
    res = np.linalg.norm(R, axis=1)
    # per-iteration snapshots; the winning start's path is extracted at the end
    history = [(V.copy(), res.copy())]
    iters = np.zeros(multistart, dtype=int)
    best = float(res.min())
    winner = None
    for _ in range(max_iter + 1):
        done = np.flatnonzero(active & (res <= tol))
        if done.size:
            winner = int(done[0])
            break
        idx = np.flatnonzero(active & (iters < max_iter))
        if idx.size == 0:
            break
        H = pencil_matrix(A, V[idx])
        scale = np.abs(H).max(axis=(1, 2))
        ok = np.abs(np.linalg.det(H)) > 1e-14 * np.maximum(scale, 1e-300) ** n
        for k in idx[~ok]:
            if spare:
                V[k] = pool[spare.pop(0)]
                R[k] = w - quadratic(A, V[k])
                res[k] = np.linalg.norm(R[k])
                increases[k] = 0
            else:
                active[k] = False
        idx = idx[ok]
        if idx.size == 0:
            continue
        step = np.linalg.solve(H[ok], R[idx][..., None])[..., 0]
        V[idx] = V[idx] + 0.5 * step
        iters[idx] += 1
        R[idx] = w - quadratic(A, V[idx])
        new = np.linalg.norm(R[idx], axis=1)
        increases[idx] = np.where(new > res[idx], increases[idx] + 1, 0)
        res[idx] = new
        history.append((V.copy(), res.copy()))
        bad = (increases[idx] >= 5) | (np.linalg.norm(V[idx], axis=1) > 10 * r0) | ~np.isfinite(new)
        active[idx[bad]] = False
        finite = new[np.isfinite(new)]
        if finite.size:
            best = min(best, float(finite.min()))

    if winner is None:
        status = MAX_ITER if np.any(active) else DIVERGED
        return InverseSolution([], [], [int(iters.max())], [], status, best_residual=best)
    v = _canonical(V[winner].copy())
    # evenness: both signs are exact preimages; verify independently
    pre = [v, -v]
    resid = [float(np.linalg.norm(quadratic(A, p) - w)) for p in pre]
    it = int(iters[winner])
    trace = []
    for snapV, snapR in history:
        step = (snapV[winner].tolist(), float(snapR[winner]))
        if not trace or step != trace[-1]:
            trace.append(step)
    return InverseSolution(pre, resid, [it, it], trace, CONVERGED, best_residual=min(resid))


def invert_degenerate(
    f: Evaluator,
    x,
    certificate,
    y,
    tol: float = 1e-12,
    max_iter: int = 50,
    seed: int = 42,
) -> InverseSolution:
    """Invert ``f`` near a point where ``df_x = 0``.

    Predictor: both roots of ``Q(v) = y - f(x)``. Corrector: Newton-type steps
    on ``f(x + v) - y`` with ``2 H_v`` standing in for the Jacobian.
    """
    if certificate is None or not getattr(certificate, "certified", False):
        raise ValueError("a certified quadratic certificate is required")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = certificate.expansion.quadratic
    fx = np.asarray(f(x), dtype=float)
    r = y - fx
    rn = float(np.linalg.norm(r))
    if rn == 0.0:
        return InverseSolution([x.copy()], [0.0], [0], [(x.tolist(), 0.0)], CONVERGED, best_residual=0.0)
    notes = []
    limit = certificate.covered_target_radius
    if limit is not None and rn > limit and not certificate.remainder.saturated:
        notes.append(f"target offset {rn:.3g} exceeds certified range {limit:.3g}")
        log.warning(notes[-1])

    pred = invert_quadratic(A, r, certificate.regularity.c_hat, tol=max(tol, 1e-14 * rn), seed=seed)
    if not pred.converged:
        return InverseSolution([], [], [0], [], pred.status, best_residual=pred.best_residual, notes=notes)

    preimages, residuals, iterations, trace = [], [], [], []
    status = CONVERGED
    best = float("inf")
    for v0 in pred.preimages:
        v = v0.copy()
        g = np.asarray(f(x + v), dtype=float) - y
        res = float(np.linalg.norm(g))
        branch_trace = [((x + v).tolist(), res)]
        it = 0
        stalls = 0
        while res > tol and it < max_iter:
            J = 2.0 * pencil_matrix(A, v)
            try:
                v = v - np.linalg.solve(J, g)
            except np.linalg.LinAlgError:
                break
            it += 1
            g = np.asarray(f(x + v), dtype=float) - y
            new = float(np.linalg.norm(g))
            branch_trace.append(((x + v).tolist(), new))
            stalls = stalls + 1 if new >= res else 0
            res = new
            if stalls >= 5 or not np.isfinite(res):
                break
        best = min(best, res)
        if not trace:
            trace = branch_trace
        if res > tol:
            qv = quadratic(A, v)
            ratio = float(np.linalg.norm(np.asarray(f(x + v)) - fx - qv) / max(np.linalg.norm(qv), 1e-300))
            notes.append(f"corrector stalled at residual {res:.3g}; remainder/quadratic ratio {ratio:.3g}")
            status = STAGNATED
            continue
        p = x + v
        check = _residual(f, p, y)
        if check > tol:
            status = STAGNATED
            continue
        if any(np.linalg.norm(p - q) < 10 * tol for q in preimages):
            continue
        preimages.append(p)
        residuals.append(check)
        iterations.append(it)
    if not preimages:
        return InverseSolution([], [], iterations or [0], trace, status, best_residual=best, notes=notes)
    if status == STAGNATED and preimages:
        # one branch converged; keep what is verified and flag the rest
        status = CONVERGED
        notes.append("only one branch converged")
    return InverseSolution(preimages, residuals, iterations, trace, status, best_residual=min(residuals), notes=notes)


# -- coverage -----------------------------------------------------------


@dataclass(frozen=True)
class CoverageRegion:
    """Claimed covered set and the domain ball preimages must land in.

    Linear claims cover the target ball of radius ``d/2``; quadratic claims
    cover radius ``c d^2 / 2``.
    """

    target_center: np.ndarray
    d: float
    quadratic: bool = False
    c: float = 1.0
    domain_center: np.ndarray | None = None

    @property
    def target_radius(self) -> float:
        return self.c * self.d**2 / 2 if self.quadratic else self.d / 2


@dataclass
class CoverageResult:
    fraction: float
    targets: int
    failures: list[tuple[list[float], float]]
    max_residual: float

    def to_dict(self) -> dict:
        return {
            "fraction": self.fraction,
            "targets": self.targets,
            "max_residual": self.max_residual,
            "failures": [[t, r] for t, r in self.failures],
        }


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MAGNIFY_THREADS", "1")))
    except ValueError:
        return 1


def coverage_check(
    solve: Callable[[np.ndarray], InverseSolution],
    region: CoverageRegion,
    n_targets: int = 1000,
    seed: int = 42,
    tol: float = 1e-10,
) -> CoverageResult:
    """Fraction of uniform targets in the claimed ball that ``solve`` inverts."""
    if n_targets < 100:
        raise ValueError("coverage needs at least 100 targets")
    center = np.atleast_1d(np.asarray(region.target_center, dtype=float))
    rng = np.random.default_rng(seed)
    targets = center + ball_points(center.shape[0], n_targets, region.target_radius, rng)
    dom = None if region.domain_center is None else np.asarray(region.domain_center, dtype=float)

    def one(t):
        sol = solve(t)
        ok = False
        if sol.converged:
            for p, r in zip(sol.preimages, sol.residuals):
                inside = dom is None or np.linalg.norm(p - dom) <= region.d * (1 + 1e-12)
                if r <= tol and inside:
                    ok = True
                    break
        res = min(sol.residuals) if sol.residuals else sol.best_residual
        return ok, float(res)

    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, targets))
    else:
        results = [one(t) for t in targets]
    failures = [(t.tolist(), r) for t, (ok, r) in zip(targets, results) if not ok]
    passed = [r for ok, r in results if ok]
    return CoverageResult(
        fraction=(n_targets - len(failures)) / n_targets,
        targets=n_targets,
        failures=failures,
        max_residual=max(passed) if passed else float("nan"),
    )
