"""Empirical invertibility certificates.

Everything here is sampled evidence: moduli are maxima over finite pair sets
and coverage is checked on finitely many targets, so a certificate says
"empirically certified with these sample counts", never more.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .magnification import (
    DeltaLadder,
    Evaluator,
    Expansion,
    RemainderSlope,
    batch_eval,
    fit_expansion,
    remainder_slope,
)
from .polymap import PolynomialMap, exact_expansion
from .sampling import ball_points, sphere_points
from .solver import (
    CoverageRegion,
    CoverageResult,
    coverage_check,
    invert_quadratic,
    invert_regular,
)
from .symalg import RegularityReport, pencil_matrix, quadratic, regularity_margin

__all__ = [
    "ModulusRow",
    "SweepStep",
    "SweepResult",
    "Collision",
    "InjectivityAudit",
    "FirstOrderOptions",
    "FirstOrderCertificate",
    "QuadraticOptions",
    "QuadraticCertificate",
    "expansion_at",
    "uniform_diff_modulus",
    "scale_sweep",
    "certify_first_order",
    "certify_quadratic",
    "falsify_injectivity",
]

CERTIFIED = "certified"
CERTIFIED_ANTIPODAL = "certified_modulo_antipodal"
REFUSED = "refused"


def expansion_at(f: Evaluator, x, order: int, seed: int = 42) -> Expansion:
    """Exact Taylor data for polynomial maps, a cubic fit otherwise."""
    if isinstance(f, PolynomialMap):
        return exact_expansion(f, x, order)
    return fit_expansion(f, x, 3, seed=seed).truncated(order)


# -- uniform differentiability modulus ----------------------------------


@dataclass(frozen=True)
class ModulusRow:
    radius: float
    omega: float
    pairs: int


def uniform_diff_modulus(
    f: Evaluator,
    x,
    L,
    radii: Sequence[float],
    pairs_per_radius: int = 4096,
    seed: int = 42,
) -> list[ModulusRow]:
    """Sampled ``sup |f(y) - f(z) - L(y - z)| / |y - z|`` over pairs in ``B_s(x)``.

    ``radii`` must be descending. The returned estimate is made nondecreasing
    in ``s`` by pooling each radius with all smaller ones (a pair inside a
    smaller ball is also inside every larger one); values are never carried
    from a larger radius down to a smaller one.
    """
    radii = [float(s) for s in radii]
    if pairs_per_radius < 100:
        raise ValueError("pairs_per_radius must be >= 100")
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly descending")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    raw = []
    for s in radii:
        y = x + ball_points(n, pairs_per_radius, s, rng)
        z = x + ball_points(n, pairs_per_radius, s, rng)
        sep = np.linalg.norm(y - z, axis=1)
        floor = 1e-12 * (s + np.linalg.norm(x))
        for _ in range(10):
            bad = sep <= floor
            if not bad.any():
                break
            z[bad] = x + ball_points(n, int(bad.sum()), s, rng)
            sep = np.linalg.norm(y - z, axis=1)
        keep = sep > floor
        diff = batch_eval(f, y[keep]) - batch_eval(f, z[keep]) - (y[keep] - z[keep]) @ L.T
        raw.append(float((np.linalg.norm(diff, axis=1) / sep[keep]).max()))
    rows = []
    running = 0.0
    for s, w in reversed(list(zip(radii, raw))):
        running = max(running, w)
        rows.append(ModulusRow(s, running, pairs_per_radius))
    return list(reversed(rows))


# -- scale sweep --------------------------------------------------------


@dataclass(frozen=True)
class SweepStep:
    scale: float
    passed: bool
    value: float | None = None
    error: str | None = None


@dataclass
class SweepResult:
    largest_passing: float | None
    transcript: list[SweepStep]

    @property
    def found(self) -> bool:
        return self.largest_passing is not None

    def to_dict(self) -> dict:
        return {
            "largest_passing": self.largest_passing,
            "transcript": [
                {"scale": s.scale, "passed": s.passed, "value": s.value, "error": s.error}
                for s in self.transcript
            ],
        }


def scale_sweep(prop: Callable[[float], object], scales: Sequence[float]) -> SweepResult:
    """Evaluate ``prop`` at ascending scales; report the top of the passing run.

    ``prop`` returns a bool or a ``(bool, value)`` pair. An exception counts
    as a failure at that scale. Nothing past the first failure is trusted.
    """
    scales = [float(s) for s in scales]
    if len(scales) < 4:
        raise ValueError("a sweep needs at least 4 scales")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly ascending")
    transcript = []
    for s in scales:
        try:
            out = prop(s)
            if isinstance(out, tuple):
                ok, val = bool(out[0]), float(out[1])
            else:
                ok, val = bool(out), None
            transcript.append(SweepStep(s, ok, val))
        except Exception as exc:  # evaluator failures are findings
            transcript.append(SweepStep(s, False, None, f"{type(exc).__name__}: {exc}"))
    best = None
    for step in transcript:
        if not step.passed:
            break
        best = step.scale
    return SweepResult(best, transcript)


# -- first-order certificate --------------------------------------------


@dataclass
class FirstOrderOptions:
    max_radius: float = 1.0
    radius_ratio: float = 0.97
    n_radii: int = 100
    pairs_per_radius: int = 4096
    kappa: float = 0.5
    singular_tol: float = 1e-10
    n_targets: int = 1000
    solve_tol: float = 1e-12
    witness_tol: float = 1e-10
    seed: int = 42

    def radii(self) -> np.ndarray:
        return self.max_radius * self.radius_ratio ** np.arange(self.n_radii)


@dataclass
class FirstOrderCertificate:
    status: str
    reason: str | None
    expansion: Expansion
    sigma_min: float
    inverse_norm: float | None = None
    modulus: list[ModulusRow] = field(default_factory=list)
    sweep: SweepResult | None = None
    radius: float | None = None
    coverage: CoverageResult | None = None
    kappa: float = 0.5

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    @property
    def covered_radius(self) -> float | None:
        return None if self.radius is None else self.radius / 2

    def to_dict(self) -> dict:
        return {
            "kind": "first_order",
            "status": self.status,
            "reason": self.reason,
            "semantics": "empirically certified from sampled moduli and coverage spot-checks",
            "point": self.expansion.point.tolist(),
            "linear": self.expansion.linear.tolist(),
            "sigma_min": self.sigma_min,
            "inverse_norm": self.inverse_norm,
            "kappa": self.kappa,
            "radius": self.radius,
            "covered_radius": self.covered_radius,
            "modulus": [[r.radius, r.omega, r.pairs] for r in self.modulus],
            "sweep": None if self.sweep is None else self.sweep.to_dict(),
            "coverage": None if self.coverage is None else self.coverage.to_dict(),
        }


class _Preconditioned:
    """``L^{-1} o f`` with a batched path."""

    def __init__(self, f: Evaluator, L: np.ndarray):
        self.f = f
        self.linv = np.linalg.inv(L)

    def __call__(self, p):
        return self.linv @ np.asarray(self.f(p), dtype=float)

    def evaluate_many(self, pts):
        return batch_eval(self.f, pts) @ self.linv.T


def certify_first_order(
    f: Evaluator,
    x,
    opts: FirstOrderOptions | None = None,
    expansion: Expansion | None = None,
) -> FirstOrderCertificate:
    """Certificate that ``f`` is locally invertible at a regular point.

    The largest table radius ``d`` with ``omega(d) |L^{-1}| <= kappa`` is
    found by a scale sweep; then targets in the ball of radius ``d/2`` about
    ``L^{-1} f(x)`` must all be inverted inside ``B_d(x)``.
    """
    opts = opts or FirstOrderOptions()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    exp = expansion if expansion is not None else expansion_at(f, x, 1, seed=opts.seed)
    L = exp.linear
    smin = float(np.linalg.svd(L, compute_uv=False)[-1])
    cert = FirstOrderCertificate(REFUSED, None, exp, smin, kappa=opts.kappa)
    if smin <= opts.singular_tol:
        cert.reason = "L singular"
        return cert
    inv_norm = float(np.linalg.norm(np.linalg.inv(L), 2))
    cert.inverse_norm = inv_norm
    radii = opts.radii()
    table = uniform_diff_modulus(f, x, L, radii, opts.pairs_per_radius, seed=opts.seed)
    cert.modulus = table
    omega = {row.radius: row.omega for row in table}
    sweep = scale_sweep(
        lambda s: (omega[s] * inv_norm <= opts.kappa, omega[s] * inv_norm), radii[::-1]
    )
    cert.sweep = sweep
    if not sweep.found:
        cert.reason = "no radius satisfies the contraction bound"
        return cert
    d = sweep.largest_passing
    cert.radius = d

    ft = _Preconditioned(f, L)
    ident = np.eye(x.shape[0])
    region = CoverageRegion(target_center=ft(x), d=d, domain_center=x)
    cert.coverage = coverage_check(
        lambda t: invert_regular(ft, ident, x, t, tol=opts.solve_tol),
        region,
        opts.n_targets,
        seed=opts.seed,
        tol=opts.witness_tol,
    )
    if cert.coverage.fraction < 1.0:
        cert.reason = f"coverage spot-check failed on {len(cert.coverage.failures)} targets"
        return cert
    cert.status = CERTIFIED
    return cert


# -- injectivity falsifier ----------------------------------------------


@dataclass(frozen=True)
class Collision:
    y: np.ndarray
    y_prime: np.ndarray
    gap: float
    separation: float
    antipodal_defect: float

    def to_dict(self) -> dict:
        return {
            "y": self.y.tolist(),
            "y_prime": self.y_prime.tolist(),
            "gap": self.gap,
            "separation": self.separation,
            "antipodal_defect": self.antipodal_defect,
        }


@dataclass
class InjectivityAudit:
    collisions: list[Collision]
    pairs_examined: int

    @property
    def clean(self) -> bool:
        return not self.collisions

    def to_dict(self) -> dict:
        return {
            "clean": self.clean,
            "pairs_examined": self.pairs_examined,
            "collisions": [c.to_dict() for c in self.collisions],
        }


def _jacobian(f: Evaluator, p: np.ndarray) -> np.ndarray:
    jac = getattr(f, "jacobian", None)
    if jac is not None:
        return np.atleast_2d(jac(p))
    h = 1e-7 * (1.0 + np.linalg.norm(p))
    cols = []
    for j in range(p.shape[0]):
        e = np.zeros_like(p)
        e[j] = h
        cols.append((np.asarray(f(p + e)) - np.asarray(f(p - e))) / (2 * h))
    return np.column_stack(cols)


def _match_value(f: Evaluator, target: np.ndarray, start: np.ndarray, iters: int = 30):
    """Newton search for ``y'`` with ``f(y') = target`` from ``start``."""
    p = start.copy()
    for _ in range(iters):
        g = np.asarray(f(p), dtype=float) - target
        if np.linalg.norm(g) <= 1e-14 * (1.0 + np.linalg.norm(target)):
            break
        step = np.linalg.lstsq(_jacobian(f, p), g, rcond=None)[0]
        p = p - step
        if not np.all(np.isfinite(p)):
            return None
    return p


def falsify_injectivity(
    f: Evaluator,
    x,
    radius: float,
    samples: int = 1000,
    collision_tol: float = 1e-6,
    seed: int = 42,
    refine: int = 16,
    max_report: int = 10,
) -> InjectivityAudit:
    """Search ``B_radius(x)`` for distinct points with (nearly) equal images.

    A pair collides when ``|f(y) - f(y')| <= collision_tol |y - y'|^2 / radius``.
    Candidates come from the antipodal family ``x +/- t u`` and from nearest
    neighbours in image space among random points; the most promising ones
    are polished by solving ``f(y') = f(y)`` with Newton steps.
    """
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.shape[0]
    rng = np.random.default_rng(seed)

    dirs = sphere_points(n, samples, seed=seed)
    t = radius * rng.uniform(0.1, 1.0, size=(samples, 1))
    ya, yb = x + t * dirs, x - t * dirs

    pts = x + ball_points(n, samples, radius, rng)
    vals = batch_eval(f, pts)
    _, nn = cKDTree(vals).query(vals, k=2)
    yc, yd = pts, pts[nn[:, 1]]

    Y = np.concatenate([ya, yc])
    Yp = np.concatenate([yb, yd])
    gap = np.linalg.norm(batch_eval(f, Y) - batch_eval(f, Yp), axis=1)
    sep = np.linalg.norm(Y - Yp, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(sep > 0, gap * radius / sep**2, np.inf)

    def accept(y, yp) -> Collision | None:
        s = float(np.linalg.norm(y - yp))
        if s <= 1e-6 * radius:
            return None
        if np.linalg.norm(y - x) > radius * (1 + 1e-12) or np.linalg.norm(yp - x) > radius * (1 + 1e-12):
            return None
        g = float(np.linalg.norm(np.asarray(f(y)) - np.asarray(f(yp))))
        if g > collision_tol * s**2 / radius:
            return None
        anti = float(np.linalg.norm((y - x) + (yp - x)) / s)
        return Collision(y.copy(), yp.copy(), g, s, anti)

    found = []
    for k in np.argsort(score, kind="stable"):
        if score[k] > collision_tol:
            break
        c = accept(Y[k], Yp[k])
        if c is not None:
            found.append(c)
    for k in np.argsort(score, kind="stable")[:refine]:
        yp = _match_value(f, np.asarray(f(Y[k]), dtype=float), Yp[k])
        if yp is None:
            continue
        c = accept(Y[k], yp)
        if c is not None:
            found.append(c)

    found.sort(key=lambda c: (c.gap / c.separation**2, c.antipodal_defect))
    unique: list[Collision] = []
    for c in found:
        if any(np.allclose(c.y, u.y) and np.allclose(c.y_prime, u.y_prime) for u in unique):
            continue
        unique.append(c)
        if len(unique) >= max_report:
            break
    return InjectivityAudit(unique, int(Y.shape[0]))


# -- quadratic certificate ----------------------------------------------


@dataclass
class QuadraticOptions:
    tol_l: float | None = None
    tol_m: float = 1e-6
    d_bar: float = 1.0
    coverage_radii: tuple[float, ...] = (1.0, 0.1)
    a: float = 0.0
    n_targets: int = 1000
    margin_samples: int = 256
    ladder: DeltaLadder = field(default_factory=DeltaLadder)
    audit_radius: float = 0.1
    audit_samples: int = 1000
    collision_tol: float = 1e-6
    solve_tol: float = 1e-12
    witness_tol: float = 1e-10
    seed: int = 42


@dataclass
class QuadraticCertificate:
    status: str
    failed_stage: str | None
    reasons: list[str]
    expansion: Expansion
    linear_norm: float
    tol_l: float
    regularity: RegularityReport
    tol_m: float
    remainder: RemainderSlope
    d_bar: float
    coverage: dict[float, CoverageResult]
    offcenter_fraction: float | None
    binding: str | None
    audit: InjectivityAudit | None

    @property
    def certified(self) -> bool:
        return self.status in (CERTIFIED, CERTIFIED_ANTIPODAL)

    @property
    def coverage_fraction(self) -> float | None:
        if not self.coverage:
            return None
        hit = sum(c.fraction * c.targets for c in self.coverage.values())
        return hit / sum(c.targets for c in self.coverage.values())

    @property
    def covered_target_radius(self) -> float | None:
        if self.regularity.c_hat <= 0:
            return None
        return self.regularity.c_hat * self.d_bar**2 / 2

    def to_dict(self) -> dict:
        note = None
        if self.audit is not None and not self.audit.clean:
            note = (
                "coverage/openness verified; injectivity holds only up to the "
                "identification v ~ -v (antipodal collisions found)"
            )
        return {
            "kind": "quadratic",
            "status": self.status,
            "failed_stage": self.failed_stage,
            "reasons": list(self.reasons),
            "semantics": "empirically certified from sampled margins and coverage spot-checks",
            "point": self.expansion.point.tolist(),
            "linear_norm": self.linear_norm,
            "tol_l": self.tol_l,
            "regularity": self.regularity.to_dict(),
            "tol_m": self.tol_m,
            "remainder": self.remainder.to_dict(),
            "d_bar": self.d_bar,
            "covered_target_radius": self.covered_target_radius,
            "coverage": [{"d": d, **c.to_dict()} for d, c in sorted(self.coverage.items())],
            "coverage_fraction": self.coverage_fraction,
            "offcenter_fraction": self.offcenter_fraction,
            "binding": self.binding,
            "injectivity": None if self.audit is None else self.audit.to_dict(),
            "antipodal_note": note,
        }


def _offcenter_fraction(A, c: float, d: float, a: float, seed: int, tol: float) -> float:
    """Check ``Q(B_d(xi)) >= B_{c d^2}(Q(xi))`` at sampled ``|xi| < a``."""
    n = A.dim
    rng = np.random.default_rng(seed + 1)
    centers = ball_points(n, 16, a, rng)
    total = hits = 0
    for xi in centers:
        qxi = quadratic(A, xi)
        targets = qxi + ball_points(n, 64, c * d**2, rng)
        for t in targets:
            total += 1
            v = xi.copy()
            for _ in range(60):
                r = t - quadratic(A, v)
                if np.linalg.norm(r) <= tol:
                    break
                try:
                    v = v + 0.5 * np.linalg.solve(pencil_matrix(A, v), r)
                except np.linalg.LinAlgError:
                    break
            if np.linalg.norm(t - quadratic(A, v)) <= tol and np.linalg.norm(v - xi) <= d:
                hits += 1
    return hits / total


def certify_quadratic(
    f: Evaluator,
    x,
    opts: QuadraticOptions | None = None,
    expansion: Expansion | None = None,
) -> QuadraticCertificate:
    """Staged certificate at a point where ``df_x`` vanishes.

    Stages: vanishing differential, regularity margin, remainder order,
    coverage of the halved quadratic ball, injectivity audit. Every stage is
    run and recorded; the status names the first failing one.
    """
    opts = opts or QuadraticOptions()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    exp = expansion if expansion is not None else expansion_at(f, x, 2, seed=opts.seed)
    if exp.quadratic is None:
        raise ValueError("quadratic certificate needs an order >= 2 expansion")
    exp2 = exp.truncated(2)
    A = exp2.quadratic
    reasons: list[str] = []
    failed = None

    def fail(stage: str, why: str):
        nonlocal failed
        reasons.append(f"{stage}: {why}")
        if failed is None:
            failed = stage

    lnorm = float(np.linalg.norm(exp2.linear, 2))
    tol_l = opts.tol_l if opts.tol_l is not None else 1e-8 * (1.0 + A.norm())
    if lnorm > tol_l:
        fail("vanishing_differential", f"|L| = {lnorm:.3g} exceeds {tol_l:.3g}")

    report = regularity_margin(A, samples=opts.margin_samples, seed=opts.seed)
    if report.margin < opts.tol_m:
        fail("regularity_margin", f"margin {report.margin:.3g} below {opts.tol_m:.3g}")

    slope = remainder_slope(f, exp2, opts.ladder, seed=opts.seed)
    if not slope.passes(2):
        fail("remainder", f"slope {slope.slope} does not exceed 2")

    coverage: dict[float, CoverageResult] = {}
    offcenter = None
    binding = None
    if report.c_hat > 0:
        per_radius = max(100, opts.n_targets // len(opts.coverage_radii))
        for d in opts.coverage_radii:
            d = float(d) * opts.d_bar
            region = CoverageRegion(
                target_center=np.zeros(exp2.dim),
                d=d,
                quadratic=True,
                c=report.c_hat,
                domain_center=np.zeros(exp2.dim),
            )
            coverage[d] = coverage_check(
                lambda t: invert_quadratic(A, t, report.c_hat, tol=opts.solve_tol, seed=opts.seed),
                region,
                per_radius,
                seed=opts.seed,
                tol=opts.witness_tol,
            )
        if any(c.fraction < 1.0 for c in coverage.values()):
            fail("coverage", "quadratic part misses targets in the claimed ball")
        if opts.a > 0:
            offcenter = _offcenter_fraction(A, report.c_hat, opts.d_bar, opts.a, opts.seed, opts.witness_tol)
            centered_ok = all(c.fraction == 1.0 for c in coverage.values())
            binding = "d_bar" if not centered_ok else ("a" if offcenter < 1.0 else "none")
            if offcenter < 1.0:
                fail("coverage", f"off-center coverage fraction {offcenter:.3f} for |xi| < a")
    else:
        fail("coverage", "c_hat is zero; nothing to cover")

    audit = falsify_injectivity(
        f, x, opts.audit_radius, opts.audit_samples, opts.collision_tol, seed=opts.seed
    )
    if failed is not None:
        status = REFUSED
    else:
        status = CERTIFIED if audit.clean else CERTIFIED_ANTIPODAL
    return QuadraticCertificate(
        status=status,
        failed_stage=failed,
        reasons=reasons,
        expansion=exp2,
        linear_norm=lnorm,
        tol_l=tol_l,
        regularity=report,
        tol_m=opts.tol_m,
        remainder=slope,
        d_bar=opts.d_bar,
        coverage=coverage,
        offcenter_fraction=offcenter,
        binding=binding,
        audit=audit,
    )
