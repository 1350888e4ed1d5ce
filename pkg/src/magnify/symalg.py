"""Linear algebra on the symmetric square of R^n.

Elements of the symmetric square are stored as symmetric matrices, with
``v . w`` represented by ``(v w^T + w v^T) / 2``; the Segre map is then
``v -> v v^T``. A quadratic differential is a stack of symmetric matrices
``B_i`` acting by the Frobenius pairing, so its bilinear form is
``d2f(v, w)_i = v^T B_i w``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampling import sphere_points

__all__ = [
    "SymTensor2",
    "QuadDifferential",
    "RegularityReport",
    "NotOnSegreCone",
    "sym_product",
    "segre",
    "segre_inverse",
    "apply_quad",
    "bilinear",
    "quadratic",
    "kernel_basis",
    "pencil_matrix",
    "transversal",
    "regularity_margin",
    "sym_basis",
    "RANK_TOL",
]

RANK_TOL = 1e-10


@dataclass(frozen=True)
class SymTensor2:
    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("symmetric tensor needs a square matrix")
        if not np.array_equal(m, m.T):
            raise ValueError("matrix is not exactly symmetric")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.entries))

    def __add__(self, other: "SymTensor2") -> "SymTensor2":
        return SymTensor2(self.entries + other.entries)

    def __mul__(self, s: float) -> "SymTensor2":
        return SymTensor2(self.entries * s)

    __rmul__ = __mul__


@dataclass(frozen=True)
class QuadDifferential:
    """Linear map from the symmetric square to R^n, one symmetric form per output."""

    forms: np.ndarray

    def __post_init__(self):
        b = np.array(self.forms, dtype=float)
        if b.ndim != 3 or b.shape[0] != b.shape[1] or b.shape[1] != b.shape[2]:
            raise ValueError("forms must have shape (n, n, n)")
        if not np.array_equal(b, b.transpose(0, 2, 1)):
            raise ValueError("each component form must be exactly symmetric")
        b.setflags(write=False)
        object.__setattr__(self, "forms", b)

    @property
    def dim(self) -> int:
        return self.forms.shape[0]

    def coordinate_matrix(self) -> np.ndarray:
        """Matrix of the map in the orthonormal basis from :func:`sym_basis`."""
        basis = sym_basis(self.dim)
        return np.einsum("ijk,bjk->ib", self.forms, basis)

    def norm(self) -> float:
        """Operator norm with respect to the Frobenius norm on the symmetric square."""
        return float(np.linalg.norm(self.coordinate_matrix(), 2))


@dataclass(frozen=True)
class RegularityReport:
    margin: float
    witness: np.ndarray
    c_hat: float
    c_hat_witness: np.ndarray
    samples: int
    refine_iterations: int

    def to_dict(self) -> dict:
        return {
            "margin": self.margin,
            "witness": self.witness.tolist(),
            "c_hat": self.c_hat,
            "c_hat_witness": self.c_hat_witness.tolist(),
            "samples": self.samples,
            "refine_iterations": self.refine_iterations,
        }


class NotOnSegreCone(ValueError):
    """The tensor is farther than the tolerance from every ``v v^T``."""

    def __init__(self, distance: float, tol: float):
        self.distance = distance
        self.tol = tol
        super().__init__(f"distance {distance:.3g} to the Segre cone exceeds tol {tol:.3g}")


def _check_same(a: int, b: int):
    if a != b:
        raise ValueError(f"dimension mismatch: {a} != {b}")


def sym_basis(n: int) -> np.ndarray:
    """Frobenius-orthonormal basis of symmetric n x n matrices.

    Order: ``e_i e_i^T`` for the diagonal entries in row-major position, then
    ``(e_i e_j^T + e_j e_i^T)/sqrt(2)`` for i < j, interleaved row by row.
    """
    out = []
    for i in range(n):
        for j in range(i, n):
            m = np.zeros((n, n))
            if i == j:
                m[i, i] = 1.0
            else:
                m[i, j] = m[j, i] = 1.0 / np.sqrt(2.0)
            out.append(m)
    return np.array(out)


def sym_product(v, w) -> SymTensor2:
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    _check_same(v.shape[0], w.shape[0])
    outer = np.outer(v, w)
    return SymTensor2((outer + outer.T) / 2)


def segre(v) -> SymTensor2:
    return sym_product(v, v)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 0)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def segre_inverse(u: SymTensor2, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Both square roots ``(v, -v)`` of a rank-one PSD tensor.

    ``v`` carries a positive first nonzero entry. Raises :class:`NotOnSegreCone`
    when the spectral distance to the nearest ``v v^T`` exceeds ``tol``.
    """
    vals, vecs = np.linalg.eigh(u.entries)
    top = vals[-1]
    rest = np.abs(vals[:-1]).max() if vals.size > 1 else 0.0
    distance = max(rest, max(0.0, -top))
    if distance > tol:
        raise NotOnSegreCone(float(distance), tol)
    v = np.sqrt(max(top, 0.0)) * vecs[:, -1]
    v = _canonical_sign(v)
    return v, -v


def apply_quad(A: QuadDifferential, u: SymTensor2) -> np.ndarray:
    _check_same(A.dim, u.dim)
    return np.einsum("ijk,jk->i", A.forms, u.entries)


def bilinear(A: QuadDifferential, v, w) -> np.ndarray:
    return apply_quad(A, sym_product(v, w))


def quadratic(A: QuadDifferential, v) -> np.ndarray:
    """``Q(v) = d2f(v, v)``; accepts a single vector or a stack of rows."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        _check_same(A.dim, v.shape[0])
        return np.einsum("ijk,j,k->i", A.forms, v, v)
    return np.einsum("ijk,nj,nk->ni", A.forms, v, v)


def kernel_basis(A: QuadDifferential, tol: float = RANK_TOL) -> list[SymTensor2]:
    """Orthonormal basis of the kernel of ``A`` inside the symmetric square.

    Singular values at or below ``tol * sigma_max`` count as zero.
    """
    n = A.dim
    M = A.coordinate_matrix()
    basis = sym_basis(n)
    _, s, vt = np.linalg.svd(M, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > tol * smax)) if smax > 0 else 0
    null = vt[rank:]
    out = []
    for row in null:
        k = int(np.argmax(np.abs(row)))
        if row[k] < 0:
            row = -row
        m = np.einsum("b,bjk->jk", row, basis)
        out.append(SymTensor2((m + m.T) / 2))
    return out


def pencil_matrix(A: QuadDifferential, v) -> np.ndarray:
    """``H_v`` with ``H_v w = d2f(v, w)``; batched over leading rows of ``v``."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        _check_same(A.dim, v.shape[0])
        return np.einsum("ijk,j->ik", A.forms, v)
    return np.einsum("ijk,nj->nik", A.forms, v)


def transversal(A: QuadDifferential, v, tol: float = 1e-6) -> bool:
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("transversality is tested at unit vectors")
    return bool(np.linalg.svd(pencil_matrix(A, v), compute_uv=False)[-1] > tol)


# -- sphere minimization ------------------------------------------------


def _sigma_min_and_grad(A: QuadDifferential, v: np.ndarray) -> tuple[float, np.ndarray]:
    H = pencil_matrix(A, v)
    U, s, Vt = np.linalg.svd(H)
    a, b = U[:, -1], Vt[-1]
    # H_v is linear in v: d sigma / d v_j = a^T B_.j. b
    grad = np.einsum("i,ijk,k->j", a, A.forms, b)
    return float(s[-1]), grad


def _qnorm2_and_grad(A: QuadDifferential, v: np.ndarray) -> tuple[float, np.ndarray]:
    q = quadratic(A, v)
    return float(q @ q), 4.0 * pencil_matrix(A, v).T @ q


def _sphere_descent(func, v0: np.ndarray, step_tol: float = 1e-8, max_iter: int = 500):
    """Projected gradient descent with backtracking on the unit sphere."""
    v = v0 / np.linalg.norm(v0)
    val, grad = func(v)
    step = 0.5
    it = 0
    for it in range(1, max_iter + 1):
        g = grad - (grad @ v) * v
        gn = np.linalg.norm(g)
        if gn == 0.0:
            break
        direction = g / gn
        accepted = False
        while step >= step_tol:
            cand = v - step * direction
            cand /= np.linalg.norm(cand)
            cval, cgrad = func(cand)
            if cval < val:
                v, val, grad = cand, cval, cgrad
                accepted = True
                step = min(1.0, step * 2.0)
                break
            step *= 0.5
        if not accepted:
            break
    return v, val, it


def _pick(values: np.ndarray, points: np.ndarray) -> int:
    best = values.min()
    ties = np.flatnonzero(values <= best + 1e-12 * max(1.0, abs(best)))
    canon = np.array([_canonical_sign(points[i]) for i in ties])
    order = np.lexsort(canon.T[::-1])
    return int(ties[order[0]])


def regularity_margin(
    A: QuadDifferential, samples: int = 256, seed: int = 42, refine_steps: int = 500
) -> RegularityReport:
    """Minimum over the unit sphere of ``sigma_min(H_v)`` and of ``|Q(v)|``.

    Both minima start from the best low-discrepancy sample and are polished by
    projected descent; ties go to the lexicographically smallest witness
    (after fixing the sign so the first nonzero entry is positive).
    """
    n = A.dim
    if samples < 2 * n:
        raise ValueError(f"need at least {2 * n} samples")
    pts = sphere_points(n, samples, seed=seed)
    H = pencil_matrix(A, pts)
    smin = np.linalg.svd(H, compute_uv=False)[:, -1]
    qn = np.linalg.norm(quadratic(A, pts), axis=1)

    i = _pick(smin, pts)
    v, m, it1 = _sphere_descent(lambda u: _sigma_min_and_grad(A, u), pts[i], max_iter=refine_steps)
    if m > smin[i]:
        v, m = pts[i], float(smin[i])
    j = _pick(qn, pts)
    w, q2, it2 = _sphere_descent(lambda u: _qnorm2_and_grad(A, u), pts[j], max_iter=refine_steps)
    c_hat = float(np.sqrt(max(q2, 0.0)))
    if c_hat > qn[j]:
        w, c_hat = pts[j], float(qn[j])
    return RegularityReport(
        margin=max(float(m), 0.0),
        witness=_canonical_sign(v / np.linalg.norm(v)),
        c_hat=c_hat,
        c_hat_witness=_canonical_sign(w / np.linalg.norm(w)),
        samples=samples,
        refine_iterations=it1 + it2,
    )
