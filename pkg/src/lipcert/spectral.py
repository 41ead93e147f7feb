"""Dense symmetric linear-algebra kernels.

Everything downstream (the cascade recursion, the LMI solver, the
verifiers) runs on the five operations here: spectral norms, symmetric
eigendecomposition, positive-definiteness tests, SPD solves and PSD
matrix square roots.  All kernels are deterministic and self-contained;
numpy supplies array storage, BLAS products and Cholesky factorization.

Algorithms:

* ``spectral_norm`` runs power iteration on ``A^T A`` from a fixed start
  vector, accepting only when the eigen-residual certifies the Rayleigh
  quotient, then cross-checks with a second deflated start.  Any doubt
  (iteration cap, residual stall, cross-check disagreement) falls back
  to the full symmetric eigendecomposition of the smaller Gram matrix.
* ``sym_eig`` is Householder tridiagonalization followed by the
  implicit-shift QL iteration, with optional eigenvector accumulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceError,
    NonFiniteError,
    NotPositiveDefiniteError,
    NotPsdError,
    ShapeError,
)

# Scale factor for the default positive-definiteness tolerance
# tau_pd = PD_TOL_SCALE * max(1, ||S||_2).
PD_TOL_SCALE = 1e-9

# Residual acceptance: ||B v - rho v|| <= _POWER_RES_RTOL * rho certifies
# that rho is within the same relative distance of an eigenvalue of B.
_POWER_RES_RTOL = 1e-12
_POWER_BLOCK = 4
_POWER_MAX_ITER = 2500  # block iterations; frequently-clustered spectra fall back


class SymMatrix:
    """Dense symmetric matrix, symmetrized and finiteness-checked at construction.

    The stored array is ``(A + A^T) / 2`` and is marked read-only, so the
    exact-symmetry invariant survives sharing across threads.
    """

    __slots__ = ("a",)

    def __init__(self, a):
        arr = np.array(a, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ShapeError(f"expected a square matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("matrix has non-finite entries")
        arr = (arr + arr.T) / 2.0
        arr.flags.writeable = False
        self.a = arr

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def __repr__(self):
        return f"SymMatrix(n={self.n})"

    @classmethod
    def identity(cls, n: int) -> "SymMatrix":
        return cls(np.eye(n))


@dataclass(frozen=True)
class PdReport:
    """Outcome of a positive-definiteness test.

    ``is_pd == (min_eig > tol)`` for the tolerance the test was run with;
    ``method`` records whether Cholesky decided or the eigensolver had to.
    """

    is_pd: bool
    min_eig: float
    method: str  # "cholesky" or "eig"


def _as_sym(S) -> SymMatrix:
    return S if isinstance(S, SymMatrix) else SymMatrix(S)


def _check_finite_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.size == 0:
        raise ShapeError(f"expected a nonempty 2-d matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFiniteError("matrix has non-finite entries")
    return A


def _hashed_ramp(n: int, mult: int = 2654435761) -> np.ndarray:
    """Deterministic non-constant start vector with no obvious symmetry."""
    k = np.arange(n, dtype=np.uint64)
    h = (k * np.uint64(mult)) & np.uint64(0xFFFFFFFF)
    return 0.5 + h.astype(float) / 2.0**32


def _start_block(n: int, b: int) -> np.ndarray:
    """Orthonormalized deterministic start block (all-ones plus hashed ramps)."""
    cols = [np.ones(n), _hashed_ramp(n)]
    signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    cols.append(signs * (1.0 + np.arange(n) / (2.0 * n)))
    cols.append(_hashed_ramp(n, mult=0x9E3779B1) - 0.75)
    V = np.stack(cols[:b], axis=1)
    Q, _ = np.linalg.qr(V)
    return Q


def _small_sym_eig(T: np.ndarray):
    """Eigendecomposition of a tiny symmetric matrix (Rayleigh-Ritz block)."""
    n = T.shape[0]
    if n == 1:
        return T[0].copy(), np.eye(1)
    d, e, Q = _tridiagonalize((T + T.T) / 2.0, want_q=True)
    dl = _ql_implicit(list(d), list(e), Q)
    w = np.asarray(dl)
    order = np.argsort(w, kind="stable")
    return w[order], Q[:, order]


def _block_top_eig(A: np.ndarray, V: np.ndarray, res_rtol: float, max_iter: int):
    """Subspace iteration for the largest eigenvalue of B = A^T A.

    Runs a few plain block multiplies between orthonormalizations, then
    Rayleigh-Ritz; accepts when the top Ritz pair's eigen-residual
    certifies the value: for symmetric B, ``||B x - rho x|| <= eps``
    places rho within eps of a true eigenvalue (and Ritz values never
    exceed the true maximum).  A merely-plateauing Rayleigh quotient
    certifies nothing on clustered spectra, so the residual is the only
    acceptance test.

    Returns ``(value, ritz_vector, subspace, converged)``.
    """
    tiny = np.finfo(float).tiny
    inner = 4
    rho = 0.0
    x = V[:, 0]
    it = 0
    while it < max_iter:
        for _ in range(inner):
            W = A.T @ (A @ V)
            it += 1
            peak = np.max(np.abs(W))
            if peak == 0.0 or not np.isfinite(peak):
                return rho, x, V, False
            V = W / peak
        V, _ = np.linalg.qr(V)
        W = A.T @ (A @ V)
        it += 1
        T = V.T @ W
        tvals, tvecs = _small_sym_eig(T)
        rho = float(tvals[-1])
        y = tvecs[:, -1]
        x = V @ y
        res = float(np.linalg.norm(W @ y - rho * x))
        if res <= res_rtol * max(rho, tiny):
            return rho, x, V, True
        V, _ = np.linalg.qr(W)
    return rho, x, V, False


def _top_eig_gram(A: np.ndarray, res_rtol: float = _POWER_RES_RTOL):
    """Largest eigenvalue of A^T A with a deflated-start cross check.

    Returns ``(value, trusted)``; untrusted values must be recomputed
    exactly.  The cross check guards the adversarial case where the
    deterministic start block is exactly invariant under the Gram matrix
    without containing the dominant eigenvector.
    """
    n = A.shape[1]
    b = min(_POWER_BLOCK, n)
    rho, x, V, ok = _block_top_eig(A, _start_block(n, b), res_rtol, _POWER_MAX_ITER)
    if not ok:
        return rho, False
    if n > b:
        y = _hashed_ramp(n, mult=0x85EBCA6B)
        y = y - V @ (V.T @ y)
        ny = np.linalg.norm(y)
        if ny > 1e-12 * math.sqrt(n):
            y /= ny
            for _ in range(50):
                w = A.T @ (A @ y)
                nw = np.linalg.norm(w)
                if nw == 0.0:
                    break
                y = w / nw
            rho2 = float(y @ (A.T @ (A @ y)))
            if rho2 > rho * (1.0 + 1e-9):
                return rho, False
    return rho, True


def spectral_norm(A) -> float:
    """Largest singular value of ``A``, deterministic, 1e-10 relative accuracy.

    Block power iteration on ``A^T A`` from a fixed start block with a
    residual-certified Rayleigh-Ritz value, cross-checked against an
    independent deflated start.  Any doubt (iteration cap on clustered
    spectra, cross-check disagreement) falls back to the full symmetric
    eigendecomposition of the smaller Gram matrix.
    """
    A = _check_finite_matrix(A)
    if not A.any():
        return 0.0
    scale = float(np.max(np.abs(A)))
    A_s = A / scale  # guard overflow in the Gram products
    lam, trusted = _top_eig_gram(A_s)
    if not trusted:
        G = A_s.T @ A_s if A_s.shape[1] <= A_s.shape[0] else A_s @ A_s.T
        lam = float(_eigvals_sym(SymMatrix(G))[-1])
    return scale * math.sqrt(max(lam, 0.0))


def _norm_estimate(S: SymMatrix) -> float:
    """Cheap spectral-norm estimate (about 0.1% accuracy) for tolerances."""
    a = S.a
    if not a.any():
        return 0.0
    scale = float(np.max(np.abs(a)))
    rho, _, _, ok = _block_top_eig(
        a / scale, _start_block(S.n, min(_POWER_BLOCK, S.n)), 1e-3, 300
    )
    if ok:
        return scale * math.sqrt(max(rho, 0.0))
    # Row-sum bound: always valid for symmetric matrices.
    return float(np.max(np.sum(np.abs(a), axis=1)))


# ---------------------------------------------------------------------------
# Symmetric eigendecomposition: Householder tridiagonalization + implicit QL.
# ---------------------------------------------------------------------------

_QL_MAX_SWEEPS = 64


def _tridiagonalize(S: np.ndarray, want_q: bool):
    """Reduce symmetric S to tridiagonal T with S = Q T Q^T.

    Classic Householder similarity transforms; each step is a rank-two
    update applied with BLAS-level numpy operations.
    """
    A = S.copy()
    n = A.shape[0]
    Q = np.eye(n) if want_q else None
    for k in range(n - 2):
        x = A[k + 1 :, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0.0:
            alpha = -alpha  # sign chosen to avoid cancellation in v
        v = x
        v[0] -= alpha
        vnorm2 = float(v @ v)
        if vnorm2 == 0.0:
            continue
        beta = 2.0 / vnorm2
        p = beta * (A[k + 1 :, k + 1 :] @ v)
        K = 0.5 * beta * float(v @ p)
        q = p - K * v
        A[k + 1 :, k + 1 :] -= np.outer(q, v) + np.outer(v, q)
        A[k + 1, k] = alpha
        A[k, k + 1] = alpha
        A[k + 2 :, k] = 0.0
        A[k, k + 2 :] = 0.0
        if want_q:
            Qv = Q[:, k + 1 :] @ v
            Q[:, k + 1 :] -= beta * np.outer(Qv, v)
    d = np.diag(A).copy()
    e = np.diag(A, 1).copy() if n > 1 else np.zeros(0)
    return d, e, Q


def _ql_implicit(d, e, Q):
    """Implicit-shift QL on a symmetric tridiagonal matrix (in place).

    ``d`` (diagonal) and ``e`` (subdiagonal) are Python lists for scalar
    speed; if ``Q`` is given, plane rotations are accumulated into its
    columns so that the input matrix equals ``Q diag(d) Q^T``.
    """
    n = len(d)
    e = list(e) + [0.0]
    eps = np.finfo(float).eps
    for l in range(n):
        sweeps = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            sweeps += 1
            if sweeps > _QL_MAX_SWEEPS:
                raise ConvergenceError(
                    f"QL iteration exceeded {_QL_MAX_SWEEPS} sweeps at index {l}"
                )
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            broke = False
            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    broke = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                if Q is not None:
                    col = Q[:, i].copy()
                    Q[:, i] = c * col - s * Q[:, i + 1]
                    Q[:, i + 1] = s * col + c * Q[:, i + 1]
            if broke:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return d


def sym_eig(S) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.

    Satisfies ``||S V - V diag(w)||_F <= 1e-9 ||S||_F`` and
    ``||V^T V - I|| <= 1e-10``; raises ConvergenceError if the QL
    iteration cap is exceeded.
    """
    S = _as_sym(S)
    n = S.n
    if n == 1:
        return S.a[0].copy(), np.eye(1)
    d, e, Q = _tridiagonalize(S.a, want_q=True)
    dl = _ql_implicit(list(d), list(e), Q)
    w = np.asarray(dl)
    order = np.argsort(w, kind="stable")
    return w[order], Q[:, order]


def _eigvals_sym(S: SymMatrix) -> np.ndarray:
    """Eigenvalues only (ascending); skips eigenvector accumulation."""
    n = S.n
    if n == 1:
        return S.a[0].copy()
    d, e, _ = _tridiagonalize(S.a, want_q=False)
    dl = _ql_implicit(list(d), list(e), None)
    return np.sort(np.asarray(dl))


def min_eig_sym(S) -> float:
    """Smallest eigenvalue of a symmetric matrix (eigenvalues-only path)."""
    return float(_eigvals_sym(_as_sym(S))[0])


def default_pd_tol(S) -> float:
    """Scale-aware strict-positivity slack: 1e-9 * max(1, ||S||_2)."""
    S = _as_sym(S)
    return PD_TOL_SCALE * max(1.0, _norm_estimate(S))


def _cholesky_or_none(A: np.ndarray):
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None


def _min_eig_chol_bisect(S: np.ndarray, lo: float, hi: float) -> float:
    """Smallest eigenvalue of symmetric S by bisection on Cholesky shifts.

    Invariant: ``S - lo I`` factors (min_eig > lo) and ``S - hi I`` does
    not.  Deterministic and gap-free: accuracy does not depend on
    eigenvalue separation, only on the bracket width.
    """
    n = S.shape[0]
    eye = np.eye(n)
    span = hi - lo
    # 50 halvings take the bracket below 1e-15 of its original width.
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if _cholesky_or_none(S - mid * eye) is not None:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(abs(lo), abs(hi), span):
            break
    return lo


def check_pd(S, tol: float | None = None) -> PdReport:
    """Positive-definiteness test with a scale-aware tolerance.

    The decision attempts Cholesky of ``S - tol I``; on success the
    reported minimum eigenvalue comes from bisection on Cholesky shifts
    (a cheap exact bound), on failure from the symmetric eigensolver.
    The report always satisfies ``is_pd == (min_eig > tol)``.
    """
    S = _as_sym(S)
    if tol is None:
        tol = default_pd_tol(S)
    n = S.n
    shifted = S.a - tol * np.eye(n) if tol != 0.0 else S.a
    if _cholesky_or_none(shifted) is not None:
        # min_eig > tol is established; locate it in (tol, min diag entry].
        hi = float(np.min(np.diag(S.a)))  # Rayleigh bound: min_eig <= min S_ii
        min_eig = _min_eig_chol_bisect(S.a, tol, max(hi, tol) * (1 + 1e-12) + 1e-300)
        if min_eig > tol:
            return PdReport(is_pd=True, min_eig=min_eig, method="cholesky")
    min_eig = min_eig_sym(S)
    return PdReport(is_pd=bool(min_eig > tol), min_eig=min_eig, method="eig")


def solve_spd(M, B) -> np.ndarray:
    """Solve ``M X = B`` for positive definite M via its Cholesky factor.

    The factor is computed once and reused across all right-hand sides;
    residual satisfies ``||M X - B||_F <= 1e-9 ||B||_F`` for reasonably
    conditioned M.  Raises NotPositiveDefiniteError when factorization
    fails.
    """
    M = _as_sym(M)
    B = np.asarray(B, dtype=float)
    if not np.all(np.isfinite(B)):
        raise NonFiniteError("right-hand side has non-finite entries")
    if B.shape[0] != M.n:
        raise ShapeError(f"rhs has {B.shape[0]} rows, matrix is {M.n}x{M.n}")
    L = _cholesky_or_none(M.a)
    if L is None:
        raise NotPositiveDefiniteError("matrix is not positive definite")
    Y = np.linalg.solve(L, B)
    return np.linalg.solve(L.T, Y)


def sym_sqrt_psd(S) -> SymMatrix:
    """Symmetric PSD square root of a numerically PSD matrix.

    Eigenvalues below zero (tolerated down to ``-1e-9 ||S||_2``) are
    clamped to zero before square-rooting; ``||R^2 - S||_F <= 1e-8 ||S||_F``.
    """
    S = _as_sym(S)
    vals, vecs = sym_eig(S)
    norm2 = max(abs(float(vals[0])), abs(float(vals[-1])))
    if vals[0] < -1e-9 * norm2:
        raise NotPsdError(
            f"matrix has eigenvalue {vals[0]:.3e} below the PSD tolerance"
        )
    root = np.sqrt(np.maximum(vals, 0.0))
    return SymMatrix((vecs * root) @ vecs.T)
