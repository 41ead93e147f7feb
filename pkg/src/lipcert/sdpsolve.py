"""Per-layer LMI construction and a self-contained log-det barrier solver.

The accurate estimator decides each interior layer's multipliers by
maximizing ``c`` subject to the linear matrix inequality

    [[ Lam - c Q,   (1/2) Lam S ],
     [ (1/2) S Lam,          I  ]]  > 0,      Lam diagonal > 0,  c > 0,

where ``S`` is the symmetric PSD square root of the propagated quadratic
form and ``Q = W_next^T W_next``.  This Schur-complement shape keeps the
diagonal blocks nonsingular.  The same barrier machinery also solves the
joint whole-network problem (maximize F over all multipliers at once)
for desk-scale cross-validation, and a bisection-on-c backend is
available for solver cross-checks.

Barrier method: maximize ``f_t(x) = t * obj.x + logdet A(x)`` by damped
Newton (gradient ``t obj_k + tr(A^{-1} F_k)``, Hessian
``-tr(A^{-1} F_j A^{-1} F_k)``), increasing ``t`` tenfold from 1 until
the gap estimate ``dim / t`` drops below ``tol * |obj.x|``.  Every
returned iterate is strictly feasible, so the reported objective is a
lower bound on the (unattained) supremum.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import cascade
from .errors import (
    DegenerateLayerError,
    EstimateTimeout,
    NumericError,
    ShapeError,
    SizeError,
    SolverError,
)
from .netio import Network
from .spectral import SymMatrix, _eigvals_sym, solve_spd, spectral_norm, sym_sqrt_psd

JOINT_DIM_CAP = 300

_T0 = 1.0
_T_MULT = 10.0
_T_CAP = 1e18
_ARMIJO = 0.01
_BACKTRACK = 0.5
_DECREMENT_TOL = 1e-10
_MAX_NEWTON_STAGE = 80
_MAX_NEWTON_TOTAL = 5000


@dataclass(frozen=True)
class LmiProblem:
    """Affine LMI ``A(x) = F0 + sum_k x_k Fk[k]`` with a linear objective.

    For the per-layer problem the variables are the ``d_i`` diagonal
    multiplier entries followed by ``c`` (``n_vars = d_i + 1``,
    ``dim = 2 d_i``), and the objective selects ``c``.  ``F`` and
    ``sqrt_F`` cache the propagated quadratic form and its PSD square
    root for reuse by the estimator driver.
    """

    n_vars: int
    dim: int
    F0: np.ndarray
    Fk: np.ndarray  # (n_vars, dim, dim)
    objective: np.ndarray
    F: SymMatrix | None = None
    sqrt_F: SymMatrix | None = None

    def A(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.n_vars:
            raise ShapeError(f"expected {self.n_vars} variables, got {x.shape[0]}")
        return self.F0 + np.tensordot(x, self.Fk, axes=([0], [0]))


@dataclass(frozen=True)
class SdpSolution:
    """Solver outcome: always a strictly feasible point.

    ``x`` stacks the multiplier diagonal and the objective variable;
    ``margin`` is the smallest eigenvalue of ``A(x)``; ``c_path`` records
    the objective value at the end of each barrier stage (non-decreasing
    along the central path).
    """

    x: np.ndarray
    objective: float
    margin: float
    newton_steps: int
    status: str  # "converged", "max_iter", "numeric"
    c_path: tuple[float, ...] = ()

    def __post_init__(self):
        if self.status == "converged" and not self.margin > 0.0:
            raise NumericError(
                f"converged solution is not strictly feasible (margin {self.margin:.3e})"
            )

    @property
    def lambda_diag(self) -> np.ndarray:
        return self.x[:-1]


def build_layer_lmi(W_i, M_prev, W_next) -> LmiProblem:
    """Assemble the per-layer LMI from the previous cascade matrix."""
    W_i = np.asarray(W_i, dtype=float)
    W_next = np.asarray(W_next, dtype=float)
    if not isinstance(M_prev, SymMatrix):
        M_prev = SymMatrix(M_prev)
    if W_i.shape[1] != M_prev.n:
        raise ShapeError(
            f"layer matrix has {W_i.shape[1]} columns, cascade matrix is {M_prev.n}"
        )
    if W_next.shape[1] != W_i.shape[0]:
        raise ShapeError(
            f"next layer expects {W_next.shape[1]} inputs, this layer outputs {W_i.shape[0]}"
        )
    d = W_i.shape[0]
    F = SymMatrix(W_i @ solve_spd(M_prev, W_i.T))
    S = sym_sqrt_psd(F)
    Q = W_next.T @ W_next

    dim = 2 * d
    n_vars = d + 1
    F0 = np.zeros((dim, dim))
    F0[d:, d:] = np.eye(d)
    Fk = np.zeros((n_vars, dim, dim))
    for j in range(d):
        Fk[j, j, j] = 1.0
        Fk[j, j, d:] = 0.5 * S.a[j, :]
        Fk[j, d:, j] = 0.5 * S.a[j, :]
    Fk[d, :d, :d] = -Q
    objective = np.zeros(n_vars)
    objective[d] = 1.0
    return LmiProblem(
        n_vars=n_vars, dim=dim, F0=F0, Fk=Fk, objective=objective, F=F, sqrt_F=S
    )


def _start_from_sigma(sigma: float, W_next: np.ndarray) -> tuple[np.ndarray, float]:
    if sigma <= 0.0:
        raise DegenerateLayerError("propagated quadratic form has zero spectral norm")
    d = W_next.shape[1]
    sigma_q = spectral_norm(W_next) ** 2
    if sigma_q <= 0.0:
        raise DegenerateLayerError("next layer weight matrix is zero")
    lam = np.full(d, 2.0 / sigma)
    c = 0.9 / (sigma * sigma_q)
    return lam, c


def feasible_start(W_i, M_prev, W_next) -> tuple[np.ndarray, float]:
    """Strictly feasible interior point for the per-layer LMI.

    With ``sigma`` the spectral norm of the propagated quadratic form,
    the point ``Lam = (2/sigma) I`` and
    ``c = 0.9 / (sigma * sigma_max(W_next^T W_next))`` satisfies the
    quadratic-form constraint with margin at least ``0.1/sigma``, so the
    feasible region is never empty while the cascade matrix stays
    positive definite and the weights are nonzero.
    """
    W_i = np.asarray(W_i, dtype=float)
    W_next = np.asarray(W_next, dtype=float)
    if not isinstance(M_prev, SymMatrix):
        M_prev = SymMatrix(M_prev)
    F = SymMatrix(W_i @ solve_spd(M_prev, W_i.T))
    sigma = spectral_norm(F.a)
    return _start_from_sigma(sigma, W_next)


def _chol_or_none(A: np.ndarray):
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None


def _logdet_from_chol(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def _solve_ridge(T: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve T d = g for PSD T, escalating a tiny ridge on breakdown."""
    n = T.shape[0]
    scale = float(np.trace(T)) / max(n, 1) + 1e-300
    ridge = 0.0
    for _ in range(8):
        try:
            L = np.linalg.cholesky(T + ridge * np.eye(n))
            return np.linalg.solve(L.T, np.linalg.solve(L, g))
        except np.linalg.LinAlgError:
            ridge = max(ridge * 100.0, 1e-14 * scale)
    raise NumericError("Newton system remained indefinite after regularization")


class _BarrierEngine:
    """Path following for: maximize obj.x subject to A(x) > 0."""

    def __init__(self, F0, Fk, obj, *, tol, deadline=None, probe=None):
        self.F0 = F0
        self.Fk = Fk
        self.obj = obj
        self.tol = tol
        self.deadline = deadline
        # probe(x, obj_val, gap, centered) -> "stop" | None; the gap bound
        # obj_sup - obj <= gap is only trustworthy when centered is True.
        self.probe = probe
        self.dim = F0.shape[0]
        self.newton_steps = 0
        self.stopped = False
        self.c_path: list[float] = []

    def _center(self, x, A, L, t, max_newton):
        """Damped Newton until the decrement is small; stays feasible."""
        eye = np.eye(self.dim)
        for _ in range(max_newton):
            K = np.linalg.solve(L.T, np.linalg.solve(L, eye))
            G = np.matmul(K, self.Fk)
            g = t * self.obj + np.einsum("kii->k", G)
            T = np.einsum("aij,bji->ab", G, G)
            d = _solve_ridge(T, g)
            dec = float(g @ d)
            if not math.isfinite(dec):
                raise NumericError("non-finite Newton decrement")
            if dec <= _DECREMENT_TOL:
                return x, A, L
            dA = np.tensordot(d, self.Fk, axes=([0], [0]))
            f_cur = t * float(self.obj @ x) + _logdet_from_chol(L)
            alpha = 1.0
            while True:
                A_new = A + alpha * dA
                L_new = _chol_or_none(A_new)
                if L_new is not None:
                    f_new = t * float(self.obj @ (x + alpha * d)) + _logdet_from_chol(
                        L_new
                    )
                    if f_new >= f_cur + _ARMIJO * alpha * dec:
                        break
                alpha *= _BACKTRACK
                if alpha < 1e-14:
                    # Numerical floor: no ascent direction left at this t.
                    return x, A, L
            x = x + alpha * d
            A, L = A_new, L_new
            self.newton_steps += 1
            if self.probe is not None:
                if self.probe(x, float(self.obj @ x), self.dim / t, False) == "stop":
                    self.stopped = True
                    return x, A, L
            if self.newton_steps > _MAX_NEWTON_TOTAL:
                return x, A, L
        return x, A, L

    def run(self, x0):
        x = np.asarray(x0, dtype=float).copy()
        A = self.F0 + np.tensordot(x, self.Fk, axes=([0], [0]))
        L = _chol_or_none(A)
        if L is None:
            raise ValueError("start point is not strictly feasible")
        t = _T0
        status = "max_iter"
        try:
            while True:
                if self.deadline is not None and time.monotonic() > self.deadline:
                    raise EstimateTimeout("deadline expired during barrier solve")
                x, A, L = self._center(x, A, L, t, _MAX_NEWTON_STAGE)
                obj_val = float(self.obj @ x)
                self.c_path.append(obj_val)
                if self.stopped:
                    status = "converged"
                    break
                gap = self.dim / t
                if self.probe is not None:
                    if self.probe(x, obj_val, gap, True) == "stop":
                        status = "converged"
                        break
                if gap < self.tol * max(abs(obj_val), np.finfo(float).tiny):
                    status = "converged"
                    break
                if t >= _T_CAP or self.newton_steps > _MAX_NEWTON_TOTAL:
                    status = "max_iter"
                    break
                t *= _T_MULT
        except NumericError:
            status = "numeric"
        return x, status


def maximize_c(
    prob: LmiProblem,
    start,
    tol: float = 1e-6,
    method: str = "barrier",
    deadline: float | None = None,
) -> SdpSolution:
    """Maximize the objective variable of the per-layer LMI.

    ``start`` is ``(lambda_diag, c)`` or a flat vector and must be
    strictly feasible.  The default barrier backend follows the central
    path; ``method="bisection"`` cross-validates with outer bisection on
    ``c`` and an inner max-min-eigenvalue feasibility test run on the
    same Newton machinery.
    """
    if isinstance(start, tuple):
        lam0, c0 = start
        x0 = np.concatenate([np.asarray(lam0, dtype=float).reshape(-1), [float(c0)]])
    else:
        x0 = np.asarray(start, dtype=float).reshape(-1)
    if x0.shape[0] != prob.n_vars:
        raise ShapeError(f"start has {x0.shape[0]} entries, expected {prob.n_vars}")
    if method == "barrier":
        engine = _BarrierEngine(
            prob.F0, prob.Fk, prob.objective, tol=tol, deadline=deadline
        )
        x, status = engine.run(x0)
        margin = float(_eigvals_sym(SymMatrix(prob.A(x)))[0])
        return SdpSolution(
            x=x,
            objective=float(prob.objective @ x),
            margin=margin,
            newton_steps=engine.newton_steps,
            status=status,
            c_path=tuple(engine.c_path),
        )
    if method == "bisection":
        return _maximize_c_bisection(prob, x0, tol, deadline)
    raise ValueError(f"unknown method {method!r}")


def _c_is_feasible(prob: LmiProblem, c: float, lam_warm: np.ndarray, deadline=None):
    """Decide whether some positive diagonal makes the LMI feasible at fixed c.

    Maximizes the smallest eigenvalue: variables ``(lambda, s)`` with
    LMI ``A(lambda, c) - s I > 0``.  Early exit as soon as ``s > 0``
    (feasibility witnessed); infeasibility is certified when the
    objective plus twice the gap bound stays negative.
    """
    d = prob.n_vars - 1
    F0c = prob.F0 + c * prob.Fk[d]
    Fk = np.concatenate([prob.Fk[:d], -np.eye(prob.dim)[None, :, :]], axis=0)
    obj = np.zeros(d + 1)
    obj[d] = 1.0

    A0 = F0c + np.tensordot(lam_warm, prob.Fk[:d], axes=([0], [0]))
    me = float(_eigvals_sym(SymMatrix(A0))[0])
    s0 = me - 0.5 * max(1.0, abs(me))
    y0 = np.concatenate([lam_warm, [s0]])

    verdict: dict = {}

    def probe(y, s_val, gap, centered):
        if s_val > 0.0:
            # A(lambda, c) > s I > 0: feasibility witnessed outright.
            verdict["feasible"] = y[:d].copy()
            return "stop"
        if centered and s_val + 2.0 * gap < 0.0:
            # Gap certificate (valid at centered points): s_sup < 0.
            verdict["infeasible"] = True
            return "stop"
        return None

    engine = _BarrierEngine(F0c, Fk, obj, tol=1e-12, deadline=deadline, probe=probe)
    engine.run(y0)
    if "feasible" in verdict:
        return True, verdict["feasible"]
    return False, None


def _maximize_c_bisection(prob, x0, tol, deadline) -> SdpSolution:
    d = prob.n_vars - 1
    lam = x0[:d].copy()
    lo = float(x0[d])
    if _chol_or_none(prob.A(x0)) is None:
        raise ValueError("start point is not strictly feasible")
    steps = 0
    hi = lo
    for _ in range(80):
        cand = hi * 2.0
        feas, lam_w = _c_is_feasible(prob, cand, lam, deadline)
        if feas:
            lo, lam, hi = cand, lam_w, cand
        else:
            hi = cand
            break
    else:
        raise SolverError("objective appears unbounded during bracketing")
    while (hi - lo) > tol * max(lo, np.finfo(float).tiny):
        if deadline is not None and time.monotonic() > deadline:
            raise EstimateTimeout("deadline expired during bisection")
        mid = 0.5 * (lo + hi)
        feas, lam_w = _c_is_feasible(prob, mid, lam, deadline)
        if feas:
            lo, lam = mid, lam_w
        else:
            hi = mid
        steps += 1
    x = np.concatenate([lam, [lo]])
    margin = float(_eigvals_sym(SymMatrix(prob.A(x)))[0])
    return SdpSolution(
        x=x,
        objective=lo,
        margin=margin,
        newton_steps=steps,
        status="converged",
        c_path=(lo,),
    )


# ---------------------------------------------------------------------------
# Joint whole-network problem (desk-scale oracle).
# ---------------------------------------------------------------------------


def _joint_lmi(net: Network, variant: str):
    """Coefficient stack for: maximize F over all multipliers jointly.

    Variables are every interior multiplier entry (``neuron``) or one
    scalar per interior layer (``layer``), followed by F.  The slope
    class is (0, 1), so the constant term is the identity in the first
    diagonal block and the multiplier blocks enter linearly.
    """
    Ws = net.weights()
    l = net.depth
    dims = net.dims[:-1]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    total = int(offsets[-1])

    hidden = net.dims[1:-1]
    if variant == "neuron":
        lam_vars = int(sum(hidden))
    elif variant == "layer":
        lam_vars = l - 1
    else:
        raise ValueError(f"unknown variant {variant!r}")
    n_vars = lam_vars + 1

    F0 = np.zeros((total, total))
    F0[: dims[0], : dims[0]] = np.eye(dims[0])
    Fk = np.zeros((n_vars, total, total))

    def add_multiplier(var: int, i: int, j: int, coeff: float):
        # Multiplier entry j of interior layer i (1-based) with weight coeff:
        # diagonal block (i, i) entry j, and the -(1/2) W_i^T Lam_i strips.
        r = offsets[i] + j
        Fk[var, r, r] += coeff
        W = Ws[i - 1]
        rows = slice(offsets[i - 1], offsets[i])
        Fk[var, rows, r] += -0.5 * coeff * W[j, :]
        Fk[var, r, rows] += -0.5 * coeff * W[j, :]

    var = 0
    for i in range(1, l):
        if variant == "neuron":
            for j in range(hidden[i - 1]):
                add_multiplier(var, i, j, 1.0)
                var += 1
        else:
            for j in range(hidden[i - 1]):
                add_multiplier(var, i, j, 1.0)
            var += 1
    Wl = Ws[-1]
    last = slice(offsets[l - 1], offsets[l])
    Fk[n_vars - 1, last, last] = -(Wl.T @ Wl)
    obj = np.zeros(n_vars)
    obj[n_vars - 1] = 1.0
    return F0, Fk, obj, lam_vars


def _joint_start(net: Network, variant: str, F0, Fk, lam_vars):
    """Strictly feasible joint start from the closed-form chain."""
    lam_vecs, inv_F, _ = cascade.closed_form_chain(net)
    if variant == "neuron":
        lam_part = np.concatenate(lam_vecs) if lam_vecs else np.zeros(0)
    else:
        lam_part = np.array([v[0] for v in lam_vecs])
    for shrink in (1e-3, 1e-2, 1e-1, 0.5, 0.9, 0.99):
        F_start = (1.0 - shrink) / inv_F
        x0 = np.concatenate([lam_part, [F_start]])
        A = F0 + np.tensordot(x0, Fk, axes=([0], [0]))
        if _chol_or_none(A) is not None:
            return x0
    raise NumericError("failed to construct a strictly feasible joint start")


def solve_joint_lipsdp(
    net: Network,
    variant: str = "neuron",
    tol: float = 1e-6,
    dim_cap: int = JOINT_DIM_CAP,
    deadline: float | None = None,
) -> cascade.Certificate:
    """Maximize F over all multipliers jointly on the monolithic LMI.

    ``variant="neuron"`` optimizes every diagonal entry; ``"layer"``
    restricts each interior multiplier to a multiple of the identity.
    Intended as a small-scale cross-validation oracle; the certificate
    is checked against the monolithic verifier before being returned.
    """
    if not net.activation.is_unit_interval():
        raise ValueError("joint estimation requires activation slope bounds (0, 1)")
    total = sum(net.dims[:-1])
    if total > dim_cap:
        raise SizeError(f"joint problem dimension {total} exceeds cap {dim_cap}")
    l = net.depth
    if l == 1:
        sigma = spectral_norm(net.layers[0].W)
        return cascade.Certificate(
            algo=f"joint_{variant}",
            lambdas=(),
            inv_F=sigma**2,
            L=sigma,
        )
    F0, Fk, obj, lam_vars = _joint_lmi(net, variant)
    x0 = _joint_start(net, variant, F0, Fk, lam_vars)
    engine = _BarrierEngine(F0, Fk, obj, tol=tol, deadline=deadline)
    x, status = engine.run(x0)
    if status == "numeric":
        raise NumericError("joint barrier solve failed numerically")
    F_star = float(x[-1])
    if F_star <= 0.0:
        raise NumericError(f"joint solve produced non-positive F = {F_star}")

    hidden = net.dims[1:-1]
    lambdas = []
    pos = 0
    for d in hidden:
        if variant == "neuron":
            lambdas.append(x[pos : pos + d].copy())
            pos += d
        else:
            lambdas.append(np.full(d, x[pos]))
            pos += 1
    cert = cascade.Certificate(
        algo=f"joint_{variant}",
        lambdas=tuple(lambdas),
        inv_F=1.0 / F_star,
        L=math.sqrt(1.0 / F_star),
    )
    report = cascade.verify_monolithic(net, cert, dim_cap=max(dim_cap, total))
    if not report.ok:
        # At very tight tol the interior margin (about tol*F/dim) can fall
        # below the verifier's scale-aware tolerance even though the point
        # is strictly feasible; a looser tol keeps certificates replayable.
        raise NumericError(
            f"joint solution failed monolithic replay (min eig {report.min_eig:.3e}, "
            f"tol {report.tol:.3e}); consider a looser solver tolerance"
        )
    return cert
