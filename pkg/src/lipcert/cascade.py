"""Layer-by-layer decomposition state machine, certificates, and verifiers.

The certified bound rests on a sequence of small matrix conditions that
is exactly equivalent (by block tri-diagonal Cholesky reduction) to a
single large matrix inequality over the whole network.  This module owns
both directions:

* the forward recursion ``M_i = Lambda_i - (1/4) Lambda_i W_i M_{i-1}^{-1}
  W_i^T Lambda_i`` with ``M_0 = I`` and the cached quadratic form
  ``F_i = W_i M_{i-1}^{-1} W_i^T``,
* the final-bound formula ``1/F = sigma_max(W_l M_{l-1}^{-1} W_l^T)``
  (computed in the symmetric form, which needs only the inverse of the
  already-positive-definite cascade matrix),
* certificate construction/serialization, and
* two independent certificate verifiers: a sequential replay of the
  chain conditions, and assembly plus eigen-analysis of the monolithic
  block tri-diagonal matrix.  The two must agree; each chain condition
  is the Schur complement produced by block Cholesky elimination of the
  monolithic matrix, the last one shifted by the F-weighted output Gram
  term.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLayerError, EstimateTimeout, ParseError, ShapeError, SizeError
from .netio import Network
from .spectral import (
    PD_TOL_SCALE,
    SymMatrix,
    _eigvals_sym,
    check_pd,
    default_pd_tol,
    solve_spd,
    spectral_norm,
)

ALGOS = ("fast", "sdp", "trivial", "joint_neuron", "joint_layer")

DEFAULT_SLACK = 1e-6
MONOLITHIC_DIM_CAP = 2000


@dataclass(frozen=True)
class CascadeState:
    """Running pair of the recursion at stage ``i``.

    ``M`` is the stage-``i`` cascade matrix (positive definite at every
    stage; the identity at stage 0) and ``F`` caches the propagated
    quadratic form ``W_i M_{i-1}^{-1} W_i^T`` (positive semidefinite;
    ``None`` at stage 0 where no layer has been absorbed yet).
    """

    i: int
    M: SymMatrix
    F: SymMatrix | None

    def __post_init__(self):
        if self.i == 0:
            if not np.array_equal(self.M.a, np.eye(self.M.n)):
                raise ValueError("stage-0 cascade matrix must be the identity")
        else:
            try:
                np.linalg.cholesky(self.M.a)
            except np.linalg.LinAlgError:
                report = check_pd(self.M)
                if not report.is_pd:
                    raise ValueError(
                        f"cascade matrix at stage {self.i} is not positive definite "
                        f"(min eigenvalue {report.min_eig:.3e})"
                    ) from None

    @classmethod
    def initial(cls, d0: int) -> "CascadeState":
        return cls(0, SymMatrix.identity(d0), None)


def next_F(W_next, state: CascadeState) -> SymMatrix:
    """Propagated quadratic form ``W_next M^{-1} W_next^T`` for the next stage."""
    W_next = np.asarray(W_next, dtype=float)
    if W_next.shape[1] != state.M.n:
        raise ShapeError(
            f"layer matrix has {W_next.shape[1]} columns, state dimension is {state.M.n}"
        )
    X = solve_spd(state.M, W_next.T)
    return SymMatrix(W_next @ X)


def next_M(lambda_diag, F: SymMatrix) -> SymMatrix:
    """One recursion step: ``diag(lam) - (1/4) diag(lam) F diag(lam)``.

    No positive-definiteness guarantee on the output; callers check.
    """
    lam = np.asarray(lambda_diag, dtype=float).reshape(-1)
    if lam.shape[0] != F.n:
        raise ShapeError(f"multiplier vector length {lam.shape[0]} != form size {F.n}")
    if not np.all(lam > 0.0):
        raise ValueError("multiplier entries must be strictly positive")
    M = np.diag(lam) - 0.25 * (F.a * np.outer(lam, lam))
    return SymMatrix(M)


def final_bound(W_last, state: CascadeState) -> float:
    """Smallest attainable ``1/F`` given the cascade state: the spectral norm
    of ``W_last M^{-1} W_last^T`` (equal, on nonzero eigenvalues, to that of
    ``W_last^T W_last M^{-1}``)."""
    return spectral_norm(next_F(W_last, state).a)


def closed_form_chain(net: Network, deadline: float | None = None):
    """Run the recursion with the closed-form multiplier at every stage.

    At stage ``i`` the scalar multiplier ``2 / sigma_max(F_i)`` maximizes
    the smallest eigenvalue of the resulting cascade matrix over
    identity-multiple choices, and yields ``M_i = I / sigma_max(F_i)``,
    so positive definiteness never fails.  Returns
    ``(lambda_vectors, inv_F, per_stage_sigmas)``.
    """
    Ws = net.weights()
    state = CascadeState.initial(net.dims[0])
    lams: list[np.ndarray] = []
    sigmas: list[float] = []
    for i in range(1, net.depth):
        if deadline is not None and time.monotonic() > deadline:
            raise EstimateTimeout(f"deadline expired before stage {i}")
        F = next_F(Ws[i - 1], state)
        sigma = spectral_norm(F.a)
        if sigma <= 0.0:
            raise DegenerateLayerError(
                f"stage {i} quadratic form has zero spectral norm"
            )
        lam = np.full(F.n, 2.0 / sigma)
        M = next_M(lam, F)
        state = CascadeState(i, M, F)
        lams.append(lam)
        sigmas.append(sigma)
    if deadline is not None and time.monotonic() > deadline:
        raise EstimateTimeout("deadline expired before the final stage")
    inv_F = final_bound(Ws[-1], state)
    return lams, inv_F, sigmas


@dataclass(frozen=True)
class Certificate:
    """Replayable output of an estimation run.

    ``lambdas`` holds one positive multiplier vector per interior layer
    (empty for the trivial product bound), ``inv_F`` the certified
    ``1/F`` value, and ``L = sqrt(inv_F)`` the Lipschitz upper bound.
    ``c_values`` records the per-stage objective values when the
    per-layer optimizer produced the multipliers, and ``hybrid_layers``
    the stages where it fell back to the closed form.
    """

    algo: str
    lambdas: tuple[np.ndarray, ...]
    inv_F: float
    L: float
    c_values: tuple[float, ...] | None = None
    hybrid_layers: tuple[int, ...] = ()

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algorithm tag {self.algo!r}")
        if not (math.isfinite(self.inv_F) and self.inv_F > 0.0):
            raise ValueError(f"inv_F must be finite and positive, got {self.inv_F}")
        if abs(self.L - math.sqrt(self.inv_F)) > 1e-14 * self.L:
            raise ValueError("L must equal sqrt(inv_F)")
        lambdas = tuple(
            np.asarray(v, dtype=float).reshape(-1) for v in self.lambdas
        )
        for idx, v in enumerate(lambdas, start=1):
            if not np.all(v > 0.0):
                raise ValueError(f"multiplier vector {idx} has non-positive entries")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"multiplier vector {idx} has non-finite entries")
        object.__setattr__(self, "lambdas", lambdas)

    def to_json_obj(self) -> dict:
        obj = {
            "algo": self.algo,
            "lambdas": [v.tolist() for v in self.lambdas],
            "inv_F": self.inv_F,
            "L": self.L,
            "c_values": list(self.c_values) if self.c_values is not None else None,
        }
        if self.hybrid_layers:
            obj["hybrid_layers"] = list(self.hybrid_layers)
        return obj

    @classmethod
    def from_json_obj(cls, obj) -> "Certificate":
        try:
            return cls(
                algo=obj["algo"],
                lambdas=tuple(np.asarray(v, dtype=float) for v in obj["lambdas"]),
                inv_F=float(obj["inv_F"]),
                L=float(obj["L"]),
                c_values=(
                    tuple(float(c) for c in obj["c_values"])
                    if obj.get("c_values") is not None
                    else None
                ),
                hybrid_layers=tuple(int(i) for i in obj.get("hybrid_layers", ())),
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"certificate object malformed: {exc}") from exc


def save_certificate(cert: Certificate, path) -> None:
    with open(str(path), "w", encoding="utf-8") as fh:
        json.dump(cert.to_json_obj(), fh)
        fh.write("\n")


def load_certificate(path) -> Certificate:
    with open(str(path), "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    return Certificate.from_json_obj(obj)


def _check_cert_shape(net: Network, cert: Certificate):
    hidden = net.dims[1:-1]
    if len(cert.lambdas) != net.depth - 1:
        raise ShapeError(
            f"certificate has {len(cert.lambdas)} multiplier vectors, "
            f"network needs {net.depth - 1}"
        )
    for idx, (lam, d) in enumerate(zip(cert.lambdas, hidden), start=1):
        if lam.shape[0] != d:
            raise ShapeError(
                f"multiplier vector {idx} has length {lam.shape[0]}, layer width is {d}",
                layer=idx,
            )


@dataclass(frozen=True)
class ChainReport:
    """Sequential replay outcome: one margin per chain condition.

    ``min_eigs`` lists the smallest eigenvalue of each stage matrix
    ``M_1 .. M_{l-1}`` followed by the terminal condition matrix
    ``M_{l-1} - F' W_l^T W_l``; ``tols`` the tolerance each was tested at.
    """

    ok: bool
    min_eigs: tuple[float, ...]
    tols: tuple[float, ...]


def verify_chain(net: Network, cert: Certificate, slack: float = DEFAULT_SLACK) -> ChainReport:
    """Replay the chain conditions from the certificate's multipliers.

    Rebuilds the full recursion from ``cert.lambdas`` and tests every
    stage matrix for positive definiteness, then the terminal condition
    at the deflated value ``F' = (1 - slack) / inv_F``.  The optimal
    ``1/F`` sits exactly on the boundary, so a strictly positive slack
    is required for any certificate produced by a maximizing estimator.
    """
    if not net.activation.is_unit_interval():
        raise ValueError("chain replay requires activation slope bounds (0, 1)")
    _check_cert_shape(net, cert)
    Ws = net.weights()
    state = CascadeState.initial(net.dims[0])
    min_eigs: list[float] = []
    tols: list[float] = []
    ok = True
    for i in range(1, net.depth):
        F = next_F(Ws[i - 1], state)
        M = next_M(cert.lambdas[i - 1], F)
        tol = default_pd_tol(M)
        report = check_pd(M, tol)
        min_eigs.append(report.min_eig)
        tols.append(tol)
        if not report.is_pd:
            ok = False
            break
        state = CascadeState(i, M, F)
    if ok:
        F_val = (1.0 - slack) / cert.inv_F
        T = SymMatrix(state.M.a - F_val * (Ws[-1].T @ Ws[-1]))
        tol = default_pd_tol(T)
        report = check_pd(T, tol)
        min_eigs.append(report.min_eig)
        tols.append(tol)
        ok = report.is_pd
    return ChainReport(ok=ok, min_eigs=tuple(min_eigs), tols=tuple(tols))


@dataclass(frozen=True)
class MonolithicForm:
    """The assembled block tri-diagonal matrix and its block index map.

    ``blocks`` maps a pair of 0-based block indices (layer boundaries)
    to the row/column ranges of the corresponding sub-block.
    """

    P: SymMatrix
    blocks: dict = field(default_factory=dict)


def assemble_monolithic(net: Network, cert: Certificate, F: float) -> MonolithicForm:
    """Assemble the full matrix inequality for candidate value ``F``.

    Block structure over dimensions ``d_0 .. d_{l-1}`` with activation
    coefficients ``p`` and ``m``: first diagonal block
    ``I + p W_1^T Lam_1 W_1``, interior blocks
    ``Lam_i + p W_{i+1}^T Lam_{i+1} W_{i+1}``, last block
    ``Lam_{l-1} - F W_l^T W_l``, and super/sub-diagonal blocks
    ``-m W_i^T Lam_i`` / ``-m Lam_i W_i``.
    """
    _check_cert_shape(net, cert)
    Ws = net.weights()
    l = net.depth
    dims = net.dims[:-1]
    p = net.activation.p
    m = net.activation.m
    offsets = np.concatenate([[0], np.cumsum(dims)])
    total = int(offsets[-1])
    lams = [np.asarray(v) for v in cert.lambdas]

    P = np.zeros((total, total))
    blocks: dict[tuple[int, int], tuple[slice, slice]] = {}

    def blk(i: int, j: int) -> tuple[slice, slice]:
        s = (slice(offsets[i], offsets[i + 1]), slice(offsets[j], offsets[j + 1]))
        blocks[(i, j)] = s
        return s

    for i in range(l):
        rs, cs = blk(i, i)
        if i == 0:
            D = np.eye(dims[0])
        else:
            D = np.diag(lams[i - 1])
        if i == l - 1:
            D = D - F * (Ws[l - 1].T @ Ws[l - 1])
        elif p != 0.0:
            W = Ws[i]
            D = D + p * (W.T @ (lams[i][:, None] * W))
        P[rs, cs] = D
    for i in range(1, l):
        rs, cs = blk(i - 1, i)
        B = -m * (Ws[i - 1].T * lams[i - 1][None, :])
        P[rs, cs] = B
        rs, cs = blk(i, i - 1)
        P[rs, cs] = B.T
    return MonolithicForm(P=SymMatrix(P), blocks=blocks)


@dataclass(frozen=True)
class MonolithicReport:
    ok: bool
    min_eig: float
    tol: float
    dim: int


def verify_monolithic(
    net: Network,
    cert: Certificate,
    slack: float = DEFAULT_SLACK,
    dim_cap: int = MONOLITHIC_DIM_CAP,
) -> MonolithicReport:
    """Verify a certificate against the single monolithic matrix inequality.

    Dense eigen-analysis of the assembled matrix at
    ``F' = (1 - slack) / inv_F``; positivity uses the same scale-aware
    tolerance as the chain verifier so the two replay routes agree.
    """
    total = sum(net.dims[:-1])
    if total > dim_cap:
        raise SizeError(
            f"monolithic verification dimension {total} exceeds cap {dim_cap}"
        )
    F_val = (1.0 - slack) / cert.inv_F
    form = assemble_monolithic(net, cert, F_val)
    vals = _eigvals_sym(form.P)
    min_eig = float(vals[0])
    norm2 = max(abs(float(vals[0])), abs(float(vals[-1])))
    tol = PD_TOL_SCALE * max(1.0, norm2)
    return MonolithicReport(
        ok=bool(min_eig > tol), min_eig=min_eig, tol=tol, dim=total
    )
