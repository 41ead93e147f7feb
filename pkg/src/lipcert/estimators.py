"""End-to-end Lipschitz estimators, the split baseline, and the sampling oracle.

Three certified estimators share the cascade recursion:

* ``estimate_trivial``: product of per-layer spectral norms.
* ``estimate_fast``: closed-form identity-multiple at every stage.
* ``estimate_sdp``: per-layer LMI maximization for the multipliers, with
  a guaranteed closed-form fallback at any stage the solver cannot
  finish (flagged in the certificate; the fallback always keeps the
  cascade matrix positive definite, so the pipeline is total).

``empirical_lower_bound`` is the soundness oracle: it samples true
network behavior (ReLU instantiation of the (0, 1) slope class) and can
only ever underestimate the true Lipschitz constant, so any certificate
below it is wrong.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import sdpsolve
from .cascade import (
    CascadeState,
    Certificate,
    closed_form_chain,
    final_bound,
    next_F,
    next_M,
    verify_chain,
)
from .errors import (
    EstimateTimeout,
    NumericError,
    SolverError,
    VerificationError,
)
from .netio import CounterRng, Network
from .spectral import spectral_norm


@dataclass(frozen=True)
class EstimateOptions:
    """Knobs shared by the certified estimators."""

    algo: str = "fast"
    sdp_tol: float = 1e-6
    slack: float = 1e-6
    verify: bool = True

    def __post_init__(self):
        if not 0.0 < self.sdp_tol < 1.0:
            raise ValueError(f"sdp_tol must lie in (0, 1), got {self.sdp_tol}")
        if not 0.0 < self.slack < 1.0:
            raise ValueError(f"slack must lie in (0, 1), got {self.slack}")


@dataclass(frozen=True)
class LowerBoundReport:
    """Empirical lower bound on the true Lipschitz constant."""

    L_lb: float
    samples: int
    argmax_input: np.ndarray

    def __post_init__(self):
        if not self.L_lb >= 0.0:
            raise ValueError(f"lower bound must be nonnegative, got {self.L_lb}")


def _require_unit_interval(net: Network, what: str):
    if not net.activation.is_unit_interval():
        raise ValueError(f"{what} requires activation slope bounds (0, 1)")


def _maybe_verify(net: Network, cert: Certificate, opts: EstimateOptions) -> Certificate:
    if opts.verify:
        report = verify_chain(net, cert, slack=opts.slack)
        if not report.ok:
            raise VerificationError(
                f"freshly built {cert.algo} certificate failed chain replay "
                f"(margins {report.min_eigs})"
            )
    return cert


def estimate_trivial(net: Network) -> Certificate:
    """Product of per-layer spectral norms; no multipliers to replay."""
    L = 1.0
    for la in net.layers:
        L *= spectral_norm(la.W)
    return Certificate(algo="trivial", lambdas=(), inv_F=L * L, L=L)


def estimate_fast(
    net: Network,
    opts: EstimateOptions = EstimateOptions(),
    deadline: float | None = None,
) -> Certificate:
    """Closed-form compositional estimate; no optimization anywhere."""
    _require_unit_interval(net, "the fast estimator")
    lams, inv_F, _ = closed_form_chain(net, deadline=deadline)
    cert = Certificate(
        algo="fast", lambdas=tuple(lams), inv_F=inv_F, L=math.sqrt(inv_F)
    )
    return _maybe_verify(net, cert, opts)


def estimate_sdp(
    net: Network,
    opts: EstimateOptions = EstimateOptions(algo="sdp"),
    deadline: float | None = None,
) -> Certificate:
    """Per-layer LMI maximization of the multipliers.

    Any stage where the solver fails (or produces a cascade matrix that
    is not numerically positive definite) falls back to the closed-form
    multiplier for that stage only; such stages are listed in
    ``hybrid_layers`` and their objective entry is NaN.
    """
    _require_unit_interval(net, "the accurate estimator")
    Ws = net.weights()
    state = CascadeState.initial(net.dims[0])
    lambdas: list[np.ndarray] = []
    c_values: list[float] = []
    hybrid: list[int] = []
    for i in range(1, net.depth):
        if deadline is not None and time.monotonic() > deadline:
            raise EstimateTimeout(f"deadline expired before stage {i}")
        prob = sdpsolve.build_layer_lmi(Ws[i - 1], state.M, Ws[i])
        F = prob.F
        sigma = spectral_norm(F.a)
        lam = None
        c_i = math.nan
        try:
            start = sdpsolve._start_from_sigma(sigma, Ws[i])
            sol = sdpsolve.maximize_c(
                prob, start, tol=opts.sdp_tol, deadline=deadline
            )
            if sol.status == "numeric":
                raise SolverError(f"solver reported numeric failure at layer {i}", layer=i)
            cand = sol.lambda_diag
            M = next_M(cand, F)
            np.linalg.cholesky(M.a)  # cheap PD gate before committing
            lam, c_i = cand, sol.objective
        except EstimateTimeout:
            raise
        except (SolverError, NumericError, np.linalg.LinAlgError):
            lam = None
        if lam is None:
            # Closed-form fallback keeps the recursion alive at this stage.
            lam = np.full(F.n, 2.0 / sigma)
            M = next_M(lam, F)
            hybrid.append(i)
            c_i = math.nan
        state = CascadeState(i, M, F)
        lambdas.append(np.asarray(lam))
        c_values.append(c_i)
    if deadline is not None and time.monotonic() > deadline:
        raise EstimateTimeout("deadline expired before the final stage")
    inv_F = final_bound(Ws[-1], state)
    cert = Certificate(
        algo="sdp",
        lambdas=tuple(lambdas),
        inv_F=inv_F,
        L=math.sqrt(inv_F),
        c_values=tuple(c_values),
        hybrid_layers=tuple(hybrid),
    )
    return _maybe_verify(net, cert, opts)


def estimate(
    net: Network,
    opts: EstimateOptions = EstimateOptions(),
    deadline: float | None = None,
) -> Certificate:
    """Dispatch on ``opts.algo`` (fast, sdp, trivial, joint_neuron, joint_layer)."""
    if opts.algo == "fast":
        return estimate_fast(net, opts, deadline)
    if opts.algo == "sdp":
        return estimate_sdp(net, opts, deadline)
    if opts.algo == "trivial":
        return estimate_trivial(net)
    if opts.algo in ("joint_neuron", "joint_layer"):
        variant = opts.algo.split("_", 1)[1]
        return sdpsolve.solve_joint_lipsdp(
            net, variant=variant, tol=opts.sdp_tol, deadline=deadline
        )
    raise ValueError(f"unknown algorithm {opts.algo!r}")


def split_compose(net: Network, split_sizes, base: str = "fast") -> float:
    """Split into consecutive sub-networks, estimate each, multiply the bounds.

    Each sub-network is treated as a network whose final layer is
    linear; the interleaving activations are 1-Lipschitz for the (0, 1)
    slope class, so the product of sub-network bounds is itself a valid
    bound for the whole network.
    """
    _require_unit_interval(net, "split composition")
    sizes = [int(s) for s in split_sizes]
    if any(s < 1 for s in sizes) or sum(sizes) != net.depth:
        raise ValueError(
            f"split sizes {sizes} must be positive and sum to the depth {net.depth}"
        )
    total = 1.0
    idx = 0
    for size in sizes:
        sub = Network(net.layers[idx : idx + size], net.activation)
        idx += size
        if base == "fast":
            total *= estimate_fast(sub).L
        elif base == "sdp":
            total *= estimate_sdp(sub).L
        elif base in ("joint_neuron", "joint_layer"):
            total *= sdpsolve.solve_joint_lipsdp(sub, variant=base.split("_", 1)[1]).L
        else:
            raise ValueError(f"unknown base estimator {base!r}")
    return total


def _forward_batch(net: Network, Z: np.ndarray):
    """Outputs and activation-masked input Jacobians for a sample batch."""
    Ws = net.weights()
    l = net.depth
    z = Z
    J = np.broadcast_to(Ws[0], (Z.shape[0],) + Ws[0].shape).copy()
    for i in range(1, l):
        V = z @ Ws[i - 1].T + net.layers[i - 1].b
        mask = V > 0.0
        J *= mask[:, :, None]
        z = np.maximum(V, 0.0)
        J = np.matmul(Ws[i], J)
    out = z @ Ws[l - 1].T + net.layers[l - 1].b
    return out, J


def empirical_lower_bound(
    net: Network,
    n_samples: int = 1000,
    seed: int = 0,
    input_box: float = 10.0,
    use_jacobian: bool = True,
    use_quotient: bool = True,
) -> LowerBoundReport:
    """Sampled lower bound on the true Lipschitz constant.

    Jacobian path: at each sampled input, the product of the weight
    matrices masked by the active-unit pattern is a one-sided Jacobian
    of the ReLU network, so its largest singular value is a valid lower
    bound.  Quotient path: max of ``|f(a) - f(b)| / |a - b|`` over
    sampled pairs.  Both paths can only underestimate; the global bound
    being certified dominates every local sample regardless of the box
    radius.
    """
    _require_unit_interval(net, "the sampling oracle")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if not (use_jacobian or use_quotient):
        raise ValueError("at least one of the two paths must be enabled")
    rng = CounterRng(seed)
    d0 = net.dims[0]
    Z = (2.0 * rng.uniforms(n_samples * d0).reshape(n_samples, d0) - 1.0) * input_box

    best = -1.0
    best_input = Z[0]
    outs = np.empty((n_samples, net.dims[-1]))
    chunk = 128
    for lo in range(0, n_samples, chunk):
        z = Z[lo : lo + chunk]
        out, J = _forward_batch(net, z)
        outs[lo : lo + chunk] = out
        if use_jacobian:
            sig = np.linalg.svd(J, compute_uv=False)[:, 0]
            k = int(np.argmax(sig))
            if sig[k] > best:
                best = float(sig[k])
                best_input = z[k].copy()
    if use_quotient and n_samples >= 2:
        pairs = 2 * (n_samples // 2)
        a, b = Z[0:pairs:2], Z[1:pairs:2]
        fa, fb = outs[0:pairs:2], outs[1:pairs:2]
        din = np.linalg.norm(a - b, axis=1)
        dout = np.linalg.norm(fa - fb, axis=1)
        valid = din > 0.0
        if valid.any():
            q = dout[valid] / din[valid]
            k = int(np.argmax(q))
            if q[k] > best:
                best = float(q[k])
                best_input = a[valid][k].copy()
    return LowerBoundReport(L_lb=max(best, 0.0), samples=n_samples, argmax_input=best_input)
