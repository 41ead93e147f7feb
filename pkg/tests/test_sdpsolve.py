import numpy as np
import pytest

import lipcert as lc
from lipcert.errors import SizeError
from lipcert.sdpsolve import _start_from_sigma
from tests.conftest import make_identity_net, make_scalar_chain


def scalar_problem(w1, w2):
    W1 = np.array([[float(w1)]])
    W2 = np.array([[float(w2)]])
    M0 = lc.SymMatrix([[1.0]])
    prob = lc.build_layer_lmi(W1, M0, W2)
    start = lc.feasible_start(W1, M0, W2)
    return prob, start


class TestBuildLayerLmi:
    def test_scalar_block_layout(self):
        prob, _ = scalar_problem(1.0, 1.0)
        lam, c = 1.7, 0.3
        A = prob.A([lam, c])
        expected = np.array([[lam - c, lam / 2.0], [lam / 2.0, 1.0]])
        assert np.allclose(A, expected)

    def test_constant_term(self):
        prob, _ = scalar_problem(1.0, 1.0)
        A0 = prob.A([0.0, 0.0])
        assert np.allclose(A0, np.array([[0.0, 0.0], [0.0, 1.0]]))

    def test_dimensions(self):
        rng = np.random.default_rng(0)
        W_i = rng.standard_normal((5, 3))
        W_next = rng.standard_normal((2, 5))
        prob = lc.build_layer_lmi(W_i, lc.SymMatrix(np.eye(3)), W_next)
        assert prob.n_vars == 6
        assert prob.dim == 10

    @pytest.mark.parametrize("seed", range(3))
    def test_entrywise_block_reproduction(self, seed):
        rng = np.random.default_rng(seed)
        d_prev, d, d_next = 3, 4, 2
        W_i = rng.standard_normal((d, d_prev))
        W_next = rng.standard_normal((d_next, d))
        M_prev = lc.SymMatrix(np.eye(d_prev) * 1.5)
        prob = lc.build_layer_lmi(W_i, M_prev, W_next)
        lam = rng.uniform(0.5, 2.0, size=d)
        c = 0.37
        A = prob.A(np.concatenate([lam, [c]]))
        S = prob.sqrt_F.a
        Lam = np.diag(lam)
        Q = W_next.T @ W_next
        expected = np.block(
            [[Lam - c * Q, 0.5 * Lam @ S], [0.5 * S @ Lam, np.eye(d)]]
        )
        assert np.allclose(A, expected, atol=1e-12)


class TestFeasibleStart:
    def test_scalar_margin(self):
        _, (lam, c) = scalar_problem(1.0, 1.0)
        assert np.allclose(lam, [2.0])
        assert c == pytest.approx(0.9)
        # quadratic-form margin: lam - lam^2 sigma/4 - c = 2 - 1 - 0.9
        assert 2.0 - 1.0 - 0.9 == pytest.approx(0.1)

    def test_identity_case(self):
        n = 4
        I = np.eye(n)
        lam, c = lc.feasible_start(I, lc.SymMatrix(I), I)
        assert np.allclose(lam, np.full(n, 2.0))
        assert c == pytest.approx(0.9)

    @pytest.mark.parametrize("seed", range(25))
    def test_strict_feasibility_sweep(self, seed):
        rng = np.random.default_rng(seed)
        d_prev, d, d_next = 4, 5, 3
        W_i = rng.standard_normal((d, d_prev))
        W_next = rng.standard_normal((d_next, d))
        G = rng.standard_normal((d_prev, d_prev))
        M_prev = lc.SymMatrix(G @ G.T + 0.2 * np.eye(d_prev))
        prob = lc.build_layer_lmi(W_i, M_prev, W_next)
        lam, c = lc.feasible_start(W_i, M_prev, W_next)
        # independent feasibility oracle
        min_eig = np.linalg.eigvalsh(prob.A(np.concatenate([lam, [c]])))[0]
        assert min_eig > 0.0


class TestMaximizeC:
    def test_scalar_unit_weights(self):
        prob, start = scalar_problem(1.0, 1.0)
        sol = lc.maximize_c(prob, start, tol=1e-6)
        assert sol.status == "converged"
        assert sol.objective == pytest.approx(1.0, rel=1e-4)
        assert sol.margin > 0.0

    def test_scalar_2_3(self):
        prob, start = scalar_problem(2.0, 3.0)
        sol = lc.maximize_c(prob, start, tol=1e-6)
        assert sol.objective == pytest.approx(1.0 / 36.0, rel=1e-4)

    def test_identity_reduces_to_scalar_problems(self):
        n = 4
        I = np.eye(n)
        prob = lc.build_layer_lmi(I, lc.SymMatrix(I), I)
        sol = lc.maximize_c(prob, lc.feasible_start(I, lc.SymMatrix(I), I), tol=1e-6)
        assert sol.objective == pytest.approx(1.0, rel=1e-4)
        assert np.allclose(sol.lambda_diag, 2.0, atol=2e-3)

    def test_path_monotone_and_feasible(self):
        rng = np.random.default_rng(5)
        W_i = rng.standard_normal((4, 3))
        W_next = rng.standard_normal((2, 4))
        M_prev = lc.SymMatrix(np.eye(3))
        prob = lc.build_layer_lmi(W_i, M_prev, W_next)
        sol = lc.maximize_c(prob, lc.feasible_start(W_i, M_prev, W_next), tol=1e-6)
        assert sol.status == "converged"
        path = sol.c_path
        assert all(b >= a - 1e-9 * max(1.0, abs(b)) for a, b in zip(path, path[1:]))
        # solver soundness via an independent eigenvalue oracle
        assert np.linalg.eigvalsh(prob.A(sol.x))[0] > 0.0
        assert np.all(sol.lambda_diag > 0.0)
        assert sol.objective > 0.0

    def test_infeasible_start_rejected(self):
        prob, _ = scalar_problem(1.0, 1.0)
        with pytest.raises(ValueError):
            lc.maximize_c(prob, (np.array([2.0]), 5.0))  # c=5 is far outside

    @pytest.mark.parametrize("seed", range(5))
    def test_bisection_agrees_with_barrier(self, seed):
        rng = np.random.default_rng(seed)
        d_prev, d, d_next = 3, 4, 3
        W_i = rng.standard_normal((d, d_prev))
        W_next = rng.standard_normal((d_next, d))
        M_prev = lc.SymMatrix(np.eye(d_prev))
        prob = lc.build_layer_lmi(W_i, M_prev, W_next)
        start = lc.feasible_start(W_i, M_prev, W_next)
        barrier = lc.maximize_c(prob, start, tol=1e-6)
        bisect = lc.maximize_c(prob, start, tol=1e-5, method="bisection")
        assert bisect.objective == pytest.approx(barrier.objective, rel=1e-4)
        assert bisect.margin > 0.0


class TestJointSolver:
    def test_single_layer_is_spectral_norm(self):
        W = np.array([[3.0, 1.0], [0.0, 4.0]])
        net = lc.from_weights([W])
        cert = lc.solve_joint_lipsdp(net, "neuron")
        assert cert.L == pytest.approx(lc.spectral_norm(W), rel=1e-4)

    def test_scalar_chain(self):
        net = make_scalar_chain(0.5, 2.0, 1.5)
        for variant in ("neuron", "layer"):
            cert = lc.solve_joint_lipsdp(net, variant)
            assert cert.L == pytest.approx(1.5, rel=1e-3)
            assert cert.algo == f"joint_{variant}"

    def test_identity_network(self):
        net = make_identity_net(3, 4)
        cert = lc.solve_joint_lipsdp(net, "neuron")
        assert cert.L == pytest.approx(1.0, rel=1e-3)

    def test_certificates_replay(self):
        net = lc.random_network(3, [4, 5, 5, 1], seed=11)
        cert = lc.solve_joint_lipsdp(net, "neuron")
        assert lc.verify_chain(net, cert).ok
        assert lc.verify_monolithic(net, cert).ok

    def test_layer_variant_constant_blocks(self):
        net = lc.random_network(3, [3, 4, 4, 2], seed=2)
        cert = lc.solve_joint_lipsdp(net, "layer")
        for v in cert.lambdas:
            assert np.allclose(v, v[0])

    def test_size_cap(self):
        net = make_identity_net(2, 4)
        with pytest.raises(SizeError):
            lc.solve_joint_lipsdp(net, "neuron", dim_cap=3)

    @pytest.mark.parametrize("seed", range(3))
    def test_joint_no_looser_than_compositional(self, seed):
        net = lc.random_network(3, [4, 5, 5, 1], seed=seed)
        L_sdp = lc.estimate_sdp(net).L
        L_joint = lc.solve_joint_lipsdp(net, "neuron", tol=1e-7).L
        assert L_joint <= L_sdp + 1e-6


class TestStartHelper:
    def test_degenerate_sigma_rejected(self):
        with pytest.raises(lc.DegenerateLayerError):
            _start_from_sigma(0.0, np.eye(2))
