import numpy as np
import pytest

from qpdiff import (
    DuplicateBackendError,
    QpProblem,
    SolveSettings,
    UnknownBackendError,
    brute_force_solve,
    gen_chain,
    gen_random_dense,
    gen_random_sparse,
    gen_simplex,
    get_backend,
    list_backends,
    register_backend,
    residuals,
    solve_active_set,
    solve_admm,
    solve_equality_qp,
)
from qpdiff.errors import RankDeficiencyError
from qpdiff.solvers import SOLVED, EqualityBackend, SolverBackend

from helpers import random_mixed_qp


class TestEqualitySolve:
    def test_unconstrained_minimum_is_minus_q(self):
        z, lam = solve_equality_qp(np.eye(2), np.array([1.0, 1.0]))
        np.testing.assert_allclose(z, [-1.0, -1.0])
        assert lam.shape == (0,)

    def test_symmetric_split(self):
        z, lam = solve_equality_qp(
            np.eye(2), np.zeros(2), np.array([[1.0, 1.0]]), np.array([1.0])
        )
        np.testing.assert_allclose(z, [0.5, 0.5])
        np.testing.assert_allclose(lam, [-0.5])
        # stationarity z + A' lam = 0
        np.testing.assert_allclose(z + lam[0] * np.ones(2), 0.0, atol=1e-12)

    def test_matches_schur_elimination_oracle(self):
        rng = np.random.Generator(np.random.PCG64(5))
        W = rng.standard_normal((6, 6))
        P = W.T @ W + 0.5 * np.eye(6)
        q = rng.standard_normal(6)
        A = rng.standard_normal((2, 6))
        b = rng.standard_normal(2)
        z, lam = solve_equality_qp(P, q, A, b)
        # independent elimination: lam from the Schur complement, then z
        Pinv_q = np.linalg.solve(P, -q)
        Pinv_At = np.linalg.solve(P, A.T)
        lam_oracle = np.linalg.solve(A @ Pinv_At, A @ Pinv_q - b)
        z_oracle = Pinv_q - Pinv_At @ lam_oracle
        np.testing.assert_allclose(z, z_oracle, atol=1e-8)
        np.testing.assert_allclose(lam, lam_oracle, atol=1e-8)
        assert np.abs(P @ z + q + A.T @ lam).max() < 1e-10
        assert np.abs(A @ z - b).max() < 1e-10

    def test_singular_kkt_raises(self):
        with pytest.raises(RankDeficiencyError):
            solve_equality_qp(
                np.eye(2), np.zeros(2),
                np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([1.0, 2.0]),
            )


class TestActiveSetSolver:
    def test_one_dimensional_bound(self):
        prob = QpProblem([[1.0]], [0.0], C=[[1.0]], d=[-1.0])
        point = solve_active_set(prob)
        assert point.status == SOLVED
        np.testing.assert_allclose(point.z, [-1.0], atol=1e-12)
        np.testing.assert_allclose(point.mu, [1.0], atol=1e-12)

    def test_two_dimensional_symmetric(self):
        prob = QpProblem(np.eye(2), np.zeros(2), C=[[-1.0, -1.0]], d=[-1.0])
        point = solve_active_set(prob)
        np.testing.assert_allclose(point.z, [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(point.mu, [0.5], atol=1e-12)

    def test_matches_brute_force_on_random_problems(self):
        for seed in range(30):
            prob = random_mixed_qp(6, 8, 0, seed=seed)
            point = solve_active_set(prob)
            assert point.status == SOLVED
            oracle = brute_force_solve(prob)
            np.testing.assert_allclose(point.z, oracle.z, atol=1e-6)

    def test_phase_one_handles_infeasible_equality_start(self):
        # equality-relaxed optimum violates the inequalities
        prob = QpProblem(np.eye(2), np.array([0.0, 0.0]),
                         A=[[1.0, 0.0]], b=[2.0], C=[[0.0, 1.0]], d=[-1.0])
        point = solve_active_set(prob)
        assert point.status == SOLVED
        np.testing.assert_allclose(point.z, [2.0, -1.0], atol=1e-9)

    def test_iteration_cap_returns_consistent_duals(self):
        # exiting mid-iteration must not leave stale multipliers behind
        prob = random_mixed_qp(8, 10, 1, seed=77)
        for budget in (1, 2, 3):
            point = solve_active_set(prob, SolveSettings(max_iterations=budget))
            assert point.mu.shape == (prob.m,)
            assert np.all(np.isfinite(point.mu))
            assert point.working_set.size <= prob.m

    def test_duals_complementary_and_nonnegative(self):
        for seed in range(20):
            prob = random_mixed_qp(5, 7, 1, seed=100 + seed)
            point = solve_active_set(prob)
            assert point.status == SOLVED
            assert point.mu.min(initial=0.0) >= 0.0
            slack = prob.C @ point.z - prob.d
            assert np.abs(point.mu * slack).max(initial=0.0) < 1e-8


class TestAdmmSolver:
    def test_one_dimensional_bound_tight(self):
        prob = QpProblem([[1.0]], [0.0], C=[[1.0]], d=[-1.0])
        point = solve_admm(prob, SolveSettings(eps_abs=1e-8))
        assert point.status == SOLVED
        np.testing.assert_allclose(point.z, [-1.0], atol=1e-7)

    def test_interior_simplex_projection_closed_form(self):
        x = np.array([0.6, 0.2])
        prob = QpProblem(
            2 * np.eye(2), -2 * x, A=[[1.0, 1.0]], b=[1.0],
            C=np.vstack([-np.eye(2), np.eye(2)]), d=[0.0, 0.0, 1.0, 1.0],
        )
        point = solve_admm(prob, SolveSettings(eps_abs=1e-6))
        np.testing.assert_allclose(point.z, [0.7, 0.3], atol=1e-6)

    def test_sparse_residuals_recomputed_independently(self):
        prob = gen_random_sparse(500, seed=0)
        point = solve_admm(prob, SolveSettings(eps_abs=1e-6))
        assert point.status == SOLVED
        res = residuals(prob, point)
        assert res.r_p <= 1e-6
        assert res.r_d <= 1e-6

    def test_deterministic(self):
        prob = gen_random_dense(12, seed=3)
        a = solve_admm(prob, SolveSettings(eps_abs=1e-7))
        b = solve_admm(prob, SolveSettings(eps_abs=1e-7))
        np.testing.assert_array_equal(a.z, b.z)
        assert a.iterations == b.iterations

    def test_warm_start_converges_immediately(self):
        prob = gen_random_dense(10, seed=1)
        first = solve_admm(prob, SolveSettings(eps_abs=1e-6))
        again = solve_admm(prob, SolveSettings(eps_abs=1e-6, warm_start=first))
        assert again.status == SOLVED
        assert again.iterations <= 5

    def test_unconstrained_problem(self):
        prob = QpProblem(np.eye(3), np.array([1.0, -2.0, 0.5]))
        point = solve_admm(prob, SolveSettings(eps_abs=1e-9))
        np.testing.assert_allclose(point.z, [-1.0, 2.0, -0.5], atol=1e-8)

    def test_max_iterations_reports_best_iterate(self):
        prob = gen_random_dense(20, seed=2)
        point = solve_admm(prob, SolveSettings(eps_abs=1e-12, max_iterations=5))
        assert point.status == "max_iter"
        assert point.z.shape == (20,)
        assert np.isfinite(point.r_p)

    def test_time_limit_stops_early(self):
        prob = gen_random_dense(30, seed=4)
        point = solve_admm(
            prob, SolveSettings(eps_abs=1e-14, time_limit=1e-9)
        )
        assert point.status == "max_iter"
        assert point.iterations < 100


class TestBackendAgreement:
    def test_active_set_vs_admm_on_random_dense(self):
        agreements = 0
        for seed in range(100):
            prob = random_mixed_qp(
                4 + seed % 7, 2 + seed % 9, seed % 3, seed=2000 + seed
            )
            exact = solve_active_set(prob)
            first_order = solve_admm(prob, SolveSettings(eps_abs=1e-8))
            if exact.status == SOLVED and first_order.status == SOLVED:
                np.testing.assert_allclose(
                    exact.z, first_order.z, atol=1e-5,
                    err_msg=f"seed {2000 + seed}",
                )
                agreements += 1
        assert agreements >= 95

    @pytest.mark.parametrize("backend_name", ["active_set", "admm"])
    def test_residuals_within_twice_tolerance(self, backend_name):
        backend = get_backend(backend_name)
        cases = [
            gen_simplex(40, seed=0)[0],
            gen_chain(6, 2, seed=0)[0],
            gen_random_dense(16, seed=0),
            random_mixed_qp(8, 6, 3, seed=7),
        ]
        settings = SolveSettings(eps_abs=1e-6)
        for prob in cases:
            point = backend.solve(prob, settings)
            assert point.status == SOLVED
            res = residuals(prob, point)
            assert res.r_p <= 2e-6
            assert res.r_d <= 2e-6


class TestEqualityBackend:
    def test_residuals_within_twice_tolerance_on_equality_only(self):
        rng = np.random.Generator(np.random.PCG64(55))
        W = rng.standard_normal((6, 6))
        prob = QpProblem(
            W.T @ W + np.eye(6), rng.standard_normal(6),
            A=rng.standard_normal((2, 6)), b=rng.standard_normal(2),
        )
        point = EqualityBackend().solve(prob, SolveSettings(eps_abs=1e-6))
        assert point.status == SOLVED
        res = residuals(prob, point)
        assert res.r_p <= 2e-6 and res.r_d <= 2e-6

    def test_solves_when_inequalities_slack(self):
        prob = QpProblem(np.eye(2), np.array([1.0, 1.0]), C=[[1.0, 0.0]], d=[5.0])
        point = EqualityBackend().solve(prob, SolveSettings())
        assert point.status == SOLVED
        np.testing.assert_allclose(point.z, [-1.0, -1.0])
        np.testing.assert_array_equal(point.mu, [0.0])

    def test_fails_when_inequality_binds(self):
        prob = QpProblem([[1.0]], [0.0], C=[[1.0]], d=[-1.0])
        point = EqualityBackend().solve(prob, SolveSettings())
        assert point.status == "failed"


class TestSettings:
    def test_tolerance_must_be_positive(self):
        with pytest.raises(ValueError):
            SolveSettings(eps_abs=0.0)

    def test_iteration_budget_must_be_positive(self):
        with pytest.raises(ValueError):
            SolveSettings(max_iterations=0)


class TestRegistry:
    def test_builtins_registered_alphabetical(self):
        names = list_backends()
        assert names == sorted(names)
        for expected in ("active_set", "admm", "equality"):
            assert expected in names

    def test_register_then_get(self):
        class Dummy(SolverBackend):
            name = "dummy_for_test"

        backend = Dummy()
        register_backend("dummy_for_test", backend)
        try:
            assert get_backend("dummy_for_test") is backend
            with pytest.raises(DuplicateBackendError):
                register_backend("dummy_for_test", backend)
        finally:
            from qpdiff.solvers import _registry

            _registry.pop("dummy_for_test", None)

    def test_unknown_backend(self):
        with pytest.raises(UnknownBackendError, match="nonexistent"):
            get_backend("nonexistent")
