import numpy as np

from qpdiff import (
    BilevelConfig,
    QpProblem,
    check_gradients,
    gen_chain,
    gen_simplex,
    profile_backends,
    run_bilevel,
    toy_bilevel_config,
)
from qpdiff.diagnostics import fastest_per_tolerance


class TestProfile:
    def test_cells_cover_backends_and_tolerances(self):
        prob, _ = gen_simplex(50, seed=0)
        cells = profile_backends(prob, ["active_set", "admm"], (1e-8, 1e-5, 1e-2))
        assert len(cells) == 6
        assert {c["backend"] for c in cells} == {"active_set", "admm"}

    def test_exact_solver_meets_tight_regime(self):
        prob, _ = gen_simplex(60, seed=1)
        cells = profile_backends(prob, ["active_set"], (1e-8,))
        assert cells[0]["meets"]

    def test_exact_solver_meets_tight_regime_on_dense(self):
        from qpdiff import gen_random_dense

        cells = profile_backends(gen_random_dense(50, seed=0), ["active_set"], (1e-8,))
        assert cells[0]["meets"]

    def test_failing_backend_marked_not_ranked(self):
        # the equality backend cannot handle an active inequality
        prob = QpProblem([[1.0]], [0.0], C=[[1.0]], d=[-1.0])
        cells = profile_backends(prob, ["equality", "active_set"], (1e-5,))
        by_name = {c["backend"]: c for c in cells}
        assert not by_name["equality"]["meets"]
        ranking = fastest_per_tolerance(cells)
        assert ranking[1e-5] == "active_set"


class TestCheckGradients:
    def test_simplex_passes(self):
        prob, _ = gen_simplex(5, seed=0)
        check = check_gradients(prob)
        assert check.passed and not check.skipped
        assert check.max_rel_error <= 1e-6

    def test_chain_passes(self):
        prob, _ = gen_chain(4, 2, seed=0)
        check = check_gradients(prob)
        assert check.passed

    def test_weakly_active_skipped_with_notice(self):
        prob = QpProblem([[1.0]], [0.0], C=[[1.0]], d=[0.0])
        check = check_gradients(prob)
        assert check.skipped
        assert "weakly active" in check.notice


class TestBilevel:
    def test_toy_converges_with_all_constraints_inactive(self):
        res = run_bilevel(toy_bilevel_config())
        assert res.converged
        assert res.losses[0] > 1.0
        assert res.losses[-1] <= 1e-10
        assert res.final_active.size == 0
        np.testing.assert_array_equal(res.final_mu, np.zeros(2))

    def test_already_inactive_terminates_at_iteration_zero(self):
        cfg = toy_bilevel_config(theta0=np.array([1.0, 1.0]))
        res = run_bilevel(cfg)
        assert res.converged
        assert res.iterations == 0
        assert res.losses == [0.0]

    def test_halving_keeps_loss_non_increasing(self):
        prob = QpProblem([[1.0]], [1.0], C=[[0.3], [0.1]], d=[-0.45, -0.14])
        cfg = BilevelConfig(problem=prob, theta0=np.zeros(2), max_iterations=40)
        res = run_bilevel(cfg)
        assert res.halvings  # step halving was exercised
        assert all(a >= b - 1e-15 for a, b in zip(res.losses, res.losses[1:]))

    def test_warm_start_round_trip(self):
        cfg = toy_bilevel_config(backend="admm", warm_start=True, max_iterations=5)
        res = run_bilevel(cfg)
        assert res.converged
