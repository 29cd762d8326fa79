import itertools

import numpy as np
import pytest

from protopart.errors import InvalidParams, NumericalOverflow
from protopart.sinkhorn import (
    HardAssignment,
    SinkhornConfig,
    assignment_objective,
    harden_assignment,
    sinkhorn_plan,
)
from protopart import _ot_fallback


def brute_force_balanced(s: np.ndarray) -> float:
    """Best sum of similarities over assignments giving each column exactly
    N/K rows; independent enumeration oracle."""
    n, k = s.shape
    base = tuple(np.repeat(np.arange(k), n // k))
    best = -np.inf
    for perm in set(itertools.permutations(base)):
        best = max(best, float(s[np.arange(n), list(perm)].sum()))
    return best


def test_uniform_cost_gives_product_of_marginals():
    plan = sinkhorn_plan(np.zeros((2, 2)), SinkhornConfig(kappa=0.05))
    np.testing.assert_allclose(plan.plan, 0.25, atol=1e-12)
    plan = sinkhorn_plan(np.zeros((4, 2)), SinkhornConfig(kappa=0.05))
    np.testing.assert_allclose(plan.plan, 0.125, atol=1e-12)


def test_small_kappa_concentrates_on_diagonal():
    s = np.array([[1.0, 0.0], [0.0, 1.0]])
    plan = sinkhorn_plan(s, SinkhornConfig(kappa=0.05))
    assert plan.plan[0, 0] > 0.5 - 1e-4 and plan.plan[1, 1] > 0.5 - 1e-4
    assert plan.plan[0, 1] < 1e-4 and plan.plan[1, 0] < 1e-4
    np.testing.assert_array_equal(harden_assignment(plan).assign, [0, 1])


def test_plan_factorization_invariant(rng):
    for kappa in (0.05, 0.005):
        s = rng.uniform(-1, 1, (6, 3))
        tp = sinkhorn_plan(s, SinkhornConfig(kappa=kappa, max_iters=500))
        rebuilt = tp.u[:, None] * np.exp(s / kappa) * tp.v[None, :]
        np.testing.assert_allclose(tp.plan, rebuilt, atol=1e-9)
        assert np.all(tp.u > 0) and np.all(tp.v > 0)


def test_marginals_within_tolerance(rng):
    cfg = SinkhornConfig(kappa=0.05, max_iters=200, marginal_tol=1e-8)
    s = rng.uniform(-1, 1, (17, 4))
    tp = sinkhorn_plan(s, cfg)
    assert tp.converged
    np.testing.assert_allclose(tp.plan.sum(axis=1), 1 / 17, atol=1e-8)
    np.testing.assert_allclose(tp.plan.sum(axis=0), 1 / 4, atol=1e-8)


def test_converged_flag_reflects_iteration_budget():
    s = np.random.default_rng(5).uniform(-1, 1, (12, 3))
    tight = sinkhorn_plan(s, SinkhornConfig(kappa=0.05, max_iters=1, marginal_tol=1e-12))
    assert not tight.converged and tight.iters_used == 1
    loose = sinkhorn_plan(s, SinkhornConfig(kappa=0.05, max_iters=500, marginal_tol=1e-6))
    assert loose.converged and loose.iters_used < 500


def test_residuals_decrease_monotonically(rng):
    for _ in range(20):
        n = int(rng.integers(2, 30))
        k = int(rng.integers(2, 6))
        s = rng.uniform(-1, 1, (n, k))
        tp = sinkhorn_plan(
            s, SinkhornConfig(kappa=0.05, max_iters=60, marginal_tol=1e-14), record_residuals=True
        )
        hist = np.array(tp.residual_history)
        assert np.all(np.diff(hist) <= 1e-12)


def test_harden_ties_take_lowest_index():
    plan = sinkhorn_plan(np.zeros((2, 2)), SinkhornConfig(kappa=0.05))
    np.testing.assert_array_equal(harden_assignment(plan).assign, [0, 0])


def test_assignment_objective_examples():
    s = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert assignment_objective(HardAssignment(np.array([0, 1])), s) == 2.0
    assert assignment_objective(HardAssignment(np.array([0, 0])), s) == 1.0
    s2 = np.array([[0.3, 0.7], [0.9, 0.1]])
    assert abs(assignment_objective(HardAssignment(np.array([1, 0])), s2) - 1.6) < 1e-12


def test_hardened_matches_brute_force_on_balanced_instances(rng):
    cfg = SinkhornConfig(kappa=0.005, max_iters=3000, marginal_tol=1e-9)
    for _ in range(60):
        k = int(rng.integers(1, 5))
        n = k * int(rng.integers(1, 8 // k + 1))
        s = rng.uniform(-1, 1, (n, k))
        tp = sinkhorn_plan(s, cfg)
        obj = assignment_objective(harden_assignment(tp), s)
        assert abs(obj - brute_force_balanced(s)) <= 1e-6


def test_permutation_equivariance(rng):
    s = rng.uniform(-1, 1, (9, 3))
    cfg = SinkhornConfig(kappa=0.02, max_iters=500)
    base = harden_assignment(sinkhorn_plan(s, cfg)).assign
    perm = rng.permutation(9)
    permuted = harden_assignment(sinkhorn_plan(s[perm], cfg)).assign
    np.testing.assert_array_equal(permuted, base[perm])


def test_constant_shift_leaves_plan_unchanged(rng):
    s = rng.uniform(-1, 1, (7, 3))
    cfg = SinkhornConfig(kappa=0.05, max_iters=300)
    base = sinkhorn_plan(s, cfg).plan
    shifted = sinkhorn_plan(s + 0.75, cfg).plan
    np.testing.assert_allclose(base, shifted, atol=1e-9)


def test_entropic_objective_against_convex_solver(rng):
    cvxpy = pytest.importorskip("cvxpy")
    for trial in range(3):
        n, k = 4, 2
        s = rng.uniform(-1, 1, (n, k))
        kappa = 0.2
        a = cvxpy.Variable((n, k), nonneg=True)
        objective = cvxpy.Maximize(cvxpy.sum(cvxpy.multiply(a, s)) + kappa * cvxpy.sum(cvxpy.entr(a)))
        constraints = [cvxpy.sum(a, axis=1) == 1.0 / n, cvxpy.sum(a, axis=0) == 1.0 / k]
        cvxpy.Problem(objective, constraints).solve(solver="SCS", eps=1e-9, max_iters=100000)
        tp = sinkhorn_plan(s, SinkhornConfig(kappa=kappa, max_iters=2000, marginal_tol=1e-12))
        np.testing.assert_allclose(tp.plan, a.value, atol=1e-6)


def test_backends_agree(rng):
    s = rng.uniform(-1, 1, (20, 4))
    cfg = SinkhornConfig(kappa=0.05, max_iters=100)
    tp = sinkhorn_plan(s, cfg)
    hist = np.empty(cfg.max_iters)
    phi, psi, iters, converged, resid = _ot_fallback.sinkhorn_log_kernel(
        s / cfg.kappa, cfg.max_iters, cfg.marginal_tol, hist
    )
    shift = 0.5 * (np.mean(psi) - np.mean(phi))
    plan = np.exp(s / cfg.kappa + (phi + shift)[:, None] + (psi - shift)[None, :])
    np.testing.assert_allclose(tp.plan, plan, atol=1e-10)
    assert iters == tp.iters_used


def test_overflow_is_typed():
    s = np.array([[2000.0, -2000.0], [-2000.0, 2000.0]])
    with pytest.raises(NumericalOverflow):
        sinkhorn_plan(s, SinkhornConfig(kappa=1e-4, max_iters=5))


def test_bad_inputs():
    with pytest.raises(InvalidParams):
        sinkhorn_plan(np.zeros((0, 2)), SinkhornConfig())
    with pytest.raises(InvalidParams):
        sinkhorn_plan(np.array([[np.inf, 0.0]]), SinkhornConfig())
    with pytest.raises(InvalidParams):
        SinkhornConfig(kappa=0.0)
