import json

import numpy as np
import pytest

from pairsbl.errors import (
    InfeasiblePointError,
    InfeasibleProblemError,
    RegularizationRequiredError,
    ValidationError,
)
from pairsbl.optimizer import (
    OptimizationProblem,
    brute_force_oracle,
    kkt_residual,
    solve,
)

S2 = np.array([[0.04, 0.01], [0.01, 0.09]])
M2 = np.array([0.001, 0.002])
# grid search at step 1e-3 over the feasible set of the instance above (frozen)
GRID_ANSWER = np.array([0.722, 0.2775])


def instance(**kw):
    args = dict(m_bar=M2, S=S2, d=2.0, x_prev=np.zeros(2), c=0.0005, cost_cap=0.02)
    args.update(kw)
    return OptimizationProblem(**args)


def random_problem(rng, n, c=None, cap=None, budget=True):
    A = rng.normal(size=(n, n)) * 0.02
    S = A @ A.T + 1e-4 * np.eye(n)
    m = rng.normal(size=n) * 0.002
    xp = rng.uniform(-1, 1, n)
    xp = xp / max(1.0, abs(xp.sum())) if rng.random() < 0.5 else xp
    c = float(rng.choice([0.0, 0.0005, 0.01])) if c is None else c
    cap = float(rng.choice([0.02, 0.005, 1.0])) if cap is None else cap
    return OptimizationProblem(m, S, 2.0, xp, c, cap, enforce_budget=budget)


def feasible_or_raises(prob):
    try:
        return solve(prob)
    except InfeasibleProblemError as exc:
        assert exc.constraint in ("cost_cap", "box")
        return None


def test_n2_instance_matches_grid_oracle():
    prob = instance()
    sol = solve(prob)
    oracle = brute_force_oracle(prob, 1e-3)
    assert np.max(np.abs(oracle.x - GRID_ANSWER)) < 1e-6
    assert np.max(np.abs(sol.x - oracle.x)) < 2e-3
    assert sol.objective_value >= oracle.objective_value - 1e-12
    assert sol.kkt_residual < 1e-6
    assert abs(sol.x.sum() + 0.0005 * sol.turnover - 1) < 1e-8


def test_solution_invariants_on_random_problems():
    rng = np.random.default_rng(0)
    solved = 0
    for i in range(300):
        prob = random_problem(rng, int(rng.integers(1, 9)))
        sol = feasible_or_raises(prob)
        if sol is None:
            continue
        solved += 1
        assert sol.kkt_residual < 1e-6
        assert np.all(np.abs(sol.x) <= 1 + 1e-12)
        assert abs(sol.x.sum() + prob.c * sol.turnover - 1) < 1e-8
        assert prob.c * sol.turnover <= prob.cost_cap + 1e-10
        assert sol.turnover == pytest.approx(np.abs(sol.x - prob.x_prev).sum(), abs=1e-15)
    assert solved > 200


@pytest.mark.parametrize("n", [2, 3])
def test_agrees_with_grid_oracle(n):
    rng = np.random.default_rng(n)
    step = 1e-3 if n == 2 else 1e-2
    for _ in range(40 if n == 2 else 15):
        prob = random_problem(rng, n)
        sol = feasible_or_raises(prob)
        if sol is None:
            continue
        ref = brute_force_oracle(prob, step)
        assert sol.objective_value >= ref.objective_value - 1e-12


def test_unconstrained_stationary_point_budget_dropped():
    rng = np.random.default_rng(1)
    for n in (1, 3, 6):
        A = rng.normal(size=(n, n))
        S = 0.01 * (A @ A.T + n * np.eye(n))
        m = rng.normal(size=n) * 0.002
        x_star = np.linalg.solve(S, m) / 2.0
        assert np.all(np.abs(x_star) < 1)
        for c, xp in ((0.0, rng.uniform(-1, 1, n)), (0.0005, x_star + 0.01)):
            sol = solve(OptimizationProblem(m, S, 2.0, xp, c, 0.02, enforce_budget=False))
            assert np.max(np.abs(sol.x - x_star)) < 1e-8
            assert sol.kkt_residual < 1e-8


def test_equality_constrained_closed_form_with_c_zero():
    rng = np.random.default_rng(2)
    n = 4
    A = rng.normal(size=(n, n))
    S = 0.01 * (A @ A.T + n * np.eye(n))
    m = rng.normal(size=n) * 0.002
    ones = np.ones(n)
    Si_m, Si_1 = np.linalg.solve(S, m), np.linalg.solve(S, ones)
    lam = (ones @ Si_m - 2.0) / (ones @ Si_1)
    x_star = (Si_m - lam * Si_1) / 2.0
    assert np.all(np.abs(x_star) < 1)
    sol = solve(OptimizationProblem(m, S, 2.0, rng.uniform(-1, 1, n), 0.0, 0.02))
    assert np.max(np.abs(sol.x - x_star)) < 1e-8


def test_interior_optimum_with_zero_turnover_has_tiny_residual():
    rng = np.random.default_rng(3)
    n = 5
    A = rng.normal(size=(n, n))
    S = 0.01 * (A @ A.T + n * np.eye(n))
    x_star = rng.dirichlet(np.ones(n))
    m = 2.0 * S @ x_star
    prob = OptimizationProblem(m, S, 2.0, x_star, 0.0005, 0.02)
    assert kkt_residual(prob, x_star) < 1e-8
    sol = solve(prob)
    assert np.max(np.abs(sol.x - x_star)) < 1e-8


def test_minimum_risk_point_is_locally_optimal():
    rng = np.random.default_rng(4)
    n = 4
    A = rng.normal(size=(n, n))
    S = 0.01 * (A @ A.T + n * np.eye(n))
    prob = OptimizationProblem(np.zeros(n), S, 2.0, np.zeros(n), 0.0, 0.02)
    sol = solve(prob)
    for _ in range(100):
        v = rng.normal(size=n)
        v -= v.mean()  # stays on the budget plane
        v *= 1e-3 / np.abs(v).max()
        assert prob.objective(sol.x + v) < sol.objective_value


def test_kkt_residual_detects_perturbation():
    prob = instance()
    sol = solve(prob)
    moved = sol.x.copy()
    moved[0] += 0.01
    # second weight re-solved from the budget so the point stays feasible
    rest = 1.0 - moved[0] - prob.c * abs(moved[0])
    moved[1] = rest / (1.0 + prob.c) if rest >= 0 else rest / (1.0 - prob.c)
    assert abs(prob.budget_value(moved) - 1) < 1e-12
    assert kkt_residual(prob, moved) > 1e-4
    bumped = sol.x.copy()
    bumped[0] += 0.01
    with pytest.raises(InfeasiblePointError):
        kkt_residual(prob, bumped)


def test_oracle_one_dimensional_projection():
    for m, S in ((0.003, 0.01), (0.05, 0.01), (-0.05, 0.01)):
        prob = OptimizationProblem(np.array([m]), np.array([[S]]), 2.0, np.zeros(1), 0.0005, 0.02, enforce_budget=False)
        ref = brute_force_oracle(prob, 1e-3)
        assert abs(ref.x[0] - np.clip(m / (2.0 * S), -1, 1)) <= 5e-4 + 1e-12


def test_oracle_refinement_monotone():
    prob = instance()
    values = [brute_force_oracle(prob, step).objective_value for step in (0.02, 0.01, 0.005, 0.0025)]
    assert all(b >= a - 1e-15 for a, b in zip(values, values[1:]))


def test_oracle_refuses_large_n():
    prob = OptimizationProblem(np.zeros(4), np.eye(4), 2.0)
    with pytest.raises(ValidationError):
        brute_force_oracle(prob, 0.1)


def test_risk_aversion_monotone():
    rng = np.random.default_rng(5)
    for _ in range(60):
        p = random_problem(rng, int(rng.integers(2, 6)))
        try:
            a = solve(p)
            b = solve(OptimizationProblem(p.m_bar, p.S, 2 * p.d, p.x_prev, p.c, p.cost_cap))
        except InfeasibleProblemError:
            continue
        assert b.x @ p.S @ b.x <= a.x @ p.S @ a.x + 1e-12


def test_c_zero_independent_of_x_prev():
    rng = np.random.default_rng(6)
    p = random_problem(rng, 5, c=0.0, cap=0.02)
    base = solve(p).x
    for _ in range(10):
        other = OptimizationProblem(p.m_bar, p.S, p.d, rng.uniform(-1, 1, 5), 0.0, 0.02)
        assert np.max(np.abs(solve(other).x - base)) < 1e-10


def test_permutation_invariance():
    rng = np.random.default_rng(7)
    for _ in range(20):
        p = random_problem(rng, 5, c=0.0005, cap=0.02)
        try:
            x = solve(p).x
        except InfeasibleProblemError:
            continue
        perm = rng.permutation(5)
        q = OptimizationProblem(p.m_bar[perm], p.S[np.ix_(perm, perm)], p.d, p.x_prev[perm], p.c, p.cost_cap)
        assert np.max(np.abs(solve(q).x - x[perm])) < 1e-8


def test_infeasibility_reports():
    far = np.array([0.9, 0.9, 0.9])  # budget sum 2.7 needs turnover ~1.7
    with pytest.raises(InfeasibleProblemError) as exc:
        solve(OptimizationProblem(np.zeros(3), np.eye(3), 2.0, far, 0.0005, 0.0001))
    assert exc.value.constraint == "cost_cap"
    with pytest.raises(InfeasibleProblemError) as exc:
        solve(OptimizationProblem(np.zeros(1), np.eye(1), 2.0, np.array([-10.0]), 0.5, 100.0))
    assert exc.value.constraint == "box"


def test_problem_validation():
    with pytest.raises(RegularizationRequiredError):
        OptimizationProblem(np.zeros(2), np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(ValidationError):
        OptimizationProblem(np.zeros(2), np.eye(2), d=0.0)
    with pytest.raises(ValidationError):
        OptimizationProblem(np.zeros(2), np.eye(2), c=-0.1)
    with pytest.raises(ValidationError):
        OptimizationProblem(np.zeros(2), np.eye(3))


def test_solution_dump_json():
    sol = solve(instance())
    dump = json.loads(json.dumps(sol.to_dict("2020-01-02")))
    assert set(dump) == {"date", "x", "objective", "turnover", "kkt_residual", "binding_constraints"}
    assert "budget" in dump["binding_constraints"]


def test_convex_regime_is_certified():
    # an optimum that wants more than the budget makes the relaxed budget bind
    S = np.eye(2) * 0.01
    m = np.array([0.05, 0.05])
    sol = solve(OptimizationProblem(m, S, 2.0, np.zeros(2), 0.0005, 0.02))
    assert sol.budget_multiplier >= 0 and sol.certified_global
