"""
Optimizer
=========

Risk-penalised mean-variance weights with a cost-inclusive budget:

    max  mbar'x - d/2 x'Sx
    s.t. sum(x) + c * sum|x - x_prev| = 1        (budget)
         c * sum|x - x_prev| <= cost_cap          (cost cap)
         -1 <= x <= 1

The absolute values are split into buy/sell legs. Inside one trade-direction
orthant (every coordinate either buys or sells) the legs are linear and the
problem is a strictly convex QP with box bounds, solved here by a primal
active-set method. An outer loop flips the direction of a coordinate sitting
at its previous weight whenever the subgradient KKT condition at that kink is
violated, so buy and sell legs are never both positive.

When the budget multiplier of the final point is non-negative the point also
solves the convex relaxation (budget as ``<=``) and is therefore globally
optimal; ``certified_global`` reports this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InfeasiblePointError,
    InfeasibleProblemError,
    RegularizationRequiredError,
    ValidationError,
)

FEAS_TOL = 1e-6
ACTIVE_TOL = 1e-9


@dataclass(frozen=True)
class OptimizationProblem:
    """Inputs of one solve. ``enforce_budget=False`` drops the budget row
    (used to check the unconstrained first-order condition)."""

    m_bar: np.ndarray
    S: np.ndarray
    d: float = 2.0
    x_prev: np.ndarray | None = None
    c: float = 0.0005
    cost_cap: float = 0.02
    enforce_budget: bool = True

    def __post_init__(self):
        m = np.asarray(self.m_bar, dtype=float).ravel()
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        n = len(m)
        if S.shape != (n, n):
            raise ValidationError(f"S has shape {S.shape}, expected {(n, n)}")
        if not np.allclose(S, S.T, rtol=1e-10, atol=1e-14):
            raise ValidationError("S must be symmetric")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise RegularizationRequiredError(
                "covariance is not positive definite; add a ridge before optimizing"
            ) from None
        xp = np.zeros(n) if self.x_prev is None else np.asarray(self.x_prev, dtype=float).ravel()
        if xp.shape != (n,) or not np.all(np.isfinite(xp)):
            raise ValidationError("x_prev must be a finite vector matching m_bar")
        if not self.d > 0:
            raise ValidationError("risk aversion d must be positive")
        if not 0 <= self.c < 1:
            raise ValidationError("transaction cost rate must lie in [0, 1)")
        if not self.cost_cap >= 0:
            raise ValidationError("cost cap must be non-negative")
        object.__setattr__(self, "m_bar", m)
        object.__setattr__(self, "S", 0.5 * (S + S.T))
        object.__setattr__(self, "x_prev", xp)

    @property
    def n(self) -> int:
        return len(self.m_bar)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.m_bar @ x - 0.5 * self.d * x @ self.S @ x)

    def turnover(self, x) -> float:
        return float(np.abs(np.asarray(x, dtype=float) - self.x_prev).sum())

    def budget_value(self, x) -> float:
        return float(np.sum(x) + self.c * self.turnover(x))

    def violation(self, x) -> tuple[float, str | None]:
        """Largest constraint violation of ``x`` and the constraint's name."""
        x = np.asarray(x, dtype=float)
        worst, name = 0.0, None
        checks = [("box", float(np.max(np.abs(x)) - 1.0) if len(x) else 0.0)]
        checks.append(("cost_cap", self.c * self.turnover(x) - self.cost_cap))
        if self.enforce_budget:
            checks.append(("budget", abs(self.budget_value(x) - 1.0)))
        for nm, v in checks:
            if v > worst:
                worst, name = v, nm
        return worst, name


@dataclass(frozen=True)
class OptimalWeights:
    x: np.ndarray
    objective_value: float
    kkt_residual: float
    turnover: float
    binding_constraints: tuple[str, ...] = ()
    budget_multiplier: float = math.nan
    certified_global: bool = False

    def to_dict(self, date=None) -> dict:
        out = {
            "x": np.asarray(self.x).tolist(),
            "objective": self.objective_value,
            "turnover": self.turnover,
            "kkt_residual": self.kkt_residual,
            "binding_constraints": list(self.binding_constraints),
        }
        if date is not None:
            out = {"date": str(date), **out}
        return out


# ---------------------------------------------------------------------------
# primal active-set QP:  min 1/2 x'Hx + g'x  s.t.  E x = e,  A x <= b
# ---------------------------------------------------------------------------


def _independent(rows: np.ndarray, new: np.ndarray) -> bool:
    if rows.shape[0] == 0:
        return bool(np.any(np.abs(new) > 0))
    stacked = np.vstack([rows, new])
    return np.linalg.matrix_rank(stacked, tol=1e-10) > np.linalg.matrix_rank(rows, tol=1e-10)


def _active_set_qp(H, g, E, e, A, b, x0, max_iter=None):
    """Returns (x, equality multipliers, inequality multipliers) for a feasible start x0."""
    n = len(x0)
    scale = max(float(np.max(np.abs(H))), float(np.max(np.abs(g))) if len(g) else 0.0, 1e-300)
    Hs, gs = H / scale, g / scale
    mE = E.shape[0]
    x = x0.astype(float).copy()
    tol = 1e-13

    working: list[int] = []
    basis = E.copy()
    slack = b - A @ x
    for i in np.argsort(slack, kind="stable"):
        if slack[i] > 1e-12 * (1.0 + abs(b[i])):
            break
        if basis.shape[0] >= n:
            break
        if _independent(basis, A[i]):
            working.append(int(i))
            basis = np.vstack([basis, A[i]])

    if max_iter is None:
        max_iter = 50 * (n + A.shape[0] + 5)
    for _ in range(max_iter):
        Aw = np.vstack([E, A[working]]) if working else E
        k = Aw.shape[0]
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = Hs
        kkt[:n, n:] = Aw.T
        kkt[n:, :n] = Aw
        rhs = np.concatenate([-(Hs @ x + gs), np.zeros(k)])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        p, mu = sol[:n], sol[n:]

        if np.max(np.abs(p), initial=0.0) <= tol * (1.0 + np.max(np.abs(x), initial=0.0)):
            mu_in = mu[mE:]
            if len(mu_in) == 0 or mu_in.min() >= -1e-13:
                lam_A = np.zeros(A.shape[0])
                lam_A[working] = mu_in
                return x, mu[:mE] * scale, lam_A * scale
            working.pop(int(np.argmin(mu_in)))
            continue

        Ap = A @ p
        alpha, blocking = 1.0, None
        for i in range(A.shape[0]):
            if i in working or Ap[i] <= 1e-15:
                continue
            step = max((b[i] - A[i] @ x) / Ap[i], 0.0)
            if step < alpha:
                alpha, blocking = step, i
        x = x + alpha * p
        if blocking is not None:
            working.append(blocking)
    raise RuntimeError("active-set QP did not converge")


# ---------------------------------------------------------------------------
# orthant subproblem
# ---------------------------------------------------------------------------


@dataclass
class _OrthantSolution:
    x: np.ndarray
    sigma: np.ndarray
    lam: float  # budget multiplier (min form), 0 when absent
    gamma: float  # cost-cap multiplier, 0 when inactive
    kink_mult: np.ndarray  # multiplier of the direction bound at x_prev, per coordinate
    value: float  # min-form objective 1/2 d x'Sx - mbar'x


def _orthant_bounds(prob: OptimizationProblem, sigma: np.ndarray):
    xp = prob.x_prev
    lo = -np.ones(prob.n)
    hi = np.ones(prob.n)
    if prob.c > 0:
        up = sigma > 0
        lo = np.where(up, np.maximum(-1.0, xp), lo)
        hi = np.where(up, hi, np.minimum(1.0, xp))
    return lo, hi


def _orthant_start(prob: OptimizationProblem, sigma: np.ndarray):
    """Minimum-turnover feasible point of the orthant, or (None, reason)."""
    lo, hi = _orthant_bounds(prob, sigma)
    if np.any(lo > hi):
        return None, "box"
    x = np.clip(prob.x_prev, lo, hi)
    c = prob.c
    if prob.enforce_budget:
        rate = 1.0 + c * sigma if c > 0 else np.ones(prob.n)
        gap = 1.0 - prob.budget_value(x)
        # raise coordinates when short of budget, lower them when over
        room = (hi - x) if gap > 0 else (x - lo)
        for i in range(prob.n):
            if abs(gap) <= 1e-15:
                break
            if room[i] <= 0:
                continue
            move = min(room[i], abs(gap) / rate[i])
            x[i] += move if gap > 0 else -move
            gap = 1.0 - prob.budget_value(x)
        if abs(gap) > 1e-12:
            return None, "box"
    if c * prob.turnover(x) > prob.cost_cap + 1e-12:
        return None, "cost_cap"
    return x, None


def _solve_orthant(prob: OptimizationProblem, sigma: np.ndarray, x0: np.ndarray) -> _OrthantSolution:
    n, c, xp = prob.n, prob.c, prob.x_prev
    H = prob.d * prob.S
    g = -prob.m_bar
    lo, hi = _orthant_bounds(prob, sigma)

    if prob.enforce_budget:
        a = 1.0 + c * sigma if c > 0 else np.ones(n)
        E = a[None, :]
        e = np.array([1.0 + (c * sigma @ xp if c > 0 else 0.0)])
    else:
        E = np.zeros((0, n))
        e = np.zeros(0)

    rows, rhs = [], []
    has_cap = c > 0
    if has_cap:
        rows.append(c * sigma)
        rhs.append(prob.cost_cap + c * sigma @ xp)
    eye = np.eye(n)
    rows.extend(eye)
    rhs.extend(hi)
    rows.extend(-eye)
    rhs.extend(-lo)
    A = np.array(rows).reshape(-1, n)
    b = np.array(rhs, dtype=float)

    x, lam_E, lam_A = _active_set_qp(H, g, E, e, A, b, x0)
    off = 1 if has_cap else 0
    mu_hi = lam_A[off : off + n]
    mu_lo = lam_A[off + n : off + 2 * n]
    kink = np.zeros(n)
    if c > 0:
        up = sigma > 0
        # direction bound: x >= x_prev when buying, x <= x_prev when selling
        kink = np.where(up & (lo == xp), mu_lo, 0.0) + np.where(~up & (hi == xp), mu_hi, 0.0)
    return _OrthantSolution(
        x=x,
        sigma=sigma.copy(),
        lam=float(lam_E[0]) if len(lam_E) else 0.0,
        gamma=float(lam_A[0]) if has_cap else 0.0,
        kink_mult=kink,
        value=-prob.objective(x),
    )


def _forced_sigma(prob: OptimizationProblem, sigma: np.ndarray) -> np.ndarray:
    sigma = sigma.copy()
    sigma[prob.x_prev > 1.0] = -1.0
    sigma[prob.x_prev < -1.0] = 1.0
    return sigma


def _min_turnover_sigma(prob: OptimizationProblem) -> np.ndarray:
    x0 = np.clip(prob.x_prev, -1.0, 1.0)
    gap = 1.0 - prob.budget_value(x0) if prob.enforce_budget else 0.0
    sigma = np.full(prob.n, 1.0 if gap >= 0 else -1.0)
    return _forced_sigma(prob, sigma)


def _local_search(prob: OptimizationProblem, sigma: np.ndarray) -> _OrthantSolution | None:
    x0, _ = _orthant_start(prob, sigma)
    if x0 is None:
        return None
    sol = _solve_orthant(prob, sigma, x0)
    if prob.c == 0:
        return sol
    for _ in range(4 * prob.n + 20):
        kappa = 2.0 * prob.c * max(sol.lam + sol.gamma, 0.0)
        excess = sol.kink_mult - kappa
        i = int(np.argmax(excess))
        if excess[i] <= 1e-12 * (1.0 + abs(sol.kink_mult[i])):
            return sol
        flipped = sol.sigma.copy()
        flipped[i] = -flipped[i]
        cand = _solve_orthant(prob, flipped, sol.x)
        if cand.value >= sol.value - 1e-18:
            # no progress across the kink; keep the current point
            return sol
        sol = cand
    return sol


def solve(problem: OptimizationProblem) -> OptimalWeights:
    """Optimal weights for ``problem``; raises :class:`InfeasibleProblemError`
    when no point satisfies the constraints."""
    prob = problem
    if prob.n == 0:
        raise ValidationError("empty problem")

    feas_sigma = _min_turnover_sigma(prob)
    x_feas, reason = _orthant_start(prob, feas_sigma)
    if x_feas is None:
        raise InfeasibleProblemError(
            reason,
            "budget unreachable within the weight bounds"
            if reason == "box"
            else f"minimum transaction cost exceeds cap {prob.cost_cap}",
        )

    starts = [feas_sigma]
    if prob.c > 0:
        # warm start from the direction of the cost-free optimum
        free = OptimizationProblem(
            prob.m_bar, prob.S, prob.d, prob.x_prev, 0.0, prob.cost_cap, prob.enforce_budget
        )
        x_free = _local_search(free, np.ones(prob.n)).x
        starts.insert(0, _forced_sigma(prob, np.where(x_free >= prob.x_prev, 1.0, -1.0)))
        starts.append(_forced_sigma(prob, -feas_sigma))

    best = None
    seen = set()
    for sigma in starts:
        key = tuple(sigma)
        if key in seen:
            continue
        seen.add(key)
        sol = _local_search(prob, sigma)
        if sol is not None and (best is None or sol.value < best.value - 1e-15):
            best = sol
    assert best is not None

    x = best.x
    worst, name = prob.violation(x)
    if worst > FEAS_TOL:
        raise InfeasibleProblemError(name or "unknown", f"solver point violates by {worst:.3g}")
    return OptimalWeights(
        x=x,
        objective_value=prob.objective(x),
        kkt_residual=kkt_residual(prob, x, hint=(best.lam, best.gamma)),
        turnover=prob.turnover(x),
        binding_constraints=binding_constraints(prob, x),
        budget_multiplier=best.lam if prob.enforce_budget else math.nan,
        certified_global=(not prob.enforce_budget) or prob.c == 0 or best.lam >= -1e-12,
    )


def binding_constraints(prob: OptimizationProblem, x, tol: float = 1e-9) -> tuple[str, ...]:
    x = np.asarray(x, dtype=float)
    out = []
    if prob.enforce_budget:
        out.append("budget")
    if prob.c > 0 and prob.c * prob.turnover(x) >= prob.cost_cap - tol:
        out.append("cost_cap")
    out.extend(f"upper[{i}]" for i in np.flatnonzero(x >= 1 - tol))
    out.extend(f"lower[{i}]" for i in np.flatnonzero(x <= -1 + tol))
    return tuple(out)


# ---------------------------------------------------------------------------
# KKT residual
# ---------------------------------------------------------------------------


def kkt_residual(problem: OptimizationProblem, x, hint: tuple[float, float] | None = None) -> float:
    """Max-norm KKT violation of a feasible ``x``.

    Multipliers of the budget and cost cap are recovered by least squares
    from the coordinates that carry no bound or kink of their own; every
    other coordinate then has a closed-form best multiplier, and its sign
    or subgradient violation is what remains.
    """
    prob = problem
    x = np.asarray(x, dtype=float)
    worst, name = prob.violation(x)
    if worst > FEAS_TOL:
        raise InfeasiblePointError(f"point violates {name} by {worst:.3g}")
    c = prob.c
    G = prob.d * prob.S @ x - prob.m_bar
    delta = x - prob.x_prev
    kink = (np.abs(delta) <= ACTIVE_TOL) if c > 0 else np.zeros(prob.n, dtype=bool)
    sigma = np.where(kink, 0.0, np.sign(delta)) if c > 0 else np.zeros(prob.n)
    upper = x >= 1.0 - ACTIVE_TOL
    lower = x <= -1.0 + ACTIVE_TOL
    cap_active = c > 0 and c * prob.turnover(x) >= prob.cost_cap - ACTIVE_TOL
    budget = prob.enforce_budget
    a = 1.0 + c * sigma

    def violations(lam: float, gam: float) -> float:
        if gam < 0:
            return math.inf
        core = G + (lam * a if budget else 0.0) + gam * c * sigma
        kappa = c * abs((lam if budget else 0.0) + gam)
        v = np.abs(core)
        v = np.where(upper & ~kink, np.maximum(core, 0.0), v)
        v = np.where(lower & ~kink, np.maximum(-core, 0.0), v)
        v = np.where(kink & ~upper & ~lower, np.maximum(np.abs(core) - kappa, 0.0), v)
        v = np.where(kink & upper, np.maximum(core - kappa, 0.0), v)
        v = np.where(kink & lower, np.maximum(-core - kappa, 0.0), v)
        return float(np.max(v, initial=0.0))

    free = ~(kink | upper | lower)
    cols = []
    if budget:
        cols.append(a)
    if cap_active:
        cols.append(c * sigma)
    candidates: list[tuple[float, float]] = [(0.0, 0.0)]
    if cols and free.any():
        J = np.column_stack(cols)[free]
        sol = np.linalg.lstsq(J, -G[free], rcond=None)[0]
        lam = float(sol[0]) if budget else 0.0
        gam = float(sol[-1]) if cap_active else 0.0
        candidates.append((lam, max(gam, 0.0)))
    if hint is not None:
        candidates.append((hint[0] if budget else 0.0, hint[1] if cap_active else 0.0))
    if budget and (not free.any() or np.linalg.matrix_rank(np.column_stack(cols)[free]) < len(cols) if free.any() else True):
        # under-determined: try every multiplier value that zeroes one coordinate
        for i in range(prob.n):
            candidates.append((float(-G[i] / a[i]), 0.0))
    return min(violations(lam, gam) for lam, gam in candidates)


# ---------------------------------------------------------------------------
# brute-force oracle (tests only)
# ---------------------------------------------------------------------------


def _solve_last(prob: OptimizationProblem, head: np.ndarray) -> np.ndarray:
    """Value of the last weight that meets the budget given the others (rows of head)."""
    c, xp = prob.c, prob.x_prev
    rest = 1.0 - head.sum(axis=1) - c * np.abs(head - xp[:-1]).sum(axis=1)
    # z + c|z - p| = rest is strictly increasing in z for c < 1
    p = xp[-1]
    return np.where(rest >= p, (rest + c * p) / (1.0 + c), (rest - c * p) / (1.0 - c))


def brute_force_oracle(problem: OptimizationProblem, grid_step: float = 1e-3) -> OptimalWeights:
    """Exhaustive grid search over the feasible set (N <= 3).

    With the budget enforced the last weight is solved exactly from the
    budget equation, so the grid covers the first N-1 weights only.
    """
    prob = problem
    if prob.n > 3:
        raise ValidationError("brute-force oracle refuses N > 3")
    steps = int(round(2.0 / grid_step))
    if not math.isclose(steps * grid_step, 2.0, rel_tol=1e-9):
        raise ValidationError("grid_step must divide 2")
    axis = np.linspace(-1.0, 1.0, steps + 1)
    n_free = prob.n - 1 if prob.enforce_budget else prob.n
    if (steps + 1) ** n_free > 5e7:
        raise ValidationError("grid too large")
    if n_free > 0:
        grids = np.meshgrid(*([axis] * n_free), indexing="ij")
        head = np.column_stack([gr.ravel() for gr in grids])
    else:
        head = np.zeros((1, 0))
    if prob.enforce_budget:
        pts = np.column_stack([head, _solve_last(prob, head)])
    else:
        pts = head
    ok = np.all(np.abs(pts) <= 1.0 + 1e-12, axis=1)
    ok &= prob.c * np.abs(pts - prob.x_prev).sum(axis=1) <= prob.cost_cap + 1e-12
    if not ok.any():
        raise InfeasibleProblemError("grid", "no grid point is feasible")
    pts = pts[ok]
    vals = pts @ prob.m_bar - 0.5 * prob.d * np.einsum("ij,jk,ik->i", pts, prob.S, pts)
    j = int(np.argmax(vals))
    x = pts[j]
    return OptimalWeights(
        x=x,
        objective_value=float(vals[j]),
        kkt_residual=math.nan,
        turnover=prob.turnover(x),
        binding_constraints=binding_constraints(prob, x),
    )
