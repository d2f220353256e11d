"""
Black-Litterman blending of a historical prior with pair-trade views.

Each open pair contributes one view row: +1 on its first leg, -b on its
second, expected return l*k*(m - X_t)*dt and variance s_eq^2*dt. The
posterior uses the precision form

    M    = ((tau S)^-1 + P' W^-1 P)^-1
    mbar = M ((tau S)^-1 mhat + P' W^-1 q)

evaluated through the equivalent K x K update so that neither S nor M is
inverted explicitly.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .cointegration import OuParams
from .errors import (
    ConflictingViewError,
    InsufficientDataError,
    RegularizationRequiredError,
    ValidationError,
)
from .marketdata import ReturnPanel

DEFAULT_RIDGE_FLOOR = 1e-10


@dataclass(frozen=True)
class PriorEstimate:
    m_hat: np.ndarray
    S: np.ndarray
    T: int
    ridge: float = 0.0


@dataclass(frozen=True)
class ViewSet:
    P: np.ndarray
    q: np.ndarray
    w_diag: np.ndarray
    l: float = 1.0
    dt: float = 1.0

    @property
    def K(self) -> int:
        return self.P.shape[0]

    @property
    def W(self) -> np.ndarray:
        return np.diag(self.w_diag)


@dataclass(frozen=True)
class Posterior:
    m_bar: np.ndarray
    M: np.ndarray


class ActiveView(NamedTuple):
    """One open pair: its OU fit, current spread value and the two asset columns."""

    ou: OuParams
    x_t: float
    long_col: int
    short_col: int


def estimate_prior(returns, ridge_floor: float = DEFAULT_RIDGE_FLOOR) -> PriorEstimate:
    """Sample mean and covariance (divisor T-1) of a T x N return window.

    When the smallest eigenvalue of the covariance falls below
    ``ridge_floor`` a ridge lifting it to the floor is added and recorded.
    """
    r = returns.returns if isinstance(returns, ReturnPanel) else returns
    r = np.asarray(r, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    T, n = r.shape
    if T < 2:
        raise InsufficientDataError(f"prior needs at least 2 observations, got {T}")
    m_hat = r.mean(axis=0)
    S = np.atleast_2d(np.cov(r, rowvar=False, ddof=1))
    S = 0.5 * (S + S.T)
    lam_min = float(np.linalg.eigvalsh(S)[0])
    ridge = 0.0
    if lam_min < ridge_floor:
        ridge = ridge_floor - lam_min
        S = S + ridge * np.eye(n)
    return PriorEstimate(m_hat=m_hat, S=S, T=T, ridge=ridge)


def build_views(
    active: Sequence[ActiveView],
    n_assets: int,
    l: float = 1.0,
    dt: float = 1.0,
) -> ViewSet:
    P = np.zeros((len(active), n_assets))
    q = np.zeros(len(active))
    w = np.zeros(len(active))
    used: set[int] = set()
    for i, v in enumerate(active):
        cols = (v.long_col, v.short_col)
        if v.long_col == v.short_col:
            raise ValidationError(f"view {i} uses column {v.long_col} for both legs")
        for c in cols:
            if not 0 <= c < n_assets:
                raise ValidationError(f"view {i} column {c} out of range")
            if c in used:
                raise ConflictingViewError(f"column {c} appears in more than one view")
            used.add(c)
        if not np.isfinite(v.ou.b):
            raise ValidationError(f"view {i} has no hedge ratio")
        P[i, v.long_col] = 1.0
        P[i, v.short_col] = -v.ou.b
        q[i] = l * v.ou.k * (v.ou.m - v.x_t) * dt
        w[i] = v.ou.s_eq**2 * dt
        if not w[i] > 0:
            raise ValidationError(f"view {i} has zero variance")
    return ViewSet(P=P, q=q, w_diag=w, l=l, dt=dt)


def posterior(prior: PriorEstimate, views: ViewSet, tau: float = 1.0) -> Posterior:
    """Blend the prior with the views.

    ``tau`` scales the prior covariance; tau = 1/T gives the sampling
    distribution of the mean.
    """
    if tau <= 0:
        raise ValidationError("tau must be positive")
    S = tau * np.asarray(prior.S, dtype=float)
    m_hat = np.asarray(prior.m_hat, dtype=float)
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise RegularizationRequiredError(
            "prior covariance is not positive definite; estimate it with a ridge"
        ) from None
    if views.K == 0:
        return Posterior(m_bar=m_hat.copy(), M=S.copy())
    if views.P.shape[1] != len(m_hat):
        raise ValidationError("view matrix width does not match the number of assets")
    if np.any(views.w_diag <= 0):
        raise ValidationError("view variances must be positive")

    G = S @ views.P.T
    A = views.P @ G + np.diag(views.w_diag)
    L = np.linalg.cholesky(A)
    # A^-1 via two triangular solves against the stacked right-hand sides
    rhs = np.column_stack([views.q - views.P @ m_hat, G.T])
    sol = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    m_bar = m_hat + G @ sol[:, 0]
    M = S - G @ sol[:, 1:]
    M = 0.5 * (M + M.T)
    return Posterior(m_bar=m_bar, M=M)


def debug_dump(date: dt.date | str, views: ViewSet, prior: PriorEstimate, post: Posterior) -> dict:
    return {
        "date": str(date),
        "P": views.P.tolist(),
        "q": views.q.tolist(),
        "W_diag": views.w_diag.tolist(),
        "m_hat": np.asarray(prior.m_hat).tolist(),
        "m_bar": np.asarray(post.m_bar).tolist(),
    }
