"""
Cointegration
=============

Engle-Granger two-step test on return series and Ornstein-Uhlenbeck
calibration of the cumulative residual spread.

    R1_n = a + b R2_n + e_n              (OLS)
    X_n  = e_1 + ... + e_n               (cumulative residual)
    dX   = k (m - X) dt + s dW           (OU fit of X)

Stationarity of X is decided by an ADF regression with a constant and no
trend. OU parameters come from the exact AR(1) discretisation of the SDE.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    DegenerateRegressionError,
    DegenerateSeriesError,
    InsufficientDataError,
    NonMeanRevertingError,
    ValidationError,
)
from .marketdata import CandidatePair, ReturnPanel

DEFAULT_WINDOW = 60

# Asymptotic left-tail critical values, constant / no trend.
ADF_CRITICAL_VALUES = {0.01: -3.43, 0.05: -2.86, 0.10: -2.57}
# Residual-based (Engle-Granger) values for a two-variable system, MacKinnon (2010).
EG_CRITICAL_VALUES = {0.01: -3.90, 0.05: -3.34, 0.10: -3.04}
CRITICAL_TABLES = {"adf": ADF_CRITICAL_VALUES, "eg": EG_CRITICAL_VALUES}


@dataclass(frozen=True)
class OlsFit:
    a: float
    b: float
    residuals: np.ndarray


@dataclass(frozen=True)
class SpreadSeries:
    values: np.ndarray
    hedge_ratio: float = math.nan

    @property
    def window(self) -> int:
        return len(self.values)

    @property
    def last(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class AdfResult:
    statistic: float
    lag_order: int
    alpha: float
    critical_value: float
    stationary: bool
    nobs: int
    table: str = "adf"

    @property
    def critical_value_5pct(self) -> float:
        return CRITICAL_TABLES[self.table][0.05]


@dataclass(frozen=True)
class OuParams:
    """Calibrated OU spread.

    k is per day, s per sqrt(day); ``s_eq`` is the equilibrium standard
    deviation s / sqrt(2k) and ``b`` the OLS hedge ratio of the pair.
    """

    k: float
    m: float
    s: float
    b: float = math.nan

    def __post_init__(self):
        if not (self.k > 0 and math.isfinite(self.k)):
            raise ValidationError(f"OU speed k must be positive, got {self.k}")
        if not (self.s >= 0 and math.isfinite(self.s)):
            raise ValidationError(f"OU diffusion s must be non-negative, got {self.s}")

    @property
    def s_eq(self) -> float:
        return self.s / math.sqrt(2.0 * self.k)

    @property
    def reversion_time(self) -> float:
        return 1.0 / self.k


class EngleGrangerResult(NamedTuple):
    ols: OlsFit
    spread: SpreadSeries
    adf: AdfResult

    @property
    def cointegrated(self) -> bool:
        return self.adf.stationary


def _is_constant(x: np.ndarray) -> bool:
    return np.ptp(x) <= 1e-12 * max(1.0, float(np.max(np.abs(x))))


def ols_regress(y, x) -> OlsFit:
    """Least-squares fit of ``y = a + b x + e``."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape or y.ndim != 1:
        raise ValidationError("y and x must be 1-d series of equal length")
    if len(y) < 3:
        raise InsufficientDataError("OLS needs at least 3 observations")
    if _is_constant(x):
        raise DegenerateRegressionError("regressor has zero variance")
    design = np.column_stack([np.ones_like(x), x])
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - a - b * x
    resid.setflags(write=False)
    return OlsFit(a=float(a), b=float(b), residuals=resid)


def cumulative_residuals(fit: OlsFit) -> SpreadSeries:
    if len(fit.residuals) == 0:
        raise InsufficientDataError("no residuals")
    x = np.cumsum(fit.residuals)
    x.setflags(write=False)
    return SpreadSeries(values=x, hedge_ratio=fit.b)


def adf_test(x, lag_order: int = 1, alpha: float = 0.05, critical: str = "adf") -> AdfResult:
    """Augmented Dickey-Fuller test with constant, fixed lag order.

    Regresses dX_n on (1, X_{n-1}, dX_{n-1}, ..., dX_{n-p}); the statistic is
    the t-ratio of the X_{n-1} coefficient. ``critical`` selects the plain
    ADF table or the residual-based Engle-Granger table.
    """
    values = x.values if isinstance(x, SpreadSeries) else x
    values = np.asarray(values, dtype=float)
    p = int(lag_order)
    if p < 0:
        raise ValidationError("lag_order must be non-negative")
    if len(values) < p + 10:
        raise InsufficientDataError(f"ADF needs at least {p + 10} points, got {len(values)}")
    try:
        table = CRITICAL_TABLES[critical]
        crit = table[alpha]
    except KeyError:
        raise ValidationError(f"no {critical!r} critical value for alpha={alpha}") from None
    if _is_constant(values):
        raise DegenerateSeriesError("ADF on a constant series")

    dx = np.diff(values)
    y = dx[p:]
    cols = [np.ones_like(y), values[p:-1]]
    for i in range(1, p + 1):
        cols.append(dx[p - i : len(dx) - i])
    design = np.column_stack(cols)
    nobs, nreg = design.shape
    q, r = np.linalg.qr(design)
    if np.min(np.abs(np.diag(r))) <= 1e-12 * np.max(np.abs(np.diag(r))):
        raise DegenerateSeriesError("ADF design matrix is rank deficient")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - design @ beta
    sigma2 = resid @ resid / (nobs - nreg)
    r_inv = np.linalg.solve(r, np.eye(nreg))
    se = math.sqrt(sigma2 * (r_inv[1] @ r_inv[1]))
    if se == 0.0:
        raise DegenerateSeriesError("zero residual variance in ADF regression")
    stat = float(beta[1] / se)
    return AdfResult(
        statistic=stat,
        lag_order=p,
        alpha=alpha,
        critical_value=crit,
        stationary=stat < crit,
        nobs=nobs,
        table=critical,
    )


def engle_granger(
    r1,
    r2,
    window: int = DEFAULT_WINDOW,
    lag_order: int = 1,
    alpha: float = 0.05,
    critical: str = "adf",
) -> EngleGrangerResult:
    """Two-step test on the trailing ``window`` observations of ``r1`` on ``r2``."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    if len(r1) != len(r2):
        raise ValidationError("return series lengths differ")
    if len(r1) < window:
        raise InsufficientDataError(f"need {window} returns, got {len(r1)}")
    fit = ols_regress(r1[-window:], r2[-window:])
    spread = cumulative_residuals(fit)
    return EngleGrangerResult(fit, spread, adf_test(spread, lag_order, alpha, critical))


def fit_ou(x, dt: float = 1.0, hedge_ratio: float | None = None) -> OuParams:
    """Map an AR(1) fit of the spread onto OU parameters.

    X_{n+1} = c0 + c1 X_n + eps gives k = -ln(c1)/dt, m = c0/(1-c1) and
    s = std(eps) * sqrt(2k / (1 - c1^2)).
    """
    if isinstance(x, SpreadSeries):
        if hedge_ratio is None:
            hedge_ratio = x.hedge_ratio
        x = x.values
    x = np.asarray(x, dtype=float)
    if len(x) < 10:
        raise InsufficientDataError("OU fit needs at least 10 points")
    if dt <= 0:
        raise ValidationError("dt must be positive")
    if _is_constant(x):
        raise DegenerateSeriesError("OU fit on a constant series")
    lagged, lead = x[:-1], x[1:]
    if _is_constant(lagged):
        raise DegenerateSeriesError("OU fit: lagged series is constant")
    design = np.column_stack([np.ones_like(lagged), lagged])
    (c0, c1), *_ = np.linalg.lstsq(design, lead, rcond=None)
    if not 0.0 < c1 < 1.0:
        raise NonMeanRevertingError(f"AR(1) coefficient {c1:.6g} outside (0, 1)")
    eps = lead - c0 - c1 * lagged
    k = -math.log(c1) / dt
    s = float(np.std(eps)) * math.sqrt(2.0 * k / (1.0 - c1 * c1))
    return OuParams(
        k=k,
        m=float(c0 / (1.0 - c1)),
        s=s,
        b=math.nan if hedge_ratio is None else float(hedge_ratio),
    )


@dataclass(frozen=True)
class PairScanResult:
    """Outcome of testing one candidate pair on one window."""

    pair: CandidatePair
    eg: EngleGrangerResult | None = None
    ou: OuParams | None = None
    error: str | None = None

    @property
    def sector(self) -> str:
        return self.pair.sector

    @property
    def stationary(self) -> bool:
        return self.eg is not None and self.eg.cointegrated

    def to_dict(self) -> dict:
        nan = float("nan")
        return {
            "sector": self.pair.sector,
            "ticker_a": self.pair.ticker_a,
            "ticker_b": self.pair.ticker_b,
            "b_hat": self.eg.ols.b if self.eg else nan,
            "adf_stat": self.eg.adf.statistic if self.eg else nan,
            "stationary": self.stationary,
            "k": self.ou.k if self.ou else nan,
            "m": self.ou.m if self.ou else nan,
            "s_eq": self.ou.s_eq if self.ou else nan,
            "reversion_days": self.ou.reversion_time if self.ou else nan,
            "error": self.error,
        }


def evaluate_pair(
    returns: ReturnPanel,
    pair: CandidatePair,
    window: int = DEFAULT_WINDOW,
    lag_order: int = 1,
    alpha: float = 0.05,
    critical: str = "adf",
    dt: float = 1.0,
) -> PairScanResult:
    """Engle-Granger plus OU fit on the trailing window of ``returns``.

    Degenerate or non-mean-reverting inputs are recorded in ``error`` rather
    than raised, so a scan never aborts on one bad pair.
    """
    r1 = returns.column(pair.ticker_a)
    r2 = returns.column(pair.ticker_b)
    try:
        eg = engle_granger(r1, r2, window, lag_order, alpha, critical)
    except (DegenerateRegressionError, DegenerateSeriesError) as exc:
        return PairScanResult(pair, error=f"{type(exc).__name__}: {exc}")
    try:
        ou = fit_ou(eg.spread, dt)
    except (DegenerateSeriesError, NonMeanRevertingError) as exc:
        return PairScanResult(pair, eg=eg, error=f"{type(exc).__name__}: {exc}")
    return PairScanResult(pair, eg=eg, ou=ou)


def scan_pairs(
    returns: ReturnPanel,
    candidates: Sequence[CandidatePair],
    window: int = DEFAULT_WINDOW,
    lag_order: int = 1,
    alpha: float = 0.05,
    critical: str = "adf",
    dt: float = 1.0,
    workers: int = 1,
) -> list[PairScanResult]:
    """Test every candidate; results come back in candidate order."""
    if len(returns) < window:
        raise InsufficientDataError(f"need {window} returns for the scan, got {len(returns)}")

    def one(pair):
        return evaluate_pair(returns, pair, window, lag_order, alpha, critical, dt)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, candidates))
    return [one(p) for p in candidates]


def select_pairs(
    candidates: Iterable[PairScanResult],
    min_reversion_days: float = 5.0,
    freq: float = 27.0,
) -> dict[str, PairScanResult]:
    """Fastest-reverting qualifying pair per sector.

    A pair qualifies when it is stationary, has a positive diffusion and
    ``min_reversion_days <= 1/k < freq``. Sectors with no qualifier are absent.
    """
    best: dict[str, PairScanResult] = {}
    for res in candidates:
        if not res.stationary or res.ou is None or res.ou.s <= 0:
            continue
        t = res.ou.reversion_time
        if not (min_reversion_days <= t < freq):
            continue
        cur = best.get(res.sector)
        # ties keep the earlier candidate for a deterministic merge
        if cur is None or res.ou.k > cur.ou.k:
            best[res.sector] = res
    return best


__all__ = [
    "ADF_CRITICAL_VALUES",
    "EG_CRITICAL_VALUES",
    "AdfResult",
    "EngleGrangerResult",
    "OlsFit",
    "OuParams",
    "PairScanResult",
    "SpreadSeries",
    "adf_test",
    "cumulative_residuals",
    "evaluate_pair",
    "engle_granger",
    "fit_ou",
    "ols_regress",
    "scan_pairs",
    "select_pairs",
]
