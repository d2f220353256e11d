"""Summary statistics of a daily wealth path (252-day year)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InsufficientDataError

TRADING_DAYS = 252


@dataclass(frozen=True)
class PerformanceReport:
    total_return: float
    average_return: float
    sharpe: float
    volatility: float
    max_drawdown: float
    calmar: float

    def to_dict(self) -> dict:
        return asdict(self)


def daily_returns(wealth) -> np.ndarray:
    w = np.asarray(wealth, dtype=float)
    return w[1:] / w[:-1] - 1.0


def max_drawdown(wealth) -> float:
    """Largest peak-to-trough fall, as a fraction of the peak."""
    w = np.asarray(wealth, dtype=float)
    peak = np.maximum.accumulate(w)
    return float(np.max(1.0 - w / peak))


def performance(wealth, risk_free_annual: float = 0.02) -> PerformanceReport:
    """Sharpe is 0 when the daily returns have no dispersion; Calmar is
    +inf when the path never draws down."""
    w = np.asarray(wealth, dtype=float)
    if len(w) < 2:
        raise InsufficientDataError("metrics need at least two wealth points")
    r = daily_returns(w)
    avg = float(np.mean(r)) * TRADING_DAYS
    vol = float(np.std(r, ddof=1)) * math.sqrt(TRADING_DAYS) if len(r) > 1 else 0.0
    sharpe = (avg - risk_free_annual) / vol if vol > 1e-12 else 0.0
    mdd = max_drawdown(w)
    calmar = avg / mdd if mdd > 0 else math.inf
    return PerformanceReport(
        total_return=float(w[-1] / w[0] - 1.0),
        average_return=avg,
        sharpe=sharpe,
        volatility=vol,
        max_drawdown=mdd,
        calmar=calmar,
    )
