"""
Seeded synthetic market with planted cointegrated pairs.

Each sector has five stocks driven by a market factor, a sector factor and
idiosyncratic noise. In every sector the first two stocks are tied together:
r_a = b * r_b + dX with X an exactly discretised OU process, so the
cumulated regression residual of (a, b) is mean reverting while every other
pair's is a random walk. An ``INDEX`` series tracks the market factor.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .marketdata import CandidatePair, PricePanel, UniverseSpec, make_universe

INDEX_TICKER = "INDEX"


@dataclass(frozen=True)
class SyntheticProfile:
    sectors: tuple[str, ...] = ("TECH", "ENERGY", "HEALTH")
    per_sector: int = 5
    n_days: int = 760
    start: dt.date = dt.date(2015, 1, 2)
    market_drift: float = 0.0003
    market_vol: float = 0.01
    sector_vol: float = 0.006
    idio_vol: float = 0.012
    ou_k: float = 0.125
    ou_s: float = 0.01
    hedge_range: tuple[float, float] = (0.8, 1.2)


def business_days(start: dt.date, n: int) -> list[dt.date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def ou_path(rng: np.random.Generator, n: int, k: float, s: float, x0: float = 0.0) -> np.ndarray:
    """Exact OU discretisation with unit time step and zero mean."""
    phi = np.exp(-k)
    sd = s * np.sqrt((1.0 - phi * phi) / (2.0 * k))
    x = np.empty(n)
    x[0] = x0
    z = rng.standard_normal(n - 1)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + sd * z[i - 1]
    return x


def generate(seed: int, profile: SyntheticProfile = SyntheticProfile()):
    """Returns (panel, universe, planted) where planted maps sector to its pair."""
    p = profile
    rng = np.random.default_rng(seed)
    n_ret = p.n_days - 1
    market = p.market_drift + p.market_vol * rng.standard_normal(n_ret)
    members: dict[str, list[str]] = {}
    cols: list[np.ndarray] = []
    planted: dict[str, CandidatePair] = {}
    for sector in p.sectors:
        tag = sector[:3].upper()
        names = [f"{tag}{i + 1}" for i in range(p.per_sector)]
        members[sector] = names
        factor = p.sector_vol * rng.standard_normal(n_ret)
        betas = rng.uniform(0.8, 1.2, p.per_sector)
        r = betas * (market + factor)[:, None] + p.idio_vol * rng.standard_normal((n_ret, p.per_sector))
        b = rng.uniform(*p.hedge_range)
        x = ou_path(rng, p.n_days, p.ou_k, p.ou_s)
        r[:, 0] = b * r[:, 1] + np.diff(x)
        cols.append(r)
        planted[sector] = CandidatePair(sector, names[0], names[1])
    rets = np.column_stack(cols + [market[:, None]])
    p0 = rng.uniform(20.0, 200.0, rets.shape[1])
    prices = p0 * np.vstack([np.ones(rets.shape[1]), np.cumprod(1.0 + rets, axis=0)])
    universe = make_universe(members)
    tickers = universe.tickers + (INDEX_TICKER,)
    sector_of = dict(universe.sector_of)
    sector_of[INDEX_TICKER] = "index"
    panel = PricePanel(
        dates=tuple(business_days(p.start, p.n_days)),
        tickers=tickers,
        prices=prices,
        sector_of=sector_of,
    )
    return panel, universe, planted


def write_csv(panel: PricePanel, universe: UniverseSpec, out_dir) -> tuple[Path, Path]:
    """Write ``prices.csv`` (long format) and ``universe.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prices_path, universe_path = out / "prices.csv", out / "universe.csv"
    with prices_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "ticker", "adj_close"])
        for i, d in enumerate(panel.dates):
            for j, t in enumerate(panel.tickers):
                w.writerow([d.isoformat(), t, repr(float(panel.prices[i, j]))])
    with universe_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "sector"])
        for t in universe.tickers:
            w.writerow([t, universe.sector_of[t]])
    return prices_path, universe_path
