"""
Market data
===========

Price-file ingestion, calendar alignment, simple returns and the
sector/size prescreen that produces the candidate pair list.

Price CSV: ``date,ticker,adj_close`` with ISO dates, one row per (date, ticker).
Universe CSV: ``ticker,sector``; row order within a sector is the holding rank.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    AlignmentError,
    InsufficientDataError,
    ParseError,
    ValidationError,
)

MISSING_POLICIES = ("drop", "ffill")
UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class PricePanel:
    """Date-aligned adjusted closes; rows are dates, columns are tickers."""

    dates: tuple[dt.date, ...]
    tickers: tuple[str, ...]
    prices: np.ndarray
    sector_of: Mapping[str, str]
    missing_policy: str = "drop"
    dropped_dates: int = 0
    filled_cells: int = 0

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        if prices.shape != (len(self.dates), len(self.tickers)):
            raise ValidationError(
                f"price matrix shape {prices.shape} does not match "
                f"{len(self.dates)} dates x {len(self.tickers)} tickers"
            )
        if len(set(self.tickers)) != len(self.tickers):
            raise ValidationError("duplicate tickers in panel")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValidationError("dates must be strictly increasing")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise ValidationError("prices must be finite and strictly positive")
        missing = [t for t in self.tickers if t not in self.sector_of]
        if missing:
            raise ValidationError(f"tickers without sector label: {missing}")
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)

    def __len__(self) -> int:
        return len(self.dates)

    def column(self, ticker: str) -> np.ndarray:
        return self.prices[:, self.index_of(ticker)]

    def index_of(self, ticker: str) -> int:
        try:
            return self.tickers.index(ticker)
        except ValueError:
            raise ValidationError(f"unknown ticker {ticker!r}") from None

    def select(self, tickers: Sequence[str]) -> "PricePanel":
        idx = [self.index_of(t) for t in tickers]
        return PricePanel(
            dates=self.dates,
            tickers=tuple(tickers),
            prices=self.prices[:, idx],
            sector_of={t: self.sector_of[t] for t in tickers},
            missing_policy=self.missing_policy,
            dropped_dates=self.dropped_dates,
            filled_cells=self.filled_cells,
        )

    def between(self, start: dt.date | None = None, end: dt.date | None = None) -> "PricePanel":
        mask = np.ones(len(self.dates), dtype=bool)
        d = np.array(self.dates, dtype="datetime64[D]")
        if start is not None:
            mask &= d >= np.datetime64(start, "D")
        if end is not None:
            mask &= d <= np.datetime64(end, "D")
        return PricePanel(
            dates=tuple(np.array(self.dates, dtype=object)[mask]),
            tickers=self.tickers,
            prices=self.prices[mask],
            sector_of=self.sector_of,
            missing_policy=self.missing_policy,
            dropped_dates=self.dropped_dates,
            filled_cells=self.filled_cells,
        )


@dataclass(frozen=True)
class ReturnPanel:
    """Simple daily returns; ``dates[i]`` is the date the return is realised."""

    dates: tuple[dt.date, ...]
    tickers: tuple[str, ...]
    returns: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=float)
        if r.shape != (len(self.dates), len(self.tickers)):
            raise ValidationError("return matrix shape mismatch")
        if not np.all(np.isfinite(r)):
            raise ValidationError("returns must be finite")
        r.setflags(write=False)
        object.__setattr__(self, "returns", r)

    def __len__(self) -> int:
        return len(self.dates)

    def column(self, ticker: str) -> np.ndarray:
        return self.returns[:, self.tickers.index(ticker)]


@dataclass(frozen=True)
class UniverseSpec:
    sectors: tuple[str, ...]
    tickers: tuple[str, ...]
    sector_of: Mapping[str, str]
    per_sector: int = 5

    def members(self, sector: str) -> list[str]:
        return [t for t in self.tickers if self.sector_of[t] == sector]


@dataclass(frozen=True, order=True)
class CandidatePair:
    """Unordered within-sector pair; ``ticker_a`` is regressed on ``ticker_b``."""

    sector: str
    ticker_a: str
    ticker_b: str

    @property
    def label(self) -> str:
        return f"{self.ticker_a}/{self.ticker_b}"


def _parse_date(text: str, path, line: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(path, line, f"bad date {text!r} (expected YYYY-MM-DD)") from None


def load_prices(
    path,
    sectors: Mapping[str, str] | None = None,
    missing: str = "drop",
) -> PricePanel:
    """Read a long-format price CSV into an aligned :class:`PricePanel`.

    ``missing="drop"`` removes every date on which any ticker lacks a price;
    ``missing="ffill"`` carries the last price forward and only drops the
    leading dates before every ticker has traded. Tickers missing from
    ``sectors`` are labelled ``"unassigned"``.
    """
    if missing not in MISSING_POLICIES:
        raise ValidationError(f"missing policy must be one of {MISSING_POLICIES}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"price file not found: {path}")

    cells: dict[tuple[dt.date, str], float] = {}
    tickers: list[str] = []
    seen_tickers: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "ticker", "adj_close"]:
            raise ParseError(path, 1, "header must be 'date,ticker,adj_close'")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(path, line, f"expected 3 fields, got {len(row)}")
            date = _parse_date(row[0], path, line)
            ticker = row[1].strip()
            if not ticker:
                raise ParseError(path, line, "empty ticker")
            try:
                price = float(row[2])
            except ValueError:
                raise ParseError(path, line, f"bad price {row[2]!r}") from None
            if not np.isfinite(price) or price <= 0:
                raise ValidationError(
                    f"{path}: line {line}: non-positive price {price} for {ticker} on {date}"
                )
            if (date, ticker) in cells:
                raise ParseError(path, line, f"duplicate row for {ticker} on {date}")
            cells[(date, ticker)] = price
            if ticker not in seen_tickers:
                seen_tickers.add(ticker)
                tickers.append(ticker)

    if not cells:
        raise InsufficientDataError(f"{path}: no price rows")
    all_dates = sorted({d for d, _ in cells})
    grid = np.full((len(all_dates), len(tickers)), np.nan)
    row_of = {d: i for i, d in enumerate(all_dates)}
    col_of = {t: j for j, t in enumerate(tickers)}
    for (d, t), p in cells.items():
        grid[row_of[d], col_of[t]] = p

    filled = 0
    if missing == "ffill":
        for j in range(grid.shape[1]):
            last = np.nan
            for i in range(grid.shape[0]):
                if np.isnan(grid[i, j]):
                    if not np.isnan(last):
                        grid[i, j] = last
                        filled += 1
                else:
                    last = grid[i, j]
    keep = ~np.isnan(grid).any(axis=1)
    if not keep.any():
        raise AlignmentError(f"{path}: no date has prices for every ticker")

    sector_of = {t: (sectors or {}).get(t, UNASSIGNED) for t in tickers}
    return PricePanel(
        dates=tuple(d for d, k in zip(all_dates, keep) if k),
        tickers=tuple(tickers),
        prices=grid[keep],
        sector_of=sector_of,
        missing_policy=missing,
        dropped_dates=int((~keep).sum()),
        filled_cells=filled,
    )


def load_universe(path, per_sector: int = 5) -> UniverseSpec:
    """Read ``ticker,sector`` rows, keeping the first ``per_sector`` per sector."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"universe file not found: {path}")
    if per_sector < 2:
        raise ValidationError("per_sector must be at least 2 to form a pair")
    sectors: list[str] = []
    chosen: dict[str, list[str]] = {}
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["ticker", "sector"]:
            raise ParseError(path, 1, "header must be 'ticker,sector'")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(path, line, f"expected 2 fields, got {len(row)}")
            ticker, sector = row[0].strip(), row[1].strip()
            if not ticker or not sector:
                raise ParseError(path, line, "empty ticker or sector")
            if ticker in seen:
                raise ParseError(path, line, f"duplicate ticker {ticker}")
            seen.add(ticker)
            if sector not in chosen:
                sectors.append(sector)
                chosen[sector] = []
            if len(chosen[sector]) < per_sector:
                chosen[sector].append(ticker)
    return make_universe({s: chosen[s] for s in sectors}, per_sector=per_sector)


def make_universe(members: Mapping[str, Sequence[str]], per_sector: int | None = None) -> UniverseSpec:
    """Build a :class:`UniverseSpec` from ``{sector: [ticker, ...]}``."""
    sectors = tuple(members)
    tickers = tuple(t for s in sectors for t in members[s])
    if len(set(tickers)) != len(tickers):
        raise ValidationError("a ticker appears in more than one sector")
    sector_of = {t: s for s in sectors for t in members[s]}
    if per_sector is None:
        per_sector = max((len(v) for v in members.values()), default=0)
    return UniverseSpec(sectors=sectors, tickers=tickers, sector_of=sector_of, per_sector=per_sector)


def compute_returns(panel: PricePanel) -> ReturnPanel:
    if len(panel) < 2:
        raise InsufficientDataError("need at least two dates to compute returns")
    p = panel.prices
    return ReturnPanel(
        dates=panel.dates[1:],
        tickers=panel.tickers,
        returns=p[1:] / p[:-1] - 1.0,
    )


def prescreen(panel: PricePanel, spec: UniverseSpec) -> list[CandidatePair]:
    """All unordered within-sector pairs of the universe, in universe order."""
    unknown = [t for t in spec.tickers if t not in panel.tickers]
    if unknown:
        raise ValidationError(f"universe tickers missing from price panel: {unknown}")
    pairs = []
    for sector in spec.sectors:
        for a, b in combinations(spec.members(sector), 2):
            pairs.append(CandidatePair(sector, a, b))
    return pairs
