"""
Backtest
========

Daily event loop for the pairs / Black-Litterman strategy.

Every ``selection_freq`` days all pairs are liquidated, the trailing window
is rescanned and the book is split equally across sectors that produced a
pair. Each day the selected pairs are refit on the trailing window, their
s-scores drive the signal state machines, and whenever the set of open pairs
changes (or every day with ``resolve_daily``) the open pairs become views,
the posterior is formed and the optimizer sets new weights for the pooled
capital of the sectors with an open pair. Sectors without an open pair sit
idle in the money market or the index.

The book is kept unlevered. Leverage is an overlay on its daily return:
W_t = W_{t-1} * (1 + L r_t - (L - 1) borrow_daily), and every reported
dollar figure is scaled into levered wealth.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .blacklitterman import ActiveView, build_views, estimate_prior, posterior
from .cointegration import (
    cumulative_residuals,
    fit_ou,
    ols_regress,
    scan_pairs,
    select_pairs,
)
from .errors import (
    InfeasibleProblemError,
    InsufficientDataError,
    PairsBLError,
    ValidationError,
)
from .marketdata import CandidatePair, PricePanel, ReturnPanel, UniverseSpec, prescreen
from .metrics import TRADING_DAYS, PerformanceReport, performance
from .optimizer import OptimizationProblem, solve
from .signals import FLAT, Action, PairPosition, SScoreThresholds, force_close, s_score, step

IDLE_MODES = ("money_market", "index")
# daily wealth change = position_pnl - txn_cost - short_cost + idle_accrual - borrow_cost
COMPONENTS = ("position_pnl", "txn_cost", "short_cost", "idle_accrual", "borrow_cost")
UNALLOCATED = "_idle"


@dataclass(frozen=True)
class CostModel:
    """Annual rates; daily rates are annual / 252."""

    txn_cost: float = 0.0005
    short_cost_annual: float = 0.01
    borrow_rate_annual: float = 0.02
    risk_free_annual: float = 0.02
    leverage: float = 1.0

    def __post_init__(self):
        for name in ("txn_cost", "short_cost_annual", "borrow_rate_annual", "risk_free_annual"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.txn_cost >= 1:
            raise ValidationError("txn_cost must be below 1")
        if not self.leverage >= 1:
            raise ValidationError("leverage must be at least 1")

    @property
    def short_daily(self) -> float:
        return self.short_cost_annual / TRADING_DAYS

    @property
    def borrow_daily(self) -> float:
        return self.borrow_rate_annual / TRADING_DAYS

    @property
    def risk_free_daily(self) -> float:
        return self.risk_free_annual / TRADING_DAYS


@dataclass(frozen=True)
class BacktestConfig:
    window: int = 60
    selection_freq: int = 27
    min_reversion_days: float = 5.0
    thresholds: SScoreThresholds = SScoreThresholds()
    idle_mode: str = "money_market"
    index_ticker: str | None = None
    d: float = 2.0
    l: float = 1.0
    tau: float = 1.0
    cost_cap: float = 0.02
    start: dt.date | None = None
    end: dt.date | None = None
    resolve_daily: bool = False
    execution_delay: int = 0
    lag_order: int = 1
    alpha: float = 0.05
    critical: str = "adf"
    scan_workers: int = 1

    def __post_init__(self):
        if self.window < 20:
            raise ValidationError("window must be at least 20 returns")
        if not self.min_reversion_days >= 5:
            raise ValidationError("min_reversion_days must be at least 5")
        if not self.selection_freq > self.min_reversion_days:
            raise ValidationError("selection_freq must exceed min_reversion_days")
        if self.idle_mode not in IDLE_MODES:
            raise ValidationError(f"idle_mode must be one of {IDLE_MODES}")
        if self.idle_mode == "index" and not self.index_ticker:
            raise ValidationError("idle_mode 'index' needs index_ticker")
        if self.execution_delay not in (0, 1):
            raise ValidationError("execution_delay must be 0 or 1")
        if not (self.d > 0 and self.tau > 0 and self.l > 0):
            raise ValidationError("d, tau and l must be positive")


@dataclass(frozen=True)
class TradeRecord:
    date: dt.date
    sector: str
    pair: str
    action: str
    units_s1: float
    units_s2: float
    cost: float


@dataclass(frozen=True)
class SignalRecord:
    date: dt.date
    sector: str
    pair: str
    s_score: float
    state: str
    action: str


@dataclass(frozen=True)
class RoundTrip:
    sector: str
    pair: str
    direction: str
    open_date: dt.date
    close_date: dt.date
    gross_pnl: float
    costs: float


@dataclass(frozen=True)
class Event:
    date: dt.date
    kind: str
    detail: str = ""


@dataclass
class EquityCurve:
    """Daily levered wealth (starts at 1.0) plus the unlevered book it overlays."""

    dates: list[dt.date]
    wealth: np.ndarray
    book: np.ndarray
    sector_ledgers: dict[str, np.ndarray]
    identity_error: np.ndarray
    components: dict[str, np.ndarray] = field(default_factory=dict)
    halted: bool = False

    @property
    def returns(self) -> np.ndarray:
        return self.wealth[1:] / self.wealth[:-1] - 1.0

    @property
    def book_returns(self) -> np.ndarray:
        return self.book[1:] / self.book[:-1] - 1.0


@dataclass
class BacktestResult:
    curve: EquityCurve
    report: PerformanceReport
    trades: list[TradeRecord]
    signals: list[SignalRecord]
    round_trips: list[RoundTrip]
    events: list[Event]
    selections: list[dict]
    solutions: list[dict] = field(default_factory=list)
    open_gross: float = 0.0


@dataclass
class _OpenPair:
    pair: CandidatePair
    cols: tuple[int, int]  # universe column of ticker_a, ticker_b
    position: PairPosition = FLAT
    ou: object = None
    x_t: float = math.nan
    gross: float = 0.0
    costs: float = 0.0


def _decision_range(panel: PricePanel, cfg: BacktestConfig) -> tuple[int, int]:
    first = cfg.window + cfg.execution_delay
    dates = np.array(panel.dates, dtype="datetime64[D]")
    t0 = first
    if cfg.start is not None:
        t0 = int(np.searchsorted(dates, np.datetime64(cfg.start, "D")))
        if t0 < first:
            raise InsufficientDataError(
                f"start {cfg.start} leaves {t0} prior prices; need {first} for the warmup window"
            )
    t1 = len(dates) - 1
    if cfg.end is not None:
        t1 = int(np.searchsorted(dates, np.datetime64(cfg.end, "D"), side="right")) - 1
    if t1 - t0 < 1:
        raise InsufficientDataError(
            f"panel has {len(dates)} dates; need {first + 2} for window {cfg.window}"
        )
    return t0, t1


def _refit(ra: np.ndarray, rb: np.ndarray):
    """Rolling OU fit of a pair; (None, nan) when the window is degenerate."""
    try:
        fit = ols_regress(ra, rb)
        spread = cumulative_residuals(fit)
        ou = fit_ou(spread, hedge_ratio=fit.b)
        return ou, spread.last, s_score(spread.last, ou)
    except PairsBLError:
        return None, math.nan, math.nan


def run(
    panel: PricePanel,
    universe: UniverseSpec,
    config: BacktestConfig = BacktestConfig(),
    costs: CostModel = CostModel(),
) -> BacktestResult:
    cfg = config
    t0, t1 = _decision_range(panel, cfg)
    candidates = prescreen(panel, universe)
    tickers = list(universe.tickers)
    ucols = [panel.index_of(t) for t in tickers]
    prices = panel.prices[:, ucols]
    rets_all = panel.prices[1:] / panel.prices[:-1] - 1.0
    rets = rets_all[:, ucols]
    sector_of = [universe.sector_of[t] for t in tickers]
    index_ret = None
    if cfg.idle_mode == "index":
        index_ret = rets_all[:, panel.index_of(cfg.index_ticker)]
    w, lag = cfg.window, cfg.execution_delay
    c = costs.txn_cost
    L = costs.leverage

    ledger_keys = list(universe.sectors) + [UNALLOCATED]
    shares = np.zeros(len(tickers))
    cash = 0.0
    idle = {s: 0.0 for s in ledger_keys}
    ledger = {s: 0.0 for s in ledger_keys}
    idle[UNALLOCATED] = ledger[UNALLOCATED] = 1.0
    book = 1.0
    wealth = 1.0

    pairs: dict[str, _OpenPair] = {}
    trades: list[TradeRecord] = []
    signals: list[SignalRecord] = []
    trips: list[RoundTrip] = []
    events: list[Event] = []
    selections: list[dict] = []
    solutions: list[dict] = []

    # inception: capital arrives at the close before the first decision day
    out_dates, out_wealth, out_book, out_err = [panel.dates[t0 - 1]], [1.0], [1.0], [0.0]
    out_ledgers = {s: [ledger[s]] for s in ledger_keys}
    parts = {k: [0.0] for k in COMPONENTS}
    halted = False
    prev_active: tuple[str, ...] = ()
    scale = L  # levered dollars per book dollar at the current close

    def window_returns(t: int, cols) -> np.ndarray:
        end = t - lag  # last return realised on price index `end`
        return rets[end - w : end][:, cols]

    def owner(j: int) -> _OpenPair | None:
        op = pairs.get(sector_of[j])
        return op if op is not None and j in op.cols else None

    def trade_to(targets: dict[int, float], t: int, labels: dict[str, str]) -> float:
        """Move share holdings to ``targets`` at today's close; returns the cost."""
        nonlocal cash
        total = 0.0
        per_pair: dict[str, list] = {}
        for j, new in targets.items():
            delta = new - shares[j]
            if delta == 0.0:
                continue
            notional = delta * prices[t, j]
            cost = c * abs(notional)
            cash -= notional + cost
            ledger[sector_of[j]] -= cost
            shares[j] = new
            total += cost
            op = owner(j)
            if op is not None:
                op.costs += cost
            key = sector_of[j]
            rec = per_pair.setdefault(key, [0.0, 0.0, 0.0, op])
            rec[0 if op is None or j == op.cols[0] else 1] += delta
            rec[2] += cost
        for sector, (u1, u2, cost, op) in per_pair.items():
            trades.append(
                TradeRecord(
                    date=panel.dates[t],
                    sector=sector,
                    pair=op.pair.label if op else "",
                    action=labels.get(sector, "rebalance"),
                    units_s1=u1 * scale,
                    units_s2=u2 * scale,
                    cost=cost * scale,
                )
            )
        return total

    pending: list[tuple[_OpenPair, PairPosition]] = []

    def close_trip(op: _OpenPair):
        pending.append((op, op.position))

    def flush_trips(t: int):
        # recorded after the day's trades so exit costs are included
        for op, pos in pending:
            trips.append(
                RoundTrip(
                    sector=op.pair.sector,
                    pair=op.pair.label,
                    direction=pos.state.value,
                    open_date=pos.entry_date,
                    close_date=panel.dates[t],
                    gross_pnl=op.gross * scale,
                    costs=op.costs * scale,
                )
            )
        pending.clear()

    def reset_idle(active: set[str]):
        nonlocal cash
        for s in ledger_keys:
            target = 0.0 if s in active else ledger[s]
            cash += idle[s] - target
            idle[s] = target

    def resolve(t: int, labels: dict[str, str]) -> float:
        active = [s for s in universe.sectors if s in pairs and pairs[s].position.is_open]
        cols = [j for s in active for j in pairs[s].cols]
        held = [j for j in np.flatnonzero(shares) if j not in cols]
        cost = trade_to({int(j): 0.0 for j in held}, t, labels)
        pool = sum(ledger[s] for s in active)
        if active and pool > 0:
            views = [
                ActiveView(pairs[s].ou, pairs[s].x_t, 2 * i, 2 * i + 1) for i, s in enumerate(active)
            ]
            try:
                prior = estimate_prior(window_returns(t, cols))
                post = posterior(prior, build_views(views, len(cols), l=cfg.l), tau=cfg.tau)
                x_prev = shares[cols] * prices[t, cols] / pool
                prob = OptimizationProblem(post.m_bar, prior.S, cfg.d, x_prev, c, cfg.cost_cap)
                sol = solve(prob)
            except (InfeasibleProblemError, PairsBLError) as exc:
                events.append(Event(panel.dates[t], "optimizer_failed", f"{type(exc).__name__}: {exc}"))
            else:
                target = dict(zip(cols, sol.x * pool / prices[t, cols]))
                cost += trade_to(target, t, labels)
                dump = sol.to_dict(panel.dates[t])
                dump["tickers"] = [tickers[j] for j in cols]
                solutions.append(dump)
        reset_idle(set(active))
        return cost

    for t in range(t0, t1 + 1):
        date = panel.dates[t]
        pnl = short = accrual = txn = 0.0
        move = shares * (prices[t] - prices[t - 1])
        short_j = costs.short_daily * np.maximum(-shares * prices[t - 1], 0.0)
        growth = index_ret[t - 1] if index_ret is not None else costs.risk_free_daily
        for j in np.flatnonzero(shares):
            ledger[sector_of[j]] += move[j] - short_j[j]
            op = owner(j)
            if op is not None:
                op.gross += move[j]
                op.costs += short_j[j]
        for s in ledger_keys:
            gain = idle[s] * growth
            idle[s] += gain
            ledger[s] += gain
            accrual += gain
        pnl = float(move.sum())
        short = float(short_j.sum())
        cash -= short

        if (t - t0) % cfg.selection_freq == 0:
            labels = {}
            for s, op in pairs.items():
                if op.position.is_open:
                    close_trip(op)
                    op.position, _ = force_close(op.position)
                    labels[s] = Action.FORCE_CLOSE.value
            txn += trade_to({int(j): 0.0 for j in np.flatnonzero(shares)}, t, labels)
            flush_trips(t)
            pairs = {}
            end = t - lag
            scan_panel = ReturnPanel(panel.dates[end - w + 1 : end + 1], tuple(tickers), rets[end - w : end])
            results = scan_pairs(
                scan_panel, candidates, w, cfg.lag_order, cfg.alpha, cfg.critical, workers=cfg.scan_workers
            )
            chosen = select_pairs(results, cfg.min_reversion_days, cfg.selection_freq)
            total = sum(ledger.values())
            for s in ledger_keys:
                ledger[s] = 0.0
            if chosen:
                share = total / len(chosen)
                for s in universe.sectors:
                    if s in chosen:
                        pr = chosen[s].pair
                        pairs[s] = _OpenPair(pr, (tickers.index(pr.ticker_a), tickers.index(pr.ticker_b)))
                        ledger[s] = share
            else:
                ledger[UNALLOCATED] = total
                events.append(Event(date, "no_pairs", "no sector produced a qualifying pair"))
            reset_idle(set())
            selections.append(
                {"date": str(date), "pairs": {s: r.pair.label for s, r in chosen.items()}}
            )
            prev_active = ()

        labels = {}
        for s in universe.sectors:
            op = pairs.get(s)
            if op is None:
                continue
            ia, ib = op.cols
            ou, x_t, score = _refit(window_returns(t, [ia])[:, 0], window_returns(t, [ib])[:, 0])
            new_pos, action = step(op.position, score, cfg.thresholds, date)
            if action is Action.CLOSE:
                close_trip(op)
            if action in (Action.OPEN_LONG, Action.OPEN_SHORT):
                op.gross = op.costs = 0.0
            op.position = new_pos
            if ou is not None and new_pos.is_open:
                op.ou, op.x_t = ou, x_t
            if action is not Action.HOLD:
                labels[s] = action.value
            signals.append(
                SignalRecord(date, s, op.pair.label, score, new_pos.state.value, action.value)
            )

        active = tuple(s for s in universe.sectors if s in pairs and pairs[s].position.is_open)
        if active != prev_active or (cfg.resolve_daily and active):
            txn += resolve(t, labels)
        flush_trips(t)
        prev_active = active

        new_book = book + pnl - short + accrual - txn
        marked = cash + float(shares @ prices[t]) + sum(idle.values())
        r = new_book / book - 1.0
        borrow = (L - 1.0) * costs.borrow_daily * wealth
        new_wealth = new_book if L == 1 else wealth * (1.0 + L * r - (L - 1.0) * costs.borrow_daily)
        day = {
            "position_pnl": pnl * scale,
            "txn_cost": txn * scale,
            "short_cost": short * scale,
            "idle_accrual": accrual * scale,
            "borrow_cost": borrow,
        }
        rebuilt = wealth + day["position_pnl"] - day["txn_cost"] - day["short_cost"] + day["idle_accrual"] - borrow
        err = max(
            abs(marked - new_book) * scale,
            abs(sum(ledger.values()) - new_book) * scale,
            abs(rebuilt - new_wealth),
        )
        book, wealth = new_book, new_wealth
        out_dates.append(date)
        out_wealth.append(wealth)
        out_book.append(book)
        out_err.append(err)
        for k, v in day.items():
            parts[k].append(v)
        for s in ledger_keys:
            out_ledgers[s].append(ledger[s] * (wealth / book if book > 0 else 0.0))
        if book <= 0 or wealth <= 0:
            events.append(Event(date, "bankruptcy", f"wealth {wealth:.6g}, book {book:.6g}"))
            halted = True
            break
        scale = L * wealth / book

    curve = EquityCurve(
        dates=out_dates,
        wealth=np.array(out_wealth),
        book=np.array(out_book),
        sector_ledgers={s: np.array(v) for s, v in out_ledgers.items()},
        identity_error=np.array(out_err),
        components={k: np.array(v) for k, v in parts.items()},
        halted=halted,
    )
    if len(curve.wealth) < 2:
        raise InsufficientDataError("backtest produced fewer than two wealth points")
    return BacktestResult(
        curve=curve,
        report=metrics(curve, costs),
        trades=trades,
        signals=signals,
        round_trips=trips,
        events=events,
        selections=selections,
        solutions=solutions,
        open_gross=sum(op.gross for op in pairs.values() if op.position.is_open) * scale,
    )


def metrics(curve: EquityCurve, costs: CostModel = CostModel()) -> PerformanceReport:
    return performance(curve.wealth, costs.risk_free_annual)


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[tuple[int, float, float], ...]
    best_sharpe: int
    best_calmar: int


def frequency_sweep(
    panel: PricePanel,
    universe: UniverseSpec,
    config_template: BacktestConfig,
    costs: CostModel,
    freqs: Sequence[int],
) -> SweepTable:
    """Full backtest per selection frequency; ties go to the smaller frequency."""
    freqs = [int(f) for f in freqs]
    if not freqs:
        raise ValidationError("no frequencies to sweep")
    bad = [f for f in freqs if f <= 10]
    if bad:
        raise ValidationError(f"selection frequencies must exceed 10 days, got {bad}")
    rows = []
    for f in freqs:
        rep = run(panel, universe, replace(config_template, selection_freq=f), costs).report
        rows.append((f, rep.sharpe, rep.calmar))

    def argmax(col: int) -> int:
        best = max(rows, key=lambda r: (r[col], -r[0]))
        return best[0]

    return SweepTable(rows=tuple(rows), best_sharpe=argmax(1), best_calmar=argmax(2))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_equity_csv(path, curve: EquityCurve) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["date", "wealth"])
        for d, w in zip(curve.dates, curve.wealth):
            out.writerow([d.isoformat(), _fmt(w)])


def write_trade_log_csv(path, trades: Sequence[TradeRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["date", "sector", "pair", "action", "units_s1", "units_s2", "cost"])
        for tr in trades:
            out.writerow(
                [tr.date.isoformat(), tr.sector, tr.pair, tr.action,
                 _fmt(tr.units_s1), _fmt(tr.units_s2), _fmt(tr.cost)]
            )


def write_signal_log_csv(path, signals: Sequence[SignalRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["date", "sector", "pair", "s_score", "action", "state"])
        for sg in signals:
            out.writerow([sg.date.isoformat(), sg.sector, sg.pair, _fmt(sg.s_score), sg.action, sg.state])


def write_sweep_csv(path, table: SweepTable) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["freq", "sharpe", "calmar"])
        for f, sh, ca in table.rows:
            out.writerow([f, _fmt(sh), _fmt(ca)])


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (dt.date,)):
        return obj.isoformat()
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def report_dict(result: BacktestResult, costs: CostModel, extra: dict | None = None) -> dict:
    curve = result.curve
    out = {
        **result.report.to_dict(),
        "metadata": {
            "leverage": costs.leverage,
            "start": curve.dates[0].isoformat(),
            "end": curve.dates[-1].isoformat(),
            "days": len(curve.dates),
            "halted": curve.halted,
            "trades": len(result.trades),
            "round_trips": len(result.round_trips),
            "max_identity_error": float(np.max(curve.identity_error)),
            "events": [asdict(e) for e in result.events if e.kind != "no_pairs"],
            **(extra or {}),
        },
    }
    return _json_safe(out)


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(_json_safe(payload), indent=2, sort_keys=False) + "\n", encoding="utf-8")
