"""
Command-line entry point.

    pairsbl scan      cointegration scan of the latest window
    pairsbl backtest  full backtest: equity, trade log, signal log, report
    pairsbl sweep     selection-frequency tuning table
    pairsbl report    recompute the performance report from an equity CSV
    pairsbl synth     write a synthetic price panel

Exit codes: 0 success, 1 runtime error, 2 usage or config/data error.
Every run writes ``run_manifest.json``; pass it back with ``--config`` to
replay the run.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .backtest import (
    _json_safe,
    frequency_sweep,
    report_dict,
    run,
    write_equity_csv,
    write_json,
    write_signal_log_csv,
    write_sweep_csv,
    write_trade_log_csv,
)
from .cointegration import scan_pairs, select_pairs
from .errors import ConfigError, DataError, PairsBLError
from .marketdata import compute_returns, load_prices, load_universe, prescreen
from .metrics import performance
from .synthetic import SyntheticProfile, generate, write_csv

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def parse_freqs(text: str) -> list[int]:
    """``"11..30"`` (inclusive) or ``"11,15,27"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            return list(range(int(lo), int(hi) + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad frequency list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config or run_manifest.json (default: bundled demo)")
    common.add_argument("--seed", type=int, help="seed for synthetic data")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--window", type=int, help="estimation window in returns")

    parser = _Parser(prog="pairsbl", description="Pairs trading with Black-Litterman weights.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("scan", parents=[common], help="cointegration scan of the latest window")

    bt = sub.add_parser("backtest", parents=[common], help="run the backtest")
    bt.add_argument("--leverage", type=float)
    bt.add_argument("--idle-mode", choices=["money_market", "index"])
    bt.add_argument("--start")
    bt.add_argument("--end")
    bt.add_argument("--resolve-daily", action="store_true", default=None)

    sw = sub.add_parser("sweep", parents=[common], help="selection-frequency sweep")
    sw.add_argument("--freqs", help='frequencies, e.g. "11..30" or "11,20,27"')

    rp = sub.add_parser("report", parents=[common], help="metrics from an equity CSV")
    rp.add_argument("--equity", help="equity CSV (default: <out-dir>/equity.csv)")

    sy = sub.add_parser("synth", parents=[common], help="write a synthetic panel")
    sy.add_argument("--days", type=int, default=SyntheticProfile.n_days)
    return parser


def _overrides(args) -> dict:
    over: dict[str, dict] = {}

    def put(section, key, value):
        if value is not None:
            over.setdefault(section, {})[key] = value

    put("run", "seed", args.seed)
    put("run", "out_dir", args.out_dir)
    put("backtest", "window", args.window)
    put("costs", "leverage", getattr(args, "leverage", None))
    put("backtest", "idle_mode", getattr(args, "idle_mode", None))
    put("backtest", "start", getattr(args, "start", None))
    put("backtest", "end", getattr(args, "end", None))
    put("backtest", "resolve_daily", getattr(args, "resolve_daily", None))
    if getattr(args, "freqs", None):
        put("sweep", "freqs", parse_freqs(args.freqs))
    return over


def load_market(cfg: cfgmod.RunConfig):
    data = cfg.data
    if data.source == "synthetic":
        panel, universe, _ = generate(cfg.seed)
        return panel, universe
    if not data.prices or not data.universe:
        raise ConfigError("data.prices and data.universe are required when data.source = 'files'")
    universe = load_universe(data.universe, per_sector=data.per_sector)
    panel = load_prices(data.prices, sectors=universe.sector_of, missing=data.missing)
    return panel, universe


def _manifest(command: str, cfg: cfgmod.RunConfig, out: Path, outputs: list[str]) -> None:
    write_json(
        out / "run_manifest.json",
        {
            "command": command,
            "version": __version__,
            "seed": cfg.seed,
            "outputs": outputs,
            "config": cfg.to_dict(),
        },
    )


def cmd_scan(cfg: cfgmod.RunConfig, out: Path) -> list[str]:
    panel, universe = load_market(cfg)
    bt = cfg.backtest
    returns = compute_returns(panel)
    results = scan_pairs(
        returns, prescreen(panel, universe), bt.window, bt.lag_order, bt.alpha, bt.critical,
        workers=bt.scan_workers,
    )
    chosen = select_pairs(results, bt.min_reversion_days, bt.selection_freq)
    write_json(
        out / "scan_report.json",
        {
            "date": returns.dates[-1].isoformat(),
            "window": bt.window,
            "critical": bt.critical,
            "alpha": bt.alpha,
            "stationary_pairs": sum(r.stationary for r in results),
            "selected": {s: r.pair.label for s, r in chosen.items()},
            "pairs": [r.to_dict() for r in results],
        },
    )
    return ["scan_report.json"]


def cmd_backtest(cfg: cfgmod.RunConfig, out: Path) -> list[str]:
    panel, universe = load_market(cfg)
    res = run(panel, universe, cfg.backtest, cfg.costs)
    write_equity_csv(out / "equity.csv", res.curve)
    write_trade_log_csv(out / "trades.csv", res.trades)
    write_signal_log_csv(out / "signals.csv", res.signals)
    write_json(out / "report.json", report_dict(res, cfg.costs, {"window": cfg.backtest.window}))
    write_json(out / "solutions.json", {"solutions": res.solutions, "selections": res.selections})
    return ["equity.csv", "trades.csv", "signals.csv", "report.json", "solutions.json"]


def cmd_sweep(cfg: cfgmod.RunConfig, out: Path) -> list[str]:
    panel, universe = load_market(cfg)
    try:
        table = frequency_sweep(panel, universe, cfg.backtest, cfg.costs, cfg.freqs)
    except DataError as exc:
        raise ConfigError(str(exc)) from None
    write_sweep_csv(out / "sweep.csv", table)
    write_json(
        out / "sweep.json",
        {
            "rows": [{"freq": f, "sharpe": s, "calmar": c} for f, s, c in table.rows],
            "best_sharpe": table.best_sharpe,
            "best_calmar": table.best_calmar,
            "note": "synthetic data; values are not comparable to results on real prices",
        },
    )
    return ["sweep.csv", "sweep.json"]


def cmd_report(cfg: cfgmod.RunConfig, out: Path, equity: str | None) -> list[str]:
    path = Path(equity) if equity else out / "equity.csv"
    if not path.is_file():
        raise FileNotFoundError(f"equity file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        wealth = np.array([float(r["wealth"]) for r in rows])
    except (KeyError, ValueError):
        raise DataError(f"{path}: expected columns date,wealth") from None
    rep = performance(wealth, cfg.costs.risk_free_annual)
    write_json(out / "report.json", _json_safe({**rep.to_dict(), "source": str(path)}))
    return ["report.json"]


def cmd_synth(cfg: cfgmod.RunConfig, out: Path, days: int) -> list[str]:
    panel, universe, _ = generate(cfg.seed, dataclasses.replace(SyntheticProfile(), n_days=days))
    write_csv(panel, universe, out)
    return ["prices.csv", "universe.csv"]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = cfgmod.load(args.config, _overrides(args))
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "scan":
            outputs = cmd_scan(cfg, out)
        elif args.command == "backtest":
            outputs = cmd_backtest(cfg, out)
        elif args.command == "sweep":
            outputs = cmd_sweep(cfg, out)
        elif args.command == "report":
            outputs = cmd_report(cfg, out, args.equity)
        else:
            outputs = cmd_synth(cfg, out, args.days)
        _manifest(args.command, cfg, out, outputs)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"pairsbl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PairsBLError, OSError, RuntimeError) as exc:
        print(f"pairsbl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for name in outputs:
        print(out / name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
