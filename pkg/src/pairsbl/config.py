"""
Run configuration.

Sources, lowest precedence first: built-in defaults, the config file (TOML,
or a JSON ``run_manifest.json`` from an earlier run), command-line flags.
Relative data paths in a file are resolved against the file's directory.

TOML layout::

    [data]        source, prices, universe, missing, per_sector
    [run]         seed, out_dir
    [backtest]    window, selection_freq, min_reversion_days, idle_mode, ...
    [thresholds]  s_bo, s_so, s_bc, s_sc
    [costs]       txn_cost, short_cost_annual, borrow_rate_annual, ...
    [sweep]       freqs
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .backtest import BacktestConfig, CostModel
from .errors import ConfigError, PairsBLError
from .signals import SScoreThresholds

SOURCES = ("files", "synthetic")


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("pairsbl") / "data" / name))


@dataclass(frozen=True)
class DataConfig:
    source: str = "files"
    prices: str | None = None
    universe: str | None = None
    missing: str = "drop"
    per_sector: int = 5


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = DataConfig()
    backtest: BacktestConfig = BacktestConfig()
    costs: CostModel = CostModel()
    seed: int = 0
    out_dir: str = "out"
    freqs: tuple[int, ...] = tuple(range(11, 31))

    def to_dict(self) -> dict:
        bt = dataclasses.asdict(self.backtest)
        thresholds = bt.pop("thresholds")
        for k in ("start", "end"):
            if bt[k] is not None:
                bt[k] = bt[k].isoformat()
        return {
            "data": dataclasses.asdict(self.data),
            "run": {"seed": self.seed, "out_dir": self.out_dir},
            "backtest": bt,
            "thresholds": thresholds,
            "costs": dataclasses.asdict(self.costs),
            "sweep": {"freqs": list(self.freqs)},
        }


_SECTIONS = {
    "data": {f.name for f in dataclasses.fields(DataConfig)},
    "run": {"seed", "out_dir"},
    "backtest": {f.name for f in dataclasses.fields(BacktestConfig)} - {"thresholds"},
    "thresholds": {f.name for f in dataclasses.fields(SScoreThresholds)},
    "costs": {f.name for f in dataclasses.fields(CostModel)},
    "sweep": {"freqs"},
}


def read_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".json":
            raw = json.loads(text)
            raw = raw.get("config", raw)
        else:
            raw = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    data = raw.get("data", {})
    for key in ("prices", "universe"):
        if data.get(key):
            p = Path(data[key])
            if not p.is_absolute():
                data[key] = str((path.parent / p).resolve())
    return raw


def _merge(base: dict, over: Mapping[str, Any]) -> dict:
    out = {k: dict(v) for k, v in base.items()}
    for section, values in over.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, Mapping):
            raise ConfigError(f"[{section}] must be a table")
        unknown = set(values) - _SECTIONS[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
        out.setdefault(section, {}).update(values)
    return out


def _date(v):
    if v is None or isinstance(v, dt.date):
        return v
    try:
        return dt.date.fromisoformat(str(v))
    except ValueError:
        raise ConfigError(f"bad date {v!r}") from None


def resolve(file_values: Mapping | None = None, overrides: Mapping | None = None) -> RunConfig:
    """Defaults, then ``file_values``, then ``overrides`` (same nested layout)."""
    merged = _merge(RunConfig().to_dict(), file_values or {})
    merged = _merge(merged, overrides or {})
    try:
        data = DataConfig(**merged["data"])
        if data.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}")
        bt = dict(merged["backtest"])
        bt["start"], bt["end"] = _date(bt.get("start")), _date(bt.get("end"))
        thresholds = SScoreThresholds(**merged["thresholds"])
        backtest = BacktestConfig(thresholds=thresholds, **bt)
        costs = CostModel(**merged["costs"])
        freqs = tuple(int(f) for f in merged["sweep"]["freqs"])
        run = merged["run"]
        return RunConfig(
            data=data,
            backtest=backtest,
            costs=costs,
            seed=int(run["seed"]),
            out_dir=str(run["out_dir"]),
            freqs=freqs,
        )
    except ConfigError:
        raise
    except (PairsBLError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load(path=None, overrides: Mapping | None = None) -> RunConfig:
    """Resolve a run config; with no path the bundled demo config is used."""
    return resolve(read_file(path or bundled_path("config.toml")), overrides)
