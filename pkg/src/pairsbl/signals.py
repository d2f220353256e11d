"""
Signals
=======

s-score of a calibrated spread and the four-threshold open/close state
machine. All comparisons are strict: a score sitting exactly on a cutoff
does not trade.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .cointegration import OuParams
from .errors import DegenerateSeriesError, ValidationError


class State(str, Enum):
    FLAT = "flat"
    LONG_SPREAD = "long_spread"
    SHORT_SPREAD = "short_spread"


class Action(str, Enum):
    OPEN_LONG = "open_long"
    OPEN_SHORT = "open_short"
    CLOSE = "close"
    HOLD = "hold"
    FORCE_CLOSE = "force_close"


@dataclass(frozen=True)
class SScoreThresholds:
    """Entry/exit cutoffs.

    Long spread opens below -s_bo and closes above -s_sc; short spread opens
    above +s_so and closes below +s_bc.
    """

    s_bo: float = 1.3
    s_so: float = 1.3
    s_bc: float = 0.7
    s_sc: float = 0.5

    def __post_init__(self):
        if min(self.s_bc, self.s_sc) < 0:
            raise ValidationError("closing cutoffs must be non-negative")
        if not (self.s_bo > self.s_sc and self.s_so > self.s_bc):
            raise ValidationError(
                "opening cutoffs must exceed the closing cutoff of the same side "
                f"(s_bo={self.s_bo} vs s_sc={self.s_sc}, s_so={self.s_so} vs s_bc={self.s_bc})"
            )


@dataclass(frozen=True)
class PairPosition:
    state: State = State.FLAT
    entry_date: object = None
    entry_s_score: float | None = None

    @property
    def is_open(self) -> bool:
        return self.state is not State.FLAT


FLAT = PairPosition()


def s_score(x_t: float, ou: OuParams) -> float:
    """Distance of the spread from its OU mean in equilibrium standard deviations."""
    s_eq = ou.s_eq
    if s_eq <= 0:
        raise DegenerateSeriesError("s-score undefined for a noise-free spread (s_eq = 0)")
    return (x_t - ou.m) / s_eq


def step(
    position: PairPosition,
    s: float,
    thresholds: SScoreThresholds = SScoreThresholds(),
    date=None,
) -> tuple[PairPosition, Action]:
    """Advance one pair's position by one observation of its s-score.

    A NaN score (no valid fit that day) holds the current state.
    """
    if s is None or math.isnan(s):
        return position, Action.HOLD
    th = thresholds
    if position.state is State.FLAT:
        if s < -th.s_bo:
            return PairPosition(State.LONG_SPREAD, date, s), Action.OPEN_LONG
        if s > th.s_so:
            return PairPosition(State.SHORT_SPREAD, date, s), Action.OPEN_SHORT
        return position, Action.HOLD
    if position.state is State.SHORT_SPREAD and s < th.s_bc:
        return FLAT, Action.CLOSE
    if position.state is State.LONG_SPREAD and s > -th.s_sc:
        return FLAT, Action.CLOSE
    return position, Action.HOLD


def force_close(position: PairPosition) -> tuple[PairPosition, Action]:
    """Liquidation at a pair-selection date, regardless of the score."""
    if position.is_open:
        return FLAT, Action.FORCE_CLOSE
    return position, Action.HOLD
