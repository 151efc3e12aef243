"""Intrinsic value from discounted free cash flows.

The estimator discounts the realized FCF of a trailing window at the
realized per-step WACC, closes with a constant-growth continuing value
discounted through the window, and (optionally) pushes the backdated
figure forward to the window end by compounding the earnings growth
rate.  A 90% confidence band comes from the empirical distribution of
the ratio between the forward-corrected estimate of a date and the
better-informed estimate made once a further full window of data is
realized.

Annual rates are converted to per-step rates geometrically:
(1 + r)^(1/steps) - 1; annualized flows are split evenly across steps.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .dates import DEFAULT_EPOCH, format_month, parse_month

if TYPE_CHECKING:  # pragma: no cover
    from .data_ingest import FundamentalsSeries


class PoleError(ValueError):
    """Long-run WACC does not exceed growth: the continuing value diverges."""


@dataclass(frozen=True)
class IntrinsicConfig:
    """Valuation constants.

    `long_run_wacc=None` means "estimate from data": the sample median
    of the derived WACC series is used.  `tax_rate` adjusts the cost of
    debt; the default 0 treats the long rate as already after-tax.
    """

    window_years: int = 5
    growth: float = 0.017
    roic: float = 0.07
    long_run_wacc: Optional[float] = None
    steps_per_year: int = 12
    debt_to_equity: float = 0.197
    tax_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.window_years < 1:
            raise ValueError("window_years must be >= 1")
        if self.steps_per_year < 1:
            raise ValueError("steps_per_year must be >= 1")
        if self.roic <= 0:
            raise ValueError("roic must be positive")
        if self.debt_to_equity < 0:
            raise ValueError("debt_to_equity must be nonnegative")


def annual_to_step(rate: float | np.ndarray, steps_per_year: int) -> float | np.ndarray:
    """Per-step rate equivalent to an annual rate under compounding."""
    return (1.0 + rate) ** (1.0 / steps_per_year) - 1.0


def intrinsic_backdated(
    fcf_window: np.ndarray,
    wacc_window: np.ndarray,
    fcf_next: float,
    long_run_wacc: float,
    growth: float,
) -> float:
    """Value at the start of a realized window of cash flows.

    `fcf_window[j]` is the flow one step after another, discounted at
    the matching realized per-step `wacc_window[j]`; `fcf_next` is the
    expected flow one step past the window, turned into a continuing
    value at `1/(long_run_wacc - growth)` and discounted through the
    whole window.  All rates are per step.
    """
    fcf_window = np.asarray(fcf_window, dtype=float)
    wacc_window = np.asarray(wacc_window, dtype=float)
    if fcf_window.size == 0:
        raise ValueError("window must contain at least one step")
    if fcf_window.shape != wacc_window.shape:
        raise ValueError("fcf and wacc windows must have equal length")
    if np.any(wacc_window <= -1.0):
        raise ValueError("per-step WACC must exceed -1")
    if long_run_wacc <= growth:
        raise PoleError(
            f"long-run WACC ({long_run_wacc}) must exceed growth ({growth})"
        )
    discount = np.cumprod(1.0 + wacc_window)
    realized = float(np.sum(fcf_window / discount))
    continuing = fcf_next / (discount[-1] * (long_run_wacc - growth))
    return realized + continuing


def forward_correct(value: float, growth: float, years: float) -> float:
    """Push a backdated value to the present by compounded growth."""
    if value <= 0:
        raise ValueError("backdated value must be positive")
    return value * (1.0 + growth) ** years


@dataclass
class IntrinsicSeries:
    """Monthly intrinsic values with a multiplicative 90% band."""

    months: np.ndarray
    values: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    corrected: bool
    epoch: tuple[int, int] = DEFAULT_EPOCH

    def __post_init__(self) -> None:
        self.months = np.asarray(self.months, dtype=int)
        for name in ("values", "ci_low", "ci_high"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.values.shape == self.ci_low.shape == self.ci_high.shape == self.months.shape):
            raise ValueError("all series must share the date axis")
        if np.any(self.values <= 0):
            raise ValueError("intrinsic values must be positive")
        if np.any(self.ci_low > self.values) or np.any(self.ci_high < self.values):
            raise ValueError("band must bracket the values")

    def __len__(self) -> int:
        return len(self.months)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["month", "intrinsic", "ci_low", "ci_high"])
        for i in range(len(self)):
            writer.writerow(
                [
                    format_month(int(self.months[i]), self.epoch),
                    repr(float(self.values[i])),
                    repr(float(self.ci_low[i])),
                    repr(float(self.ci_high[i])),
                ]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "epoch": list(self.epoch),
            "corrected": self.corrected,
            "months": [format_month(int(m), self.epoch) for m in self.months],
            "values": self.values.tolist(),
            "ci_low": self.ci_low.tolist(),
            "ci_high": self.ci_high.tolist(),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "IntrinsicSeries":
        payload = json.loads(text)
        epoch = tuple(payload["epoch"])
        months = [parse_month(m, epoch) for m in payload["months"]]
        return cls(
            months=np.array(months, dtype=int),
            values=np.array(payload["values"], dtype=float),
            ci_low=np.array(payload["ci_low"], dtype=float),
            ci_high=np.array(payload["ci_high"], dtype=float),
            corrected=bool(payload["corrected"]),
            epoch=epoch,
        )


def backdated_window_values(
    fcf: np.ndarray,
    wacc: np.ndarray,
    cfg: IntrinsicConfig,
    long_run_wacc: Optional[float] = None,
) -> np.ndarray:
    """Backdated window-start values for every full trailing window.

    `fcf` and `wacc` are annualized monthly series; entry i of the
    result is the valuation over the window ending at position
    n_steps-1+i, i.e. the estimate of the value at the step just before
    that window began.  `long_run_wacc` overrides the config (None
    falls back to cfg, then to the sample median).
    """
    fcf = np.asarray(fcf, dtype=float)
    wacc = np.asarray(wacc, dtype=float)
    if fcf.shape != wacc.shape:
        raise ValueError("fcf and wacc must share the date axis")
    steps = cfg.steps_per_year
    n_steps = cfg.window_years * steps
    if len(fcf) < n_steps:
        raise ValueError(f"series spans {len(fcf)} months; need at least {n_steps}")
    growth_step = annual_to_step(cfg.growth, steps)
    long_run = cfg.long_run_wacc if long_run_wacc is None else long_run_wacc
    if long_run is None:
        long_run = float(np.median(wacc))
    long_run_step = annual_to_step(long_run, steps)
    if long_run_step <= growth_step:
        raise PoleError(
            f"long-run WACC ({long_run}) must exceed growth ({cfg.growth})"
        )
    fcf_step = fcf / steps
    wacc_step = annual_to_step(wacc, steps)

    out = np.empty(len(fcf) - n_steps + 1, dtype=float)
    for i in range(len(out)):
        window = slice(i, i + n_steps)
        fcf_next = fcf_step[i + n_steps - 1] * (1.0 + growth_step)
        out[i] = intrinsic_backdated(
            fcf_step[window], wacc_step[window], fcf_next, long_run_step, growth_step
        )
    return out


def intrinsic_series(
    fund: "FundamentalsSeries",
    cfg: IntrinsicConfig,
    corrected: bool = True,
) -> IntrinsicSeries:
    """Intrinsic value at each month with a full trailing window.

    With `corrected`, each window-start value is compounded forward by
    the growth rate over the window length and assigned to the window
    end; without, the raw backdated value is assigned to the window end
    (the variant that skips the forward correction).

    The band multipliers are the 5th/95th percentiles (clamped to
    include 1) of corrected(d)/revised(d), where revised(d) is the
    estimate of date d made after a further full window of realized
    data; they are applied multiplicatively around the output values.
    """
    n_steps = cfg.window_years * cfg.steps_per_year
    base = backdated_window_values(fund.fcf, fund.wacc, cfg)
    factor = (1.0 + cfg.growth) ** cfg.window_years if corrected else 1.0
    values = base * factor

    months = fund.months[n_steps - 1 :]
    # base[i] estimates the value at window start; with the corrected
    # factor it estimates the window end (months[i]).  base[i + n_steps]
    # is the revised estimate of months[i] once the next window closes.
    corrected_vals = base[: len(base) - n_steps] * (1.0 + cfg.growth) ** cfg.window_years
    revised_vals = base[n_steps:]
    if len(corrected_vals) > 0:
        ratios = corrected_vals / revised_vals
        lo = min(float(np.percentile(ratios, 5)), 1.0)
        hi = max(float(np.percentile(ratios, 95)), 1.0)
    else:
        lo = hi = 1.0

    return IntrinsicSeries(
        months=months,
        values=values,
        ci_low=values * lo,
        ci_high=values * hi,
        corrected=corrected,
        epoch=fund.epoch,
    )


def ratio_series(
    market_months: np.ndarray,
    market_values: np.ndarray,
    intrinsic: IntrinsicSeries,
) -> tuple[np.ndarray, np.ndarray]:
    """Market-to-intrinsic ratio on the overlap of the two date axes."""
    market_months = np.asarray(market_months, dtype=int)
    market_values = np.asarray(market_values, dtype=float)
    common, m_idx, i_idx = np.intersect1d(
        market_months, intrinsic.months, return_indices=True
    )
    if len(common) == 0:
        raise ValueError("market and intrinsic series do not overlap")
    return common, market_values[m_idx] / intrinsic.values[i_idx]


def intrinsic_return(values: np.ndarray, t: int) -> float:
    """One-step proportional change of a series at position t >= 1."""
    if t < 1:
        raise ValueError("returns need a previous value: t must be >= 1")
    values = np.asarray(values, dtype=float)
    return float((values[t] - values[t - 1]) / values[t - 1])


def returns_series(values: np.ndarray) -> np.ndarray:
    """Proportional one-step changes, with 0 at the first position."""
    values = np.asarray(values, dtype=float)
    out = np.zeros(len(values), dtype=float)
    if len(values) > 1:
        out[1:] = np.diff(values) / values[:-1]
    return out
