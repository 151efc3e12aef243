"""Shared fixtures and scripted helpers."""

from __future__ import annotations

import numpy as np
import pytest

from tippingmarkets.data_ingest import FundamentalsSeries
from tippingmarkets.dates import month_index


class ScriptedRNG:
    """Stand-in generator replaying queued draws, for forcing branches."""

    def __init__(self, uniforms=(), integers=()):
        self._uniforms = list(uniforms)
        self._integers = list(integers)

    def random(self, size=None):
        if size is None:
            return self._uniforms.pop(0)
        return np.array([self._uniforms.pop(0) for _ in range(size)])

    def integers(self, *args, **kwargs):
        return self._integers.pop(0)


@pytest.fixture
def scripted_rng():
    return ScriptedRNG


def synthetic_market_csv(months: int = 480, seed: int = 11, start_year: int = 1950) -> str:
    """Deterministic Shiller-layout CSV with plausible joint dynamics."""
    rng = np.random.default_rng(seed)
    rows = ["Date,P,D,E,CPI,GS10"]
    log_cpi = np.log(20.0) + np.cumsum(rng.normal(0.002, 0.001, months))
    log_e = np.log(5.0) + np.cumsum(rng.normal(0.004, 0.01, months))
    mult = np.zeros(months)
    for t in range(1, months):
        mult[t] = 0.99 * mult[t - 1] + rng.normal(0, 0.04)
    rate = np.clip(4.0 + np.cumsum(rng.normal(0, 0.05, months)), 0.5, 12.0)
    for t in range(months):
        year = start_year + t // 12
        month = t % 12 + 1
        e = np.exp(log_e[t])
        p = 15.0 * e * np.exp(mult[t])
        rows.append(
            f"{year}.{month:02d},{p:.4f},{0.5 * e:.4f},{e:.4f},{np.exp(log_cpi[t]):.4f},{rate[t]:.2f}"
        )
    return "\n".join(rows) + "\n"


@pytest.fixture(scope="session")
def market_csv() -> str:
    return synthetic_market_csv()


def flat_fundamentals(
    months: int = 120,
    earnings: float = 10.0,
    wacc: float = 0.07,
    growth: float = 0.017,
    roic: float = 0.07,
    start: tuple[int, int] = (2000, 1),
) -> FundamentalsSeries:
    """Constant fundamentals: handy for stationarity checks."""
    first = month_index(*start)
    e = np.full(months, earnings)
    return FundamentalsSeries(
        months=np.arange(first, first + months),
        real_price=np.full(months, 150.0),
        real_earnings=e,
        fcf=e * (1.0 - growth / roic),
        wacc=np.full(months, wacc),
        growth=growth,
        roic=roic,
    )


@pytest.fixture
def constant_fundamentals() -> FundamentalsSeries:
    return flat_fundamentals()


def noisy_fundamentals(
    months: int = 180,
    seed: int = 23,
    growth: float = 0.017,
    roic: float = 0.07,
    start: tuple[int, int] = (1990, 1),
) -> FundamentalsSeries:
    """Fluctuating fundamentals: AR-style earnings and WACC."""
    rng = np.random.default_rng(seed)
    first = month_index(*start)
    log_e = np.log(10.0) + np.cumsum(rng.normal(0.001, 0.01, months))
    e = np.exp(log_e)
    wacc = np.clip(0.07 + np.cumsum(rng.normal(0, 0.0005, months)), 0.03, 0.12)
    return FundamentalsSeries(
        months=np.arange(first, first + months),
        real_price=e * 15.0,
        real_earnings=e,
        fcf=e * (1.0 - growth / roic),
        wacc=wacc,
        growth=growth,
        roic=roic,
    )
