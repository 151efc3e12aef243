"""Decline probabilities, hysteresis, tipping points, and forecasting.

The decline indicator of a price path at time t is the fraction of the
next `horizon` sampled prices strictly below the current one.  Binning
(ratio, indicator) pairs by the market-to-intrinsic ratio, separately
for phases where the smoothed ratio is rising or falling, yields the
hysteresis curve; the tipping point is the ratio where the ascending
branch jumps.  The forecast pipeline projects fundamentals forward with
autoregressions, values them, runs bargaining simulations over the
horizon, and aggregates per-path losses and gains into cumulative
distributions.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .data_ingest import FundamentalsSeries
from .econometrics import ARModel, fit_ar, simulate_ar
from .engine import SimulationConfig, run_seed, simulate, variance_indicator
from .intrinsic import (
    IntrinsicConfig,
    IntrinsicSeries,
    PoleError,
    backdated_window_values,
)


@dataclass(frozen=True)
class DeclineIndicator:
    """Forward decline fraction at one time point."""

    t: int
    value: float
    horizon: int
    dt: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError("the decline fraction lives in [0, 1]")
        if self.horizon < 1 or self.dt < 1:
            raise ValueError("horizon and dt must be >= 1")


def decline_indicator(
    prices: Sequence[float] | np.ndarray, t: int, horizon: int, dt: int = 1
) -> float:
    """Fraction of the next `horizon` sampled prices strictly below
    the price at t (samples at t + k*dt for k = 1..horizon)."""
    prices = np.asarray(prices, dtype=float)
    if horizon < 1 or dt < 1:
        raise ValueError("horizon and dt must be >= 1")
    if t < 0 or t + horizon * dt >= len(prices):
        raise ValueError("horizon extends past the end of the series")
    future = prices[t + dt : t + horizon * dt + 1 : dt]
    return float(np.count_nonzero(future < prices[t])) / horizon


def decline_indicator_series(
    prices: Sequence[float] | np.ndarray, horizon: int, dt: int = 1
) -> np.ndarray:
    """Decline indicator at every t where it is defined, NaN elsewhere."""
    prices = np.asarray(prices, dtype=float)
    out = np.full(len(prices), np.nan)
    last = len(prices) - horizon * dt - 1
    for t in range(0, last + 1):
        out[t] = decline_indicator(prices, t, horizon, dt)
    return out


def label_branches(
    ratios: Sequence[float] | np.ndarray,
    smoothing_window: int = 12,
    initial_ascending: bool = True,
) -> np.ndarray:
    """Boolean per-time labels: True on the ascending branch.

    The branch is the sign of the slope of the centered moving average
    of the ratio (window shrinks at the edges); zero slope inherits the
    previous label, and the first point takes `initial_ascending`.
    """
    r = np.asarray(ratios, dtype=float)
    n = len(r)
    if n <= smoothing_window:
        raise ValueError("series must be longer than the smoothing window")
    half_lo = (smoothing_window - 1) // 2
    half_hi = smoothing_window // 2
    values = r.tolist()
    smoothed = np.empty(n)
    for t in range(n):
        a = max(0, t - half_lo)
        b = min(n, t + half_hi + 1)
        # direct left-to-right summation: reproducible at exact-tie
        # slopes and free of long-cumsum cancellation
        smoothed[t] = sum(values[a:b]) / (b - a)

    ascending = np.empty(n, dtype=bool)
    ascending[0] = initial_ascending
    for t in range(1, n):
        slope = smoothed[t] - smoothed[t - 1]
        if slope > 0:
            ascending[t] = True
        elif slope < 0:
            ascending[t] = False
        else:
            ascending[t] = ascending[t - 1]
    return ascending


@dataclass
class HysteresisCurve:
    """Binned decline probabilities per branch.

    `p_ascending`/`p_descending` hold the mean decline indicator per
    ratio bin, NaN where the branch has fewer than `min_count` pairs.
    """

    bin_edges: np.ndarray
    p_ascending: np.ndarray
    p_descending: np.ndarray
    count_ascending: np.ndarray
    count_descending: np.ndarray
    min_count: int

    def __post_init__(self) -> None:
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        for name in ("p_ascending", "p_descending"):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            finite = arr[~np.isnan(arr)]
            if np.any((finite < 0) | (finite > 1)):
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("count_ascending", "count_descending"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=int))
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if len(self.bin_edges) != len(self.p_ascending) + 1:
            raise ValueError("bin count mismatch")

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bin_center", "p_ascending", "p_descending", "count_ascending", "count_descending"])
        centers = self.bin_centers
        for i in range(len(centers)):
            writer.writerow(
                [
                    repr(float(centers[i])),
                    repr(float(self.p_ascending[i])),
                    repr(float(self.p_descending[i])),
                    int(self.count_ascending[i]),
                    int(self.count_descending[i]),
                ]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "bin_edges": self.bin_edges.tolist(),
            "p_ascending": self.p_ascending.tolist(),
            "p_descending": self.p_descending.tolist(),
            "count_ascending": self.count_ascending.tolist(),
            "count_descending": self.count_descending.tolist(),
            "min_count": self.min_count,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def hysteresis_curve(
    ratios: Sequence[float] | np.ndarray,
    indicators: Sequence[float] | np.ndarray,
    ascending: Sequence[bool] | np.ndarray,
    bin_width: float = 0.05,
    min_count: int = 20,
) -> HysteresisCurve:
    """Bin (ratio, decline) pairs by ratio, per branch.

    Pairs with NaN indicators are dropped; bins holding fewer than
    `min_count` pairs on a branch report NaN for that branch.
    """
    r = np.asarray(ratios, dtype=float)
    ind = np.asarray(indicators, dtype=float)
    asc = np.asarray(ascending, dtype=bool)
    if not (len(r) == len(ind) == len(asc)):
        raise ValueError("ratio, indicator, and branch arrays must align")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    keep = ~np.isnan(ind) & ~np.isnan(r)
    r, ind, asc = r[keep], ind[keep], asc[keep]
    if len(r) == 0:
        raise ValueError("no usable (ratio, indicator) pairs")

    lo = math.floor(r.min() / bin_width)
    hi = math.floor(r.max() / bin_width)
    n_bins = hi - lo + 1
    idx = np.floor(r / bin_width).astype(int) - lo
    edges = (lo + np.arange(n_bins + 1)) * bin_width

    sums = np.zeros((2, n_bins))
    counts = np.zeros((2, n_bins), dtype=int)
    branch = np.where(asc, 0, 1)
    np.add.at(sums, (branch, idx), ind)
    np.add.at(counts, (branch, idx), 1)
    with np.errstate(invalid="ignore"):
        probs = np.where(counts >= min_count, sums / np.maximum(counts, 1), np.nan)

    return HysteresisCurve(
        bin_edges=edges,
        p_ascending=probs[0],
        p_descending=probs[1],
        count_ascending=counts[0],
        count_descending=counts[1],
        min_count=min_count,
    )


@dataclass(frozen=True)
class TippingPointEstimate:
    """Critical ratio extracted from one or more hysteresis curves."""

    r_c_mean: float
    r_c_std: float
    values: np.ndarray
    detection_rule: str
    skipped: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.r_c_std < 0:
            raise ValueError("r_c_std must be nonnegative")


def _extract_tipping(curve: HysteresisCurve, rule: str, threshold: float) -> Optional[float]:
    p = curve.p_ascending
    mask = ~np.isnan(p)
    if mask.sum() < 3:
        return None
    centers = curve.bin_centers[mask]
    q = p[mask]
    if rule == "max-slope":
        jumps = np.diff(q)
        j = int(np.argmax(jumps))
        return float(0.5 * (centers[j] + centers[j + 1]))
    if rule == "threshold":
        hits = np.nonzero(q >= threshold)[0]
        if len(hits) == 0:
            return None
        return float(centers[hits[0]])
    raise ValueError(f"unknown tipping rule {rule!r}")


def tipping_point(
    curves: HysteresisCurve | Sequence[HysteresisCurve],
    rule: str = "max-slope",
    threshold: float = 0.95,
) -> TippingPointEstimate:
    """Critical ratio from the ascending branch of hysteresis curves.

    rule="max-slope" takes the midpoint of the adjacent populated bin
    pair with the largest probability increase; rule="threshold" the
    smallest populated bin center whose probability reaches `threshold`.
    Applied per curve; curves without enough populated bins (fewer than
    3) or no threshold crossing are skipped.
    """
    if isinstance(curves, HysteresisCurve):
        curves = [curves]
    values = []
    skipped = 0
    for curve in curves:
        r_c = _extract_tipping(curve, rule, threshold)
        if r_c is None:
            skipped += 1
        else:
            values.append(r_c)
    if not values:
        raise ValueError("no curve had enough populated ascending bins")
    arr = np.array(values)
    return TippingPointEstimate(
        r_c_mean=float(arr.mean()),
        r_c_std=float(arr.std()),
        values=arr,
        detection_rule=rule if rule == "max-slope" else f"{rule} {threshold}",
        skipped=skipped,
    )


def sp500_hysteresis(
    market_months: np.ndarray,
    market_values: np.ndarray,
    intrinsic: IntrinsicSeries,
    horizon: int = 12,
    dt: int = 1,
    bin_width: float = 0.05,
    min_count: int = 20,
    smoothing_window: int = 12,
    episodes: Optional[Sequence[tuple[int, int]]] = None,
) -> HysteresisCurve:
    """Hysteresis curve of one empirical market series.

    Aligns the market and intrinsic series, computes the forward
    decline indicator and the branch labels on the overlap, and bins.
    `episodes` optionally restricts the pairs to [start, end] month
    windows (e.g. around known crash periods).
    """
    market_months = np.asarray(market_months, dtype=int)
    market_values = np.asarray(market_values, dtype=float)
    common, m_idx, i_idx = np.intersect1d(market_months, intrinsic.months, return_indices=True)
    if len(common) == 0:
        raise ValueError("market and intrinsic series do not overlap")
    prices = market_values[m_idx]
    ratios = prices / intrinsic.values[i_idx]

    indicators = decline_indicator_series(prices, horizon, dt)
    ascending = label_branches(ratios, smoothing_window)
    if episodes is not None:
        keep = np.zeros(len(common), dtype=bool)
        for start, end in episodes:
            keep |= (common >= start) & (common <= end)
        indicators = np.where(keep, indicators, np.nan)
    return hysteresis_curve(ratios, indicators, ascending, bin_width, min_count)


@dataclass(frozen=True)
class BubbleEpisode:
    """One overpricing episode that ended in a crash."""

    start: int
    peak: int
    crash: int


def bubble_episodes(
    prices: np.ndarray,
    ratios: np.ndarray,
    entry: float = 1.5,
    crash_drop: float = 0.2,
) -> list[BubbleEpisode]:
    """Episodes where the ratio exceeds `entry` and the price then
    falls `crash_drop` from its running episode maximum.

    Episodes without a completed crash by the end of the sample are
    discarded; a new episode requires the ratio to re-enter from below.
    """
    prices = np.asarray(prices, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    episodes: list[BubbleEpisode] = []
    n = len(prices)
    t = 0
    while t < n:
        if ratios[t] >= entry:
            start = t
            peak_price = prices[t]
            peak_t = t
            crash = None
            for u in range(t + 1, n):
                if prices[u] > peak_price:
                    peak_price = prices[u]
                    peak_t = u
                if prices[u] <= (1.0 - crash_drop) * peak_price:
                    crash = u
                    break
            if crash is None:
                break
            episodes.append(BubbleEpisode(start, peak_t, crash))
            t = crash + 1
            while t < n and ratios[t] >= entry:
                t += 1
        else:
            t += 1
    return episodes


def early_warning_hits(
    prices: np.ndarray,
    ratios: np.ndarray,
    window: int = 12,
    entry: float = 1.5,
    crash_drop: float = 0.2,
    post: int = 12,
) -> tuple[int, int]:
    """Count bubble episodes whose variance-indicator maximum lands at
    or before the crash tick.

    The indicator is inspected over [episode start, crash + post]; the
    trailing margin keeps the check falsifiable.  Returns
    (hits, total episodes).
    """
    episodes = bubble_episodes(prices, ratios, entry, crash_drop)
    if not episodes:
        return 0, 0
    indicator = variance_indicator(prices, window)
    hits = 0
    for ep in episodes:
        hi = min(ep.crash + post, len(prices) - 1)
        segment = indicator[ep.start : hi + 1]
        if np.all(np.isnan(segment)):
            continue
        peak_at = ep.start + int(np.nanargmax(segment))
        if peak_at <= ep.crash:
            hits += 1
    return hits, len(episodes)


@dataclass
class ForecastResult:
    """Loss/gain cumulative distributions over a forecast horizon."""

    loss_grid: np.ndarray
    loss_cdf: np.ndarray
    gain_grid: np.ndarray
    gain_cdf: np.ndarray
    n_runs: int
    horizon_months: int
    failed_runs: int = 0

    def __post_init__(self) -> None:
        for name in ("loss_grid", "loss_cdf", "gain_grid", "gain_cdf"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(np.diff(self.loss_cdf) < 0):
            raise ValueError("P(L < x) must be nondecreasing in x")
        if np.any(np.diff(self.gain_cdf) > 0):
            raise ValueError("P(G > x) must be nonincreasing in x")
        for name in ("loss_cdf", "gain_cdf"):
            arr = getattr(self, name)
            if np.any((arr < 0) | (arr > 1)):
                raise ValueError(f"{name} must lie in [0, 1]")

    def prob_loss_exceeding(self, level: float) -> float:
        """P(L >= level), interpolated on the stored grid."""
        return 1.0 - float(np.interp(level, self.loss_grid, self.loss_cdf))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["loss_x", "p_loss_below", "gain_x", "p_gain_above"])
        for i in range(len(self.loss_grid)):
            writer.writerow(
                [
                    repr(float(self.loss_grid[i])),
                    repr(float(self.loss_cdf[i])),
                    repr(float(self.gain_grid[i])),
                    repr(float(self.gain_cdf[i])),
                ]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "loss_grid": self.loss_grid.tolist(),
            "loss_cdf": self.loss_cdf.tolist(),
            "gain_grid": self.gain_grid.tolist(),
            "gain_cdf": self.gain_cdf.tolist(),
            "n_runs": self.n_runs,
            "failed_runs": self.failed_runs,
            "horizon_months": self.horizon_months,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def loss_and_gain(path: np.ndarray) -> tuple[float, float]:
    """Peak-to-trough loss and trough-to-peak gain of one path.

    Anchored at whichever global extreme occurs first: the loss is the
    drop from the relevant peak to the following minimum, the gain the
    rise from the relevant trough to the following maximum.
    """
    path = np.asarray(path, dtype=float)
    if len(path) < 2:
        raise ValueError("need at least two points")
    i_max = int(np.argmax(path))
    i_min = int(np.argmin(path))
    if i_max <= i_min:
        peak = path[i_max]
        j = i_max + int(np.argmin(path[i_max:]))
        loss = (peak - path[j]) / peak
        k = j + int(np.argmax(path[j:]))
        gain = (path[k] - path[j]) / path[j]
    else:
        trough = path[i_min]
        j = i_min + int(np.argmax(path[i_min:]))
        gain = (path[j] - trough) / trough
        k = j + int(np.argmin(path[j:]))
        loss = (path[j] - path[k]) / path[j]
    return float(loss), float(gain)


def forecast_pipeline(
    fund: FundamentalsSeries,
    icfg: IntrinsicConfig,
    scfg: SimulationConfig,
    horizon_months: int,
    n_runs: int,
    rng: np.random.Generator,
    earnings_max_order: int = 5,
    wacc_max_order: int = 2,
    earnings_model: Optional[ARModel] = None,
    wacc_model: Optional[ARModel] = None,
) -> ForecastResult:
    """Probabilistic loss/gain forecast over the coming months.

    Fits autoregressions to historical earnings and WACC (AIC order
    selection up to the given maxima, unless models are supplied),
    simulates fundamentals forward per run, values the simulated months
    with the trailing-window estimator, runs one bargaining simulation
    per run on the projected intrinsic path, and aggregates per-path
    losses and gains into cumulative distributions.  Runs whose
    projected fundamentals admit no positive valuation are counted in
    `failed_runs` and excluded.
    """
    if horizon_months < 2:
        raise ValueError("horizon must be at least 2 months")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    e_model = earnings_model or fit_ar(fund.real_earnings, earnings_max_order, True)
    w_model = wacc_model or fit_ar(fund.wacc, wacc_max_order, True)

    n_steps = icfg.window_years * icfg.steps_per_year
    if len(fund) < n_steps:
        raise ValueError("fundamentals span less than one valuation window")
    long_run = icfg.long_run_wacc
    if long_run is None:
        long_run = float(np.median(fund.wacc))
    fcf_factor = 1.0 - icfg.growth / icfg.roic
    hist_fcf_tail = fund.fcf[-(n_steps - 1) :] if n_steps > 1 else fund.fcf[:0]
    hist_wacc_tail = fund.wacc[-(n_steps - 1) :] if n_steps > 1 else fund.wacc[:0]
    correction = (1.0 + icfg.growth) ** icfg.window_years

    master = int(rng.integers(2**63))
    losses, gains = [], []
    failed = 0
    for k in range(n_runs):
        seq = np.random.SeedSequence(entropy=master, spawn_key=(k,))
        rng_e, rng_w, seed_sim = seq.spawn(3)
        e_path = simulate_ar(
            e_model, horizon_months, 1, np.random.default_rng(rng_e), fund.real_earnings
        )[0]
        w_path = simulate_ar(
            w_model, horizon_months, 1, np.random.default_rng(rng_w), fund.wacc
        )[0]
        ext_fcf = np.concatenate([hist_fcf_tail, e_path * fcf_factor])
        ext_wacc = np.concatenate([hist_wacc_tail, w_path])
        try:
            base = backdated_window_values(ext_fcf, ext_wacc, icfg, long_run_wacc=long_run)
        except (PoleError, ValueError):
            failed += 1
            continue
        intrinsic_path = base * correction
        if np.any(intrinsic_path <= 0) or not np.all(np.isfinite(intrinsic_path)):
            failed += 1
            continue
        sim_cfg = replace(scfg, ticks=horizon_months)
        run = simulate(sim_cfg, intrinsic_path, seed=seed_sim)
        loss, gain = loss_and_gain(run.prices)
        losses.append(loss)
        gains.append(gain)

    if not losses:
        raise ValueError("all forecast runs failed to produce a valuation")
    losses_arr = np.array(losses)
    gains_arr = np.array(gains)
    loss_grid = np.linspace(0.0, max(float(losses_arr.max()), 1e-6) * 1.01, 101)
    gain_grid = np.linspace(0.0, max(float(gains_arr.max()), 1e-6) * 1.01, 101)
    loss_cdf = (losses_arr[None, :] < loss_grid[:, None]).mean(axis=1)
    gain_cdf = (gains_arr[None, :] > gain_grid[:, None]).mean(axis=1)
    return ForecastResult(
        loss_grid=loss_grid,
        loss_cdf=loss_cdf,
        gain_grid=gain_grid,
        gain_cdf=gain_cdf,
        n_runs=len(losses),
        horizon_months=horizon_months,
        failed_runs=failed,
    )
