"""Feedback-driven bargaining-market simulator and analysis toolkit.

Generates model price paths from coupled buyer/seller networks whose
growth reacts to the traded-to-intrinsic price ratio, estimates the
intrinsic value of an index from monthly fundamentals, and extracts
hysteresis curves, tipping points, early-warning indicators,
cointegration evidence, and probabilistic loss/gain forecasts.
"""

__version__ = "0.1.0"

from .data_ingest import (
    FundamentalsSeries,
    IngestError,
    MarketRecord,
    ParsedMarket,
    deflate,
    derive_fundamentals,
    parse_shiller_csv,
)
from .econometrics import (
    ARModel,
    CointegrationResult,
    GmmFit,
    UnitRootResult,
    engle_granger,
    fit_ar,
    fit_gmm2,
    load_critical_values,
    newey_west_lrv,
    pp_test,
    simulate_ar,
    stock_watson_lags,
)
from .engine import (
    MarketState,
    SimulationConfig,
    SimulationRun,
    accept_or_counter,
    confidence,
    run_ensemble,
    run_seed,
    run_trade_cycle,
    simulate,
    structural_probabilities,
    utility,
    variance_indicator,
)
from .intrinsic import (
    IntrinsicConfig,
    IntrinsicSeries,
    PoleError,
    backdated_window_values,
    forward_correct,
    intrinsic_backdated,
    intrinsic_return,
    intrinsic_series,
    ratio_series,
    returns_series,
)
from .network import (
    AgentNode,
    TradingNetwork,
    add_node,
    add_node_restricted,
    avg_clustering,
    extreme_offer,
    init_network,
    reconnect_oldest,
    remove_node,
)
from .tipping import (
    BubbleEpisode,
    DeclineIndicator,
    ForecastResult,
    HysteresisCurve,
    TippingPointEstimate,
    bubble_episodes,
    decline_indicator,
    decline_indicator_series,
    early_warning_hits,
    forecast_pipeline,
    hysteresis_curve,
    label_branches,
    loss_and_gain,
    sp500_hysteresis,
    tipping_point,
)

__all__ = [name for name in dir() if not name.startswith("_")]
