"""Alternating-offer bargaining over coupled demand/supply networks.

Each tick one trade executes: sides alternate moves (starting side
uniform), the mover is a uniform draw from its network, and it either
accepts the opposite side's best standing offer or concedes its own
quote by a confidence-scaled step.  Acceptance compares the utility of
the offer now against the confidence-weighted utility of one more
counteroffer; the confidence blends the mover's network position
against the opposite best offer's with the latest intrinsic-value
return.  Executed trades remove both trading agents, admit one fresh
agent per side (joining with the feedback probabilities driven by the
traded-to-intrinsic ratio, never into the first cluster), possibly
recycle each side's oldest agent, and reset the bargaining anchors to
the new best offers.

The per-move work runs over flat per-tick array snapshots (graph
structure cannot change between trades, only quotes move), compiled
with numba when available; the pure-Python fallback runs the identical
function.  A whole simulation is strictly sequential; ensembles
parallelize over runs with independent per-run streams derived from
(master seed, run index).

RNG draw order per tick: one integer for the starting side, one block
of `move_limit` uniforms for mover selection, then the growth and
reconnection draws of the executed trade in fixed order (supply adds,
demand adds, supply reconnect, demand reconnect).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .network import (
    DEMAND,
    SUPPLY,
    TradingNetwork,
    add_node_restricted,
    init_network,
    reconnect_oldest,
    remove_node,
)


@dataclass(frozen=True)
class SimulationConfig:
    """All model parameters for one simulation.

    Concession steps are the signed per-move quote adjustments
    (supply <= 0 <= demand); price steps are the signed growth-rule
    quote offsets for agents joining each side.  `steps_per_tick_limit`
    caps bargaining moves per trade (None: 10 * n_agents; at the
    standard parameter set most trades need more, so production configs
    raise it — capped ticks record no trade and carry the price).
    """

    n_agents: int = 500
    alpha: float = 0.2
    beta: float = 0.3
    gamma: float = 120.0
    p_construct: float = 0.2
    concession_supply: float = -0.005
    concession_demand: float = 0.005
    price_step_supply: float = 0.01
    price_step_demand: float = -0.01
    ticks: int = 120
    seed: int = 0
    steps_per_tick_limit: Optional[int] = None

    def __post_init__(self) -> None:
        if self.n_agents < 2:
            raise ValueError("n_agents must be >= 2")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be a probability")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not 0.0 <= self.p_construct <= 1.0:
            raise ValueError("p_construct must be a probability")
        if self.concession_supply > 0 or self.concession_demand < 0:
            raise ValueError("need concession_supply <= 0 <= concession_demand")
        if self.ticks < 0:
            raise ValueError("ticks must be nonnegative")

    @property
    def move_limit(self) -> int:
        if self.steps_per_tick_limit is not None:
            return self.steps_per_tick_limit
        return 10 * self.n_agents


def structural_probabilities(price: float, intrinsic: float, alpha: float) -> tuple[float, float]:
    """Feedback growth probabilities (supply, demand) from overpricing.

    The supply side clusters as the traded price runs above intrinsic
    value, the demand side as it runs below; both values lie in (0, 1)
    and coincide exactly at price == intrinsic.
    """
    if price <= 0 or intrinsic <= 0:
        raise ValueError("price and intrinsic value must be positive")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    ratio = price / intrinsic
    return 1.0 - math.exp(-alpha * ratio), 1.0 - math.exp(-alpha / ratio)


def confidence(
    side: str,
    n_own: int,
    n_best_opposite: int,
    intrinsic_return: float,
    gamma: float,
) -> float:
    """Probability the mover assigns to its next counteroffer trading.

    Blends the mover's neighborhood size against the opposite best
    offer's with the intrinsic return: rising intrinsic value emboldens
    sellers and cows buyers, and vice versa.  Lies in (0, 1).
    """
    if n_own < 1 or n_best_opposite < 1:
        raise ValueError("neighborhood sizes must be >= 1")
    sign = -1.0 if side == SUPPLY else 1.0
    return 1.0 / (1.0 + (n_own / n_best_opposite) * math.exp(sign * gamma * intrinsic_return))


def utility(side: str, offer: float, initial_best: float, own_price: float) -> float:
    """Linear bargaining utility of trading at `offer`.

    Normalized to 0 at the side's round-start best offer and 1 at the
    agent's own quote.  Sellers gain with higher prices, buyers with
    lower ones.
    """
    if own_price == initial_best:
        raise ValueError("degenerate utility: own price equals the round-start best")
    if side == SUPPLY:
        return (offer - initial_best) / (own_price - initial_best)
    return (initial_best - offer) / (initial_best - own_price)


def accept_or_counter(
    side: str,
    own_price: float,
    initial_best: float,
    offer: float,
    lam: float,
    concession: float,
) -> tuple[bool, float]:
    """One bargaining move: accept the standing offer or concede.

    Returns (accepted, counter_price); the counter price is the mover's
    quote shifted by the confidence-scaled concession step and is
    meaningful only when not accepted.  The acceptance rule compares
    offer-now against confidence-weighted counteroffer utility in the
    scale-free form (offer - anchor) vs lam * (counter - anchor), which
    equals the normalized-utility rule whenever the mover's quote sits
    on the far side of the anchor and extends it continuously when
    concessions have crossed the anchor.
    """
    step = concession * (1.0 - lam)
    counter = own_price * (1.0 + step)
    if side == SUPPLY:
        accepted = (offer - initial_best) >= lam * (counter - initial_best)
    else:
        accepted = (initial_best - offer) >= lam * (initial_best - counter)
    return accepted, counter


# -- per-tick bargaining kernel -----------------------------------------------


def _bargain_moves(
    uniforms,
    start_supply,
    prices_s,
    prices_d,
    degrees_s,
    degrees_d,
    ids_s,
    ids_d,
    anchor_s,
    anchor_d,
    exp_s,
    exp_d,
    concession_s,
    concession_d,
):
    """Run bargaining moves on array snapshots until one acceptance.

    Quotes are mutated in place.  Returns (accepted, moves_used,
    mover_is_supply, mover_pos, opp_best_pos, lam).  exp_s/exp_d are
    the per-tick constants e^{-gamma r} and e^{+gamma r}.
    """
    n_s = prices_s.shape[0]
    n_d = prices_d.shape[0]

    best_s = 0
    for i in range(1, n_s):
        if prices_s[i] < prices_s[best_s] or (
            prices_s[i] == prices_s[best_s] and ids_s[i] < ids_s[best_s]
        ):
            best_s = i
    best_d = 0
    for i in range(1, n_d):
        if prices_d[i] > prices_d[best_d] or (
            prices_d[i] == prices_d[best_d] and ids_d[i] < ids_d[best_d]
        ):
            best_d = i

    for m in range(uniforms.shape[0]):
        supply_moves = start_supply if (m & 1) == 0 else not start_supply
        if supply_moves:
            i = int(uniforms[m] * n_s)
            own = prices_s[i]
            # same operation order as confidence(): ratio first
            lam = 1.0 / (1.0 + (degrees_s[i] / degrees_d[best_d]) * exp_s)
            counter = own * (1.0 + concession_s * (1.0 - lam))
            offer = prices_d[best_d]
            if (offer - anchor_s) >= lam * (counter - anchor_s):
                return True, m + 1, True, i, best_d, lam
            prices_s[i] = counter
            if counter < prices_s[best_s] or (
                counter == prices_s[best_s] and ids_s[i] < ids_s[best_s]
            ):
                best_s = i
        else:
            i = int(uniforms[m] * n_d)
            own = prices_d[i]
            lam = 1.0 / (1.0 + (degrees_d[i] / degrees_s[best_s]) * exp_d)
            counter = own * (1.0 + concession_d * (1.0 - lam))
            offer = prices_s[best_s]
            if (anchor_d - offer) >= lam * (anchor_d - counter):
                return True, m + 1, False, i, best_s, lam
            prices_d[i] = counter
            if counter > prices_d[best_d] or (
                counter == prices_d[best_d] and ids_d[i] < ids_d[best_d]
            ):
                best_d = i

    return False, uniforms.shape[0], False, -1, -1, math.nan


_bargain_kernel = _bargain_moves
if not os.environ.get("TIPPINGMARKETS_PURE_PYTHON"):
    try:  # pragma: no cover - exercised via the dual-kernel test
        import numba

        _bargain_kernel = numba.njit(cache=True)(_bargain_moves)
    except ImportError:  # pragma: no cover
        pass


@dataclass
class SimulationRun:
    """Price path plus per-tick diagnostics of one simulation."""

    prices: np.ndarray
    trade_ticks: np.ndarray
    moves: np.ndarray
    accepted: np.ndarray
    lambda_trade: np.ndarray
    p_supply: np.ndarray
    p_demand: np.ndarray
    clustering_supply: np.ndarray
    clustering_demand: np.ndarray
    intrinsic: np.ndarray
    config: SimulationConfig
    aborted_ticks: int = 0

    def __post_init__(self) -> None:
        n = len(self.prices)
        for name in (
            "trade_ticks",
            "moves",
            "accepted",
            "lambda_trade",
            "p_supply",
            "p_demand",
            "clustering_supply",
            "clustering_demand",
            "intrinsic",
        ):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} does not share the tick axis")
        if n and np.any(self.prices <= 0):
            raise ValueError("trade prices must be positive")

    def __len__(self) -> int:
        return len(self.prices)

    def ratio(self) -> np.ndarray:
        """Traded-to-intrinsic price ratio per tick."""
        return self.prices / self.intrinsic

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            [
                "tick",
                "price",
                "intrinsic",
                "p_supply",
                "p_demand",
                "lambda",
                "clustering_demand",
                "clustering_supply",
                "moves",
                "accepted",
            ]
        )
        for i in range(len(self)):
            writer.writerow(
                [
                    int(self.trade_ticks[i]),
                    repr(float(self.prices[i])),
                    repr(float(self.intrinsic[i])),
                    repr(float(self.p_supply[i])),
                    repr(float(self.p_demand[i])),
                    repr(float(self.lambda_trade[i])),
                    repr(float(self.clustering_demand[i])),
                    repr(float(self.clustering_supply[i])),
                    int(self.moves[i]),
                    int(self.accepted[i]),
                ]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "config": config_to_dict(self.config),
            "aborted_ticks": self.aborted_ticks,
            "prices": self.prices.tolist(),
            "intrinsic": self.intrinsic.tolist(),
            "p_supply": self.p_supply.tolist(),
            "p_demand": self.p_demand.tolist(),
            "lambda_trade": self.lambda_trade.tolist(),
            "clustering_supply": self.clustering_supply.tolist(),
            "clustering_demand": self.clustering_demand.tolist(),
            "moves": self.moves.tolist(),
            "accepted": self.accepted.tolist(),
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def config_to_dict(cfg: SimulationConfig) -> dict:
    return {
        "n_agents": cfg.n_agents,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "gamma": cfg.gamma,
        "p_construct": cfg.p_construct,
        "concession_supply": cfg.concession_supply,
        "concession_demand": cfg.concession_demand,
        "price_step_supply": cfg.price_step_supply,
        "price_step_demand": cfg.price_step_demand,
        "ticks": cfg.ticks,
        "seed": cfg.seed,
        "steps_per_tick_limit": cfg.steps_per_tick_limit,
    }


def config_from_dict(data: dict) -> SimulationConfig:
    known = set(config_to_dict(SimulationConfig()))
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown simulation config keys: {sorted(unknown)}")
    return SimulationConfig(**data)


class MarketState:
    """Mutable state of one running simulation."""

    __slots__ = ("config", "supply", "demand", "last_price", "init_supply", "init_demand")

    def __init__(self, config: SimulationConfig, initial_intrinsic: float, rng: np.random.Generator):
        self.config = config
        self.supply = init_network(
            config.n_agents, config.p_construct, SUPPLY, initial_intrinsic, rng,
            delta=config.price_step_supply,
        )
        self.demand = init_network(
            config.n_agents, config.p_construct, DEMAND, initial_intrinsic, rng,
            delta=config.price_step_demand,
        )
        self.last_price = initial_intrinsic
        self.init_supply = self.supply.best_offer()[1]
        self.init_demand = self.demand.best_offer()[1]


@dataclass
class TickOutcome:
    price: float
    accepted: bool
    moves: int
    lam: float
    p_supply: float
    p_demand: float


def _snapshot(net: TradingNetwork):
    ids = net.node_ids
    nodes = net.nodes
    id_arr = np.array(ids, dtype=np.int64)
    prices = np.array([nodes[i].price for i in ids], dtype=np.float64)
    degrees = np.array([len(nodes[i].neighbors) for i in ids], dtype=np.int64)
    return id_arr, prices, degrees


def run_trade_cycle(
    state: MarketState,
    rng: np.random.Generator,
    intrinsic_value: float,
    intrinsic_return: float,
) -> TickOutcome:
    """Bargain until one trade executes (or the move cap aborts).

    On execution both trading agents are removed, one fresh agent joins
    each side under the feedback probabilities, each side's oldest
    agent may be recycled, and the bargaining anchors reset to the new
    best offers.  An aborted tick leaves the traded price unchanged,
    performs no turnover, and keeps all conceded quotes.
    """
    cfg = state.config
    supply, demand = state.supply, state.demand
    start_supply = bool(rng.integers(2))
    uniforms = rng.random(cfg.move_limit)

    ids_s, prices_s, degrees_s = _snapshot(supply)
    ids_d, prices_d, degrees_d = _snapshot(demand)
    tilt = cfg.gamma * intrinsic_return
    accepted, moves, mover_is_supply, mover_pos, opp_pos, lam = _bargain_kernel(
        uniforms,
        start_supply,
        prices_s,
        prices_d,
        degrees_s,
        degrees_d,
        ids_s,
        ids_d,
        state.init_supply,
        state.init_demand,
        math.exp(-tilt),
        math.exp(tilt),
        cfg.concession_supply,
        cfg.concession_demand,
    )

    nodes_s, nodes_d = supply.nodes, demand.nodes
    for pos, node_id in enumerate(ids_s):
        nodes_s[node_id].price = prices_s[pos]
    for pos, node_id in enumerate(ids_d):
        nodes_d[node_id].price = prices_d[pos]

    if not accepted:
        p_s, p_d = structural_probabilities(state.last_price, intrinsic_value, cfg.alpha)
        return TickOutcome(state.last_price, False, moves, math.nan, p_s, p_d)

    if mover_is_supply:
        trade_price = float(prices_d[opp_pos])
        remove_node(supply, int(ids_s[mover_pos]))
        remove_node(demand, int(ids_d[opp_pos]))
    else:
        trade_price = float(prices_s[opp_pos])
        remove_node(demand, int(ids_d[mover_pos]))
        remove_node(supply, int(ids_s[opp_pos]))
    p_s, p_d = structural_probabilities(trade_price, intrinsic_value, cfg.alpha)
    add_node_restricted(supply, p_s, cfg.price_step_supply, rng)
    add_node_restricted(demand, p_d, cfg.price_step_demand, rng)
    reconnect_oldest(supply, cfg.beta, p_s, cfg.price_step_supply, rng)
    reconnect_oldest(demand, cfg.beta, p_d, cfg.price_step_demand, rng)
    state.init_supply = supply.best_offer()[1]
    state.init_demand = demand.best_offer()[1]
    state.last_price = trade_price
    return TickOutcome(trade_price, True, moves, float(lam), p_s, p_d)


def simulate(
    config: SimulationConfig,
    intrinsic: Sequence[float] | np.ndarray,
    seed: Optional[int | np.random.SeedSequence] = None,
) -> SimulationRun:
    """Run `config.ticks` trades against an intrinsic-value path.

    Tick t consumes intrinsic[t] for the feedback probabilities and the
    one-step intrinsic return (0 at t=0) for agent confidence.  The
    networks start from single seeds priced at intrinsic[0].  Identical
    (config, intrinsic, seed) reproduce an identical run.
    """
    intrinsic = np.asarray(intrinsic, dtype=float)
    if config.ticks > 0 and len(intrinsic) < config.ticks:
        raise ValueError(
            f"intrinsic path has {len(intrinsic)} entries; need >= {config.ticks}"
        )
    if len(intrinsic) == 0 and config.ticks == 0:
        intrinsic = np.array([1.0])
    if np.any(intrinsic[: max(config.ticks, 1)] <= 0):
        raise ValueError("intrinsic values must be positive")

    rng = np.random.default_rng(config.seed if seed is None else seed)
    state = MarketState(config, float(intrinsic[0]), rng)

    ticks = config.ticks
    prices = np.empty(ticks)
    moves = np.empty(ticks, dtype=int)
    accepted = np.empty(ticks, dtype=bool)
    lambda_trade = np.empty(ticks)
    p_supply = np.empty(ticks)
    p_demand = np.empty(ticks)
    clustering_s = np.empty(ticks)
    clustering_d = np.empty(ticks)
    aborted = 0

    for t in range(ticks):
        value = float(intrinsic[t])
        r_i = 0.0 if t == 0 else float(intrinsic[t] / intrinsic[t - 1] - 1.0)
        outcome = run_trade_cycle(state, rng, value, r_i)
        prices[t] = outcome.price
        moves[t] = outcome.moves
        accepted[t] = outcome.accepted
        lambda_trade[t] = outcome.lam
        p_supply[t] = outcome.p_supply
        p_demand[t] = outcome.p_demand
        clustering_s[t] = state.supply.avg_clustering_fast()
        clustering_d[t] = state.demand.avg_clustering_fast()
        if not outcome.accepted:
            aborted += 1
        if len(state.supply) != config.n_agents or len(state.demand) != config.n_agents:
            raise RuntimeError("agent-count conservation violated")

    return SimulationRun(
        prices=prices,
        trade_ticks=np.arange(ticks),
        moves=moves,
        accepted=accepted,
        lambda_trade=lambda_trade,
        p_supply=p_supply,
        p_demand=p_demand,
        clustering_supply=clustering_s,
        clustering_demand=clustering_d,
        intrinsic=intrinsic[:ticks].copy(),
        config=config,
        aborted_ticks=aborted,
    )


def run_seed(master_seed: int, run_index: int) -> np.random.SeedSequence:
    """Independent, reproducible stream for run `run_index` of an ensemble."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(run_index,))


def run_ensemble(
    config: SimulationConfig,
    intrinsic: Sequence[float] | np.ndarray,
    n_runs: int,
    master_seed: Optional[int] = None,
) -> list[SimulationRun]:
    """n_runs independent simulations with per-run derived streams."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    master = config.seed if master_seed is None else master_seed
    return [
        simulate(config, intrinsic, seed=run_seed(master, k)) for k in range(n_runs)
    ]


def variance_indicator(
    run: SimulationRun | np.ndarray,
    window: int,
) -> np.ndarray:
    """Rolling scaled variance of log price, an early-warning signal.

    Entry t is the variance of log price over the `window` ticks ending
    at t, divided by the squared window mean of log price; positions
    with an incomplete window are NaN.  Rising values flag accumulating
    collective uncertainty ahead of crashes.
    """
    prices = run.prices if isinstance(run, SimulationRun) else np.asarray(run, dtype=float)
    if window < 2:
        raise ValueError("window must be >= 2")
    if window > len(prices):
        raise ValueError("window exceeds the run length")
    log_p = np.log(prices)
    out = np.full(len(prices), np.nan)
    for t in range(window - 1, len(prices)):
        seg = log_p[t - window + 1 : t + 1]
        var = float(np.var(seg))
        if var == 0.0:
            out[t] = 0.0
        else:
            out[t] = var / float(np.mean(seg)) ** 2
    return out
