"""Clustered-chain trading networks.

One :class:`TradingNetwork` holds one side of the market (demand or
supply) as priced nodes with undirected adjacency.  Growth interpolates
between a price-ordered chain and a complete graph: with probability p
a newcomer copies a uniformly chosen node's neighborhood (plus that
node) and prices at the neighborhood mean; otherwise it queues one
signed price step behind the side's least aggressive quote (sellers
above the highest standing ask, buyers below the lowest standing bid),
becoming the new back of the queue.  The best offer of a side (highest
bid / lowest ask) is what the opposite side trades against.

Networks stay connected: removals that would split the graph reattach
every orphaned component by linking its best-offer node to the best
offer of the component that retains the side's overall best offer.

All stochastic operations take a numpy Generator explicitly and draw
from it in a fixed documented order, so runs replay bit-identically.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

DEMAND = "demand"
SUPPLY = "supply"

#: Default price step for queue growth, by side: sellers quote above the
#: highest standing ask, buyers below the lowest standing bid.
DEFAULT_PRICE_STEP = {SUPPLY: 0.01, DEMAND: -0.01}


class AgentNode:
    """One trading agent: a priced node with undirected adjacency."""

    __slots__ = ("id", "price", "neighbors", "birth_order", "triangles")

    def __init__(self, node_id: int, price: float, birth_order: int):
        if price <= 0:
            raise ValueError(f"price must be positive, got {price}")
        self.id = node_id
        self.price = price
        self.neighbors: set[int] = set()
        self.birth_order = birth_order
        self.triangles = 0  # triangle count through this node, kept exact

    @property
    def degree(self) -> int:
        return len(self.neighbors)

    def local_clustering(self) -> float:
        d = len(self.neighbors)
        if d < 2:
            return 0.0
        return 2.0 * self.triangles / (d * (d - 1))


class TradingNetwork:
    """One side of the coupled market.

    Single-owner mutable state: not safe for concurrent mutation.
    `first_cluster` is the seed node's closed neighborhood while the
    seed survives, and empty afterwards.
    """

    def __init__(self, side: str):
        if side not in (DEMAND, SUPPLY):
            raise ValueError(f"side must be {DEMAND!r} or {SUPPLY!r}")
        self.side = side
        self.nodes: dict[int, AgentNode] = {}
        self.seed_id: Optional[int] = None
        self._ids: list[int] = []  # dense id list for O(1) sampling
        self._pos: dict[int, int] = {}
        self._next_id = 0
        self._next_birth = 0
        self._clustering_sum = 0.0
        self.edge_count = 0

    # -- basic accessors --------------------------------------------------

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.nodes

    def __iter__(self) -> Iterator[AgentNode]:
        return iter(self.nodes.values())

    @property
    def node_ids(self) -> list[int]:
        """Ids in sampling order; do not mutate."""
        return self._ids

    @property
    def first_cluster(self) -> frozenset[int]:
        if self.seed_id is None or self.seed_id not in self.nodes:
            return frozenset()
        seed = self.nodes[self.seed_id]
        return frozenset(seed.neighbors | {seed.id})

    def degree(self, node_id: int) -> int:
        return len(self.nodes[node_id].neighbors)

    def price(self, node_id: int) -> float:
        return self.nodes[node_id].price

    def random_node(self, rng: np.random.Generator) -> int:
        """Uniform draw over surviving nodes (one rng integer)."""
        if not self._ids:
            raise ValueError("network is empty")
        return self._ids[int(rng.integers(len(self._ids)))]

    # -- price-extreme queries ---------------------------------------------

    def best_offer(self) -> tuple[int, float]:
        """Node holding the side's best offer.

        Highest price on the demand side (best bid), lowest on the
        supply side (best ask); ties break toward the lowest id.
        """
        if not self.nodes:
            raise ValueError("network is empty")
        if self.side == DEMAND:
            node = min(self.nodes.values(), key=lambda n: (-n.price, n.id))
        else:
            node = min(self.nodes.values(), key=lambda n: (n.price, n.id))
        return node.id, node.price

    def tail_node(self) -> tuple[int, float]:
        """Node holding the side's least aggressive quote.

        Lowest bid on the demand side, highest ask on the supply side:
        the back of the queue behind which newcomers post.  Ties break
        toward the lowest id.
        """
        if not self.nodes:
            raise ValueError("network is empty")
        if self.side == DEMAND:
            node = min(self.nodes.values(), key=lambda n: (n.price, n.id))
        else:
            node = min(self.nodes.values(), key=lambda n: (-n.price, n.id))
        return node.id, node.price

    def oldest_node(self) -> int:
        """Surviving node with the minimum birth order."""
        if not self.nodes:
            raise ValueError("network is empty")
        return min(self.nodes.values(), key=lambda n: n.birth_order).id

    # -- mutation internals --------------------------------------------------

    def set_price(self, node_id: int, price: float) -> None:
        if price <= 0:
            raise ValueError(f"price must be positive, got {price}")
        self.nodes[node_id].price = price

    def _insert_node(self, price: float) -> AgentNode:
        node = AgentNode(self._next_id, price, self._next_birth)
        self._next_id += 1
        self._next_birth += 1
        self.nodes[node.id] = node
        self._pos[node.id] = len(self._ids)
        self._ids.append(node.id)
        return node

    def _add_edge(self, a: int, b: int) -> None:
        na, nb = self.nodes[a], self.nodes[b]
        if a == b or b in na.neighbors:
            return
        common = na.neighbors & nb.neighbors
        touched = [na, nb, *(self.nodes[c] for c in common)]
        old = [t.local_clustering() for t in touched]
        na.neighbors.add(b)
        nb.neighbors.add(a)
        self.edge_count += 1
        k = len(common)
        na.triangles += k
        nb.triangles += k
        for c in common:
            self.nodes[c].triangles += 1
        for t, o in zip(touched, old):
            self._clustering_sum += t.local_clustering() - o

    def _remove_edge(self, a: int, b: int) -> None:
        na, nb = self.nodes[a], self.nodes[b]
        common = na.neighbors & nb.neighbors
        touched = [na, nb, *(self.nodes[c] for c in common)]
        old = [t.local_clustering() for t in touched]
        na.neighbors.discard(b)
        nb.neighbors.discard(a)
        self.edge_count -= 1
        k = len(common)
        na.triangles -= k
        nb.triangles -= k
        for c in common:
            self.nodes[c].triangles -= 1
        for t, o in zip(touched, old):
            self._clustering_sum += t.local_clustering() - o

    def _attach_to_all(self, price: float) -> AgentNode:
        """Insert a node adjacent to every existing node.

        Equivalent to repeated `_add_edge` but O(n): the newcomer gains
        one triangle per existing edge, and each existing node gains
        one triangle per prior neighbor.
        """
        existing = list(self.nodes.values())
        node = self._insert_node(price)
        node.triangles = self.edge_count
        node.neighbors.update(n.id for n in existing)
        for other in existing:
            other.triangles += len(other.neighbors)
            other.neighbors.add(node.id)
        self.edge_count += len(existing)
        self._clustering_sum = sum(n.local_clustering() for n in self.nodes.values())
        return node

    def _pop_node(self, node_id: int) -> AgentNode:
        node = self.nodes[node_id]
        for nb in list(node.neighbors):
            self._remove_edge(node_id, nb)
        del self.nodes[node_id]
        pos = self._pos.pop(node_id)
        last = self._ids.pop()
        if last != node_id:
            self._ids[pos] = last
            self._pos[last] = pos
        return node

    # -- diagnostics --------------------------------------------------------

    def avg_clustering(self) -> float:
        """Mean local clustering coefficient (degree<2 contributes 0).

        Recomputed exactly from the maintained triangle counts.
        """
        if not self.nodes:
            raise ValueError("network is empty")
        return sum(n.local_clustering() for n in self.nodes.values()) / len(self.nodes)

    def avg_clustering_fast(self) -> float:
        """O(1) running value of :meth:`avg_clustering` (float drift only)."""
        if not self.nodes:
            raise ValueError("network is empty")
        return self._clustering_sum / len(self.nodes)

    def edges(self) -> list[tuple[int, int]]:
        return sorted(
            (min(n.id, nb), max(n.id, nb))
            for n in self.nodes.values()
            for nb in n.neighbors
            if n.id < nb
        )

    def to_csv(self) -> str:
        """Edge list plus node prices, for inspection."""
        lines = ["type,a,b,price,birth_order"]
        for node in sorted(self.nodes.values(), key=lambda n: n.id):
            lines.append(f"node,{node.id},,{node.price!r},{node.birth_order}")
        for a, b in self.edges():
            lines.append(f"edge,{a},{b},,")
        return "\n".join(lines) + "\n"


def extreme_offer(net: TradingNetwork) -> tuple[int, float, int]:
    """Best-offer node of a side: (id, price, neighborhood size).

    Highest-price node for a demand network, lowest-price for supply;
    ties break toward the lowest id.
    """
    node_id, price = net.best_offer()
    return node_id, price, net.degree(node_id)


def avg_clustering(net: TradingNetwork) -> float:
    """Mean local clustering coefficient of a side."""
    return net.avg_clustering()


def _attach_copycat(net: TradingNetwork, anchor_id: int, exclude: frozenset[int]) -> int:
    """Join by copying an anchor's closed neighborhood (minus exclusions).

    The newcomer links to the anchor and the anchor's neighbors and
    prices at the arithmetic mean of the nodes it actually linked to.
    """
    anchor = net.nodes[anchor_id]
    targets = [anchor_id] + [nb for nb in anchor.neighbors if nb not in exclude]
    price = sum(net.nodes[t].price for t in targets) / len(targets)
    if len(targets) == len(net):
        return net._attach_to_all(price).id
    node = net._insert_node(price)
    for t in targets:
        net._add_edge(node.id, t)
    return node.id


def _attach_queue(net: TradingNetwork, tail_id: int, delta: float) -> int:
    """Join at the back of the price queue, one signed step beyond it."""
    price = net.nodes[tail_id].price * (1.0 + delta)
    node = net._insert_node(price)
    net._add_edge(node.id, tail_id)
    return node.id


def _tail_among(net: TradingNetwork, candidates: list[int]) -> int:
    """Least aggressive quote among candidate ids (tie: lowest id)."""
    if net.side == DEMAND:
        return min(candidates, key=lambda i: (net.nodes[i].price, i))
    return min(candidates, key=lambda i: (-net.nodes[i].price, i))


def _add_node(
    net: TradingNetwork,
    p: float,
    delta: float,
    rng: np.random.Generator,
    restricted: bool,
) -> int:
    if len(net) == 0:
        raise ValueError("cannot grow an empty network; use init_network")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be a probability, got {p}")
    exclude = net.first_cluster if restricted else frozenset()
    eligible: Optional[list[int]] = None
    if exclude:
        eligible = [i for i in net._ids if i not in exclude]
        if not eligible:
            # Degenerate: everything sits in the first cluster; fall
            # back to unrestricted growth.
            exclude = frozenset()
            eligible = None

    branch_copy = rng.random() < p
    if branch_copy:
        if eligible is None:
            anchor = net.random_node(rng)
        else:
            anchor = eligible[int(rng.integers(len(eligible)))]
        return _attach_copycat(net, anchor, exclude)
    if eligible is None:
        tail, _ = net.tail_node()
    else:
        tail = _tail_among(net, eligible)
    return _attach_queue(net, tail, delta)


def add_node(net: TradingNetwork, p: float, delta: float, rng: np.random.Generator) -> int:
    """Grow the network by one agent.

    With probability p the newcomer copies a uniformly drawn node's
    closed neighborhood and prices at its mean (its degree becomes the
    anchor's prior degree plus one); otherwise it queues one `delta`
    step behind the side's least aggressive quote.  Draws one uniform
    for the branch, then one integer for the copy anchor if taken.
    """
    return _add_node(net, p, delta, rng, restricted=False)


def add_node_restricted(
    net: TradingNetwork, p: float, delta: float, rng: np.random.Generator
) -> int:
    """As :func:`add_node`, but the newcomer never links into the first
    cluster (anchor choice and inherited edges both exclude it).  If no
    node is outside the first cluster, growth falls back to the
    unrestricted rule.
    """
    return _add_node(net, p, delta, rng, restricted=True)


def init_network(
    n: int,
    p: float,
    side: str,
    initial_price: float,
    rng: np.random.Generator,
    delta: Optional[float] = None,
) -> TradingNetwork:
    """Build a fresh side of `n` agents from a single seed node.

    The seed takes `initial_price`; the remaining n-1 agents join via
    :func:`add_node` with constant `p`.  `delta` defaults to the side's
    standard price step (+1% supply, -1% demand), which makes the p=0
    limit a price-ordered path and the p=1 limit a complete graph.
    """
    if n < 1:
        raise ValueError("a network needs at least one agent")
    net = TradingNetwork(side)
    if delta is None:
        delta = DEFAULT_PRICE_STEP[side]
    seed = net._insert_node(initial_price)
    net.seed_id = seed.id
    for _ in range(n - 1):
        add_node(net, p, delta, rng)
    return net


def _component_from(net: TradingNetwork, start: int) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        current = stack.pop()
        for nb in net.nodes[current].neighbors:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return seen


def _best_in(net: TradingNetwork, ids: set[int]) -> int:
    """Best-offer node restricted to a set of ids (tie: lowest id)."""
    if net.side == DEMAND:
        return min(ids, key=lambda i: (-net.nodes[i].price, i))
    return min(ids, key=lambda i: (net.nodes[i].price, i))


def remove_node(net: TradingNetwork, node_id: int) -> None:
    """Remove an agent, keeping the side connected.

    If the removal splits the graph, every component not containing the
    side's best offer is reattached by linking its own best-offer node
    to the best-offer node of the main component.
    """
    if node_id not in net.nodes:
        raise KeyError(f"no node {node_id}")
    if len(net) == 1:
        raise ValueError("cannot remove the only node")
    ex_neighbors = set(net.nodes[node_id].neighbors)
    net._pop_node(node_id)
    if len(ex_neighbors) > 1:
        first = next(iter(ex_neighbors))
        reached = _component_from(net, first)
        missing = ex_neighbors - reached
        if missing:
            components = [reached]
            while missing:
                comp = _component_from(net, next(iter(missing)))
                components.append(comp)
                missing -= comp
            best_id, _ = net.best_offer()
            main = next(c for c in components if best_id in c)
            for comp in components:
                if comp is main:
                    continue
                net._add_edge(_best_in(net, comp), best_id)


def reconnect_oldest(
    net: TradingNetwork,
    beta: float,
    p: float,
    delta: float,
    rng: np.random.Generator,
) -> Optional[int]:
    """With probability beta, recycle the longest-surviving agent.

    The oldest node is removed and rejoins through the restricted
    growth rule (fresh id and birth order); returns the new id, or None
    when nothing fired.  Draws one uniform always, then whatever the
    growth rule draws.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be a probability, got {beta}")
    fired = rng.random() < beta
    if not fired or len(net) < 2:
        return None
    remove_node(net, net.oldest_node())
    return add_node_restricted(net, p, delta, rng)
