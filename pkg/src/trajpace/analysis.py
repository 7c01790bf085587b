"""Node classification, contrarian trajectories and arbitrage search."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import BudgetExceeded, HypothesisViolated, InputError, TerminalNode
from .market import (
    DebtLimitConfig,
    Market,
    Portfolio,
    gains_process,
    tau_sources,
)
from .tree import Path, StoppingTime, TrajectoryTree, children_deltas

__all__ = [
    "NodeClass",
    "TreeClassification",
    "ContrarianResult",
    "classify_deltas",
    "classify_node",
    "classify_tree",
    "find_contrarian",
    "detect_local_arbitrage",
    "find_arbitrage_strategy",
    "verify_debt_limited",
    "DEFAULT_SEARCH_BUDGET",
]

DEFAULT_SEARCH_BUDGET = int(os.environ.get("TRAJPACE_SEARCH_BUDGET", 2_000_000))


class NodeClass(str, Enum):
    UP_DOWN = "UpDown"
    FLAT = "Flat"
    ARBITRAGE = "ArbitrageNode"
    NOT_ZERO_NEUTRAL = "NotZeroNeutral"

    @property
    def zero_neutral(self) -> bool:
        return self is not NodeClass.NOT_ZERO_NEUTRAL

    @property
    def arbitrage_free(self) -> bool:
        return self in (NodeClass.UP_DOWN, NodeClass.FLAT)


def classify_deltas(deltas: Sequence[float]) -> NodeClass:
    lo, hi = min(deltas), max(deltas)
    if lo > 0 or hi < 0:
        return NodeClass.NOT_ZERO_NEUTRAL
    if lo < 0 < hi:
        return NodeClass.UP_DOWN
    if lo == hi == 0:
        return NodeClass.FLAT
    return NodeClass.ARBITRAGE


def classify_node(tree: TrajectoryTree, node: int) -> NodeClass:
    return classify_deltas(children_deltas(tree, node))


@dataclass(frozen=True)
class TreeClassification:
    """Per-node classes plus the aggregate flags.

    ``path_counts`` maps each terminal node to the number of arbitrage or flat
    nodes on its trajectory; ``m_hat`` is the largest of these.
    """

    classes: dict[int, NodeClass]
    counts: dict[str, int]
    path_counts: dict[int, int]
    m_hat: int
    locally_0_neutral: bool
    locally_arbitrage_free: bool

    def to_dict(self) -> dict:
        return {
            "counts": self.counts,
            "classes": {str(v): c.value for v, c in sorted(self.classes.items())},
            "m_hat": self.m_hat,
            "locally_0_neutral": self.locally_0_neutral,
            "locally_arbitrage_free": self.locally_arbitrage_free,
        }


def _special_count(tree: TrajectoryTree, classes: dict[int, NodeClass], start: int = 0) -> dict[int, int]:
    """Arbitrage+flat nodes met from ``start`` down to each terminal below it."""
    count = {start: 0}
    out = {}
    for v in tree.subtree(start):
        if tree.is_terminal[v]:
            out[v] = count[v]
            continue
        here = count[v] + (classes[v] in (NodeClass.ARBITRAGE, NodeClass.FLAT))
        for c in tree.children[v]:
            count[c] = here
    return out


def classify_tree(tree: TrajectoryTree) -> TreeClassification:
    classes = {int(v): classify_node(tree, int(v)) for v in np.flatnonzero(~tree.is_terminal)}
    counts = {c.value: 0 for c in NodeClass}
    for c in classes.values():
        counts[c.value] += 1
    path_counts = _special_count(tree, classes)
    return TreeClassification(
        classes,
        counts,
        path_counts,
        max(path_counts.values()),
        counts[NodeClass.NOT_ZERO_NEUTRAL.value] == 0,
        counts[NodeClass.NOT_ZERO_NEUTRAL.value] == counts[NodeClass.ARBITRAGE.value] == 0,
    )


@dataclass(frozen=True)
class ContrarianResult:
    """A trajectory along which a portfolio gains little from ``start_depth`` on.

    ``step_gains[i]`` is the gain of the i-th trading step after the start
    node; ``achieved_gain`` is their sum.
    """

    path: Path
    epsilon: float
    achieved_gain: float
    start_depth: int
    step_gains: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "path": list(self.path),
            "epsilon": self.epsilon,
            "achieved_gain": self.achieved_gain,
            "start_depth": self.start_depth,
            "step_gains": list(self.step_gains),
        }


def _stopping_horizon(p: Portfolio) -> StoppingTime:
    if not isinstance(p.horizon, StoppingTime):
        raise InputError("this analysis needs a portfolio whose horizon is a stopping time")
    return p.horizon


def _step_products(tree: TrajectoryTree, p: Portfolio, v: int, trading: np.ndarray) -> np.ndarray:
    if not trading[v]:
        return np.zeros(len(tree.children[v]))
    return p.holding(v) * children_deltas(tree, v)


def _min_gain_path(tree: TrajectoryTree, p: Portfolio, start: int,
                   trading: np.ndarray) -> tuple[float, list[int]]:
    """Exact minimum of the remaining gain over all paths below ``start``."""
    nodes = tree.subtree(start)
    best: dict[int, tuple[float, int]] = {}
    for v in reversed(nodes):
        if tree.is_terminal[v]:
            best[v] = (0.0, -1)
            continue
        prods = _step_products(tree, p, v, trading)
        vals = [prods[i] + best[c][0] for i, c in enumerate(tree.children[v])]
        i = int(np.argmin(vals))
        best[v] = (float(vals[i]), i)
    chosen = []
    v = start
    while best[v][1] >= 0:
        chosen.append(best[v][1])
        v = tree.children[v][best[v][1]]
    return best[start][0], chosen


def _walk(tree: TrajectoryTree, p: Portfolio, start: int, choices: list[int],
          trading: np.ndarray) -> tuple[Path, list[float]]:
    path = list(tree.path_to(start))
    steps = []
    v = start
    for i in choices:
        if trading[v]:
            steps.append(float(p.holding(v) * (tree.price[tree.children[v][i]] - tree.price[v])))
        v = tree.children[v][i]
        path.append(v)
    return tuple(path), steps


def find_contrarian(tree: TrajectoryTree, p: Portfolio, start: int,
                    epsilon: float) -> ContrarianResult | None:
    """Trajectory through ``start`` on which ``p`` gains less than ``epsilon``.

    Greedy descent: at every node take the child with the smallest one-step
    gain (lowest index on ties).  On locally 0-neutral trees each step gains
    at most 0.  If greedy fails, the exact minimum over the subtree is tried
    before giving up with ``None``.  With ``epsilon == 0`` a gain of exactly 0
    is accepted.
    """
    start = tree.check_node(start)
    if not epsilon >= 0:
        raise InputError("epsilon must be non-negative")
    trading = _stopping_horizon(p).trading_mask(tree)
    k = int(tree.depth[start])

    def ok(steps: list[float]) -> bool:
        total = sum(steps)
        if epsilon == 0:
            return total <= 0 and all(g <= 0 for g in steps)
        return total < epsilon and all(g < epsilon / 2 ** (k + i + 1) for i, g in enumerate(steps))

    choices = []
    v = start
    while not tree.is_terminal[v]:
        prods = _step_products(tree, p, v, trading)
        i = int(np.argmin(prods))
        choices.append(i)
        v = tree.children[v][i]
    path, steps = _walk(tree, p, start, choices, trading)
    if not ok(steps):
        total, choices = _min_gain_path(tree, p, start, trading)
        path, steps = _walk(tree, p, start, choices, trading)
        if not (total < epsilon or (epsilon == 0 and total <= 0)):
            return None
    return ContrarianResult(path, float(epsilon), float(sum(steps)), k, tuple(steps))


def detect_local_arbitrage(tree: TrajectoryTree, p: Portfolio) -> list[int]:
    """Trading nodes where the position cannot lose and can win over one step."""
    trading = _stopping_horizon(p).trading_mask(tree)
    out = []
    for v in np.flatnonzero(trading & ~tree.is_terminal):
        h = p.holding(int(v))
        if h == 0.0:
            continue
        prods = h * children_deltas(tree, int(v))
        if prods.min() >= 0 and prods.max() > 0:
            out.append(int(v))
    return sorted(out, key=lambda v: (int(tree.depth[v]), v))


def _one_sided_holding(market: Market, sign: int) -> float | None:
    """A non-zero admissible holding of the given sign, if any."""
    c = market.constraint
    if c.kind == "unconstrained":
        return float(sign)
    if c.kind == "interval":
        lim = c.hi if sign > 0 else -c.lo
        return sign * min(1.0, lim) if lim > 0 else None
    return float(sign * c.tick) if c.bound >= c.tick else None


def _local_search(market: Market) -> Portfolio | None:
    tree = market.tree
    trading = market.trading_mask() & ~tree.is_terminal
    order = sorted(np.flatnonzero(trading), key=lambda v: (int(tree.depth[v]), int(v)))
    for v in order:
        d = children_deltas(tree, int(v))
        if d.min() >= 0 and d.max() > 0:
            h = _one_sided_holding(market, +1)
        elif d.max() <= 0 and d.min() < 0:
            h = _one_sided_holding(market, -1)
        else:
            continue
        if h is not None:
            return market.portfolio({int(v): h})
    if market.constraint.kind == "unconstrained":
        # Cross-check through the price of the zero claim.
        from .pricing import Payoff, price_bounds
        pb = price_bounds(market, Payoff.constant(0.0))
        if pb.upper < 0:
            neg = {v: -h for v, h in pb.upper_hedge.holdings.items()}
            return market.portfolio(neg)
    return None


def _ordered_grid(market: Market) -> np.ndarray:
    g = market.constraint.grid_values()
    return np.array(sorted(g, key=lambda h: (abs(h), h)))


def _enumerate_search(market: Market, budget: int,
                      taus: Sequence[StoppingTime] | None) -> Portfolio | None:
    tree = market.tree
    trading = market.trading_mask() & ~tree.is_terminal
    if taus is not None:
        src = tau_sources(tree, taus, market.horizon)
    else:
        src = np.arange(tree.n_nodes)
    free = sorted({int(src[v]) for v in np.flatnonzero(trading)})
    col = {v: i for i, v in enumerate(free)}
    grid = _ordered_grid(market)
    m, f = len(grid), len(free)
    total = m ** f
    if total > budget:
        raise BudgetExceeded(f"{total} grid portfolios exceed the search budget {budget}",
                             required=total, budget=budget)
    paths = tree.paths
    A = np.zeros((f, len(paths)))
    for j, path in enumerate(paths):
        for a, b in zip(path, path[1:]):
            if trading[a]:
                A[col[int(src[a])], j] += tree.price[b] - tree.price[a]
    scale = max(1.0, float(np.abs(A).sum(axis=0).max(initial=0.0)) * float(np.abs(grid).max()))
    tol = 1e-12 * scale
    chunk = max(1, 2_000_000 // max(1, len(paths) + f))
    powers = m ** np.arange(f, dtype=np.int64)
    for lo in range(0, total, chunk):
        idx = np.arange(lo, min(total, lo + chunk), dtype=np.int64)
        digits = (idx[:, None] // powers[None, :]) % m
        H = grid[digits]
        G = H @ A
        hit = np.flatnonzero((G.min(axis=1) >= -tol) & (G.max(axis=1) > tol))
        if hit.size:
            h = H[hit[0]]
            hold = {}
            for v in np.flatnonzero(trading):
                val = float(h[col[int(src[v])]])
                if val != 0.0:
                    hold[int(v)] = val
            return Portfolio(hold, 0.0, market.horizon, market.liquidated or taus is not None)
    return None


def find_arbitrage_strategy(market: Market, budget: int | None = None, method: str = "auto",
                            taus: Sequence[StoppingTime] | None = None) -> Portfolio | None:
    """An arbitrage strategy in ``market``, or ``None`` if there is none.

    ``method="enumerate"`` tries every grid portfolio (grid constraints only)
    and raises :class:`BudgetExceeded` when there are more than ``budget``.
    ``method="local"`` looks for a single trading node where a one-sided
    position is admissible; with per-node independent holdings and a
    stopping-time horizon on a finite tree that decides existence exactly.
    ``"auto"`` enumerates for grid constraints and is local otherwise.

    With ``taus`` the search is restricted to strategies that only rebalance
    at those stopping times (see :func:`fast_trend_transform`); that family is
    not node-independent, so it is always enumerated.
    """
    budget = DEFAULT_SEARCH_BUDGET if budget is None else int(budget)
    if method == "auto":
        method = "enumerate" if (market.constraint.kind == "grid" or taus is not None) else "local"
    if method == "enumerate":
        if market.constraint.kind != "grid":
            raise InputError("enumeration needs a grid constraint")
        return _enumerate_search(market, budget, taus)
    if method == "local":
        if taus is not None:
            raise InputError("restricted strategy families must be enumerated")
        return _local_search(market)
    raise InputError(f"unknown search method {method!r}")


def verify_debt_limited(market: Market, cfg: DebtLimitConfig, p: Portfolio,
                        start: int = 0) -> ContrarianResult:
    """Check the credit-limit hypotheses and build a non-gaining trajectory.

    The hypotheses: every node below ``start`` is 0-neutral, no trajectory
    crosses more than ``cfg.m_hat`` arbitrage or flat nodes below ``start``,
    the portfolio value never drops below ``-cfg.A`` before the horizon, and
    every non-zero one-step gain has magnitude at least ``cfg.delta``.  The
    trajectory follows a zero move at arbitrage and flat nodes and a move
    losing at least ``cfg.delta`` at up-down nodes, so each step gains <= 0.
    """
    tree = market.tree
    start = tree.check_node(start)
    trading = _stopping_horizon(p).trading_mask(tree)
    k = int(tree.depth[start])
    classes = {}
    for v in tree.subtree(start):
        if tree.is_terminal[v]:
            continue
        classes[v] = classify_node(tree, v)
        if not classes[v].zero_neutral:
            raise HypothesisViolated("zero_neutral", f"node {v} is not 0-neutral", node=v)
    counts = _special_count(tree, classes, start)
    for leaf, n in counts.items():
        if n > cfg.m_hat:
            raise HypothesisViolated("m_hat", f"{n} arbitrage/flat nodes on the path to {leaf}",
                                     path=tree.path_to(leaf))
    for path in tree.paths_through(start):
        n = p.horizon_depth(tree, path)
        for d in range(tree.base_depth, n + 1):
            val = p.v0 + gains_process(tree, p, path, tree.base_depth, d)
            if val < -cfg.A - 1e-12 * max(1.0, cfg.A):
                raise HypothesisViolated("credit", f"value {val} < -{cfg.A} at depth {d}",
                                         path=path[:d - tree.base_depth + 1])
    tol = 1e-12 * max(1.0, cfg.delta)
    for v in classes:
        if not trading[v]:
            continue
        for g in p.holding(v) * children_deltas(tree, v):
            if g != 0.0 and abs(g) < cfg.delta - tol:
                raise HypothesisViolated("discreteness", f"gain {g} at node {v} below {cfg.delta}",
                                         node=v)
    choices = []
    v = start
    while not tree.is_terminal[v]:
        h = p.holding(v) if trading[v] else 0.0
        d = children_deltas(tree, v)
        if h == 0.0:
            i = 0
        elif classes[v] is NodeClass.UP_DOWN:
            i = int(np.flatnonzero(h * d <= -cfg.delta + tol)[0])
        else:
            i = int(np.flatnonzero(d == 0)[0])
        choices.append(i)
        v = tree.children[v][i]
    path, steps = _walk(tree, p, start, choices, trading)
    return ContrarianResult(path, 0.0, float(sum(steps)), k, tuple(steps))
