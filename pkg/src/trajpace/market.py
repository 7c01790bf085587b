"""Portfolios on a trajectory tree and the market they trade in.

Holdings are keyed by node: the value stored at node v is the stock position
held from depth(v) to depth(v)+1 by every trajectory through v.  That makes
non-anticipativity structural.  Interest is zero throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DepthOutOfRange,
    IncompatibleHorizons,
    InputError,
    InvalidConfig,
    InvalidTauSpacing,
)
from .tree import Path, StoppingTime, TrajectoryTree

__all__ = [
    "PortfolioConstraint",
    "PathHorizon",
    "Portfolio",
    "Market",
    "DebtLimitConfig",
    "gains_process",
    "horizon_gains",
    "bank_account_path",
    "portfolio_sum",
    "fast_trend_transform",
    "tau_sources",
    "satisfies_pairing",
]

_GRID_TOL = 1e-9


@dataclass(frozen=True)
class PortfolioConstraint:
    """Admissible per-node holdings: anything, a closed interval, or a tick grid.

    Every constraint must admit 0 so that the zero portfolio is always
    available.
    """

    kind: str = "unconstrained"
    lo: float = -math.inf
    hi: float = math.inf
    tick: float = 0.0
    bound: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "unconstrained":
            return
        if self.kind == "interval":
            if not (self.lo <= 0.0 <= self.hi):
                raise InvalidConfig(f"interval [{self.lo}, {self.hi}] must contain 0")
            return
        if self.kind == "grid":
            if not (self.tick > 0 and math.isfinite(self.tick)):
                raise InvalidConfig("grid tick must be positive and finite")
            if not (self.bound >= 0 and math.isfinite(self.bound)):
                raise InvalidConfig("grid bound must be non-negative and finite")
            return
        raise InvalidConfig(f"unknown constraint kind {self.kind!r}")

    @classmethod
    def unconstrained(cls) -> "PortfolioConstraint":
        return cls()

    @classmethod
    def interval(cls, lo: float, hi: float) -> "PortfolioConstraint":
        return cls("interval", lo=float(lo), hi=float(hi))

    @classmethod
    def grid(cls, tick: float, bound: float) -> "PortfolioConstraint":
        return cls("grid", tick=float(tick), bound=float(bound))

    @classmethod
    def parse(cls, spec: str) -> "PortfolioConstraint":
        """``unconstrained``, ``interval:lo,hi`` or ``grid:tick,bound``."""
        name, _, arg = spec.strip().partition(":")
        try:
            if name == "unconstrained" and not arg:
                return cls.unconstrained()
            a, b = (float(x) for x in arg.split(","))
        except ValueError as exc:
            raise InputError(f"bad constraint spec {spec!r}") from exc
        if name == "interval":
            return cls.interval(a, b)
        if name == "grid":
            return cls.grid(a, b)
        raise InputError(f"bad constraint spec {spec!r}")

    def to_spec(self) -> str:
        if self.kind == "interval":
            return f"interval:{self.lo!r},{self.hi!r}"
        if self.kind == "grid":
            return f"grid:{self.tick!r},{self.bound!r}"
        return "unconstrained"

    def grid_values(self) -> np.ndarray:
        """Admissible grid holdings in increasing order."""
        if self.kind != "grid":
            raise InputError("only grid constraints have a finite value set")
        kmax = int(math.floor(self.bound / self.tick + _GRID_TOL))
        return np.arange(-kmax, kmax + 1, dtype=np.float64) * self.tick

    def admits(self, h: float) -> bool:
        if self.kind == "unconstrained":
            return math.isfinite(h)
        if self.kind == "interval":
            return self.lo - _GRID_TOL <= h <= self.hi + _GRID_TOL
        q = h / self.tick
        return abs(h) <= self.bound + _GRID_TOL and abs(q - round(q)) <= _GRID_TOL

    @property
    def symmetric(self) -> bool:
        """Whether -h is admissible whenever h is."""
        return self.kind != "interval" or self.lo == -self.hi


@dataclass(frozen=True)
class PathHorizon:
    """Horizon given trajectory by trajectory (terminal node id -> depth).

    Unlike a :class:`StoppingTime` this may peek into the future; use
    :meth:`is_stopping_time` to find out.
    """

    depths: Mapping[int, int]

    def nu(self, tree: TrajectoryTree, path: Path) -> int:
        try:
            return int(self.depths[path[-1]])
        except KeyError as exc:
            raise InputError(f"no horizon given for terminal node {path[-1]}") from exc

    def is_stopping_time(self, tree: TrajectoryTree) -> bool:
        # Trajectories that agree up to the horizon must share it.
        for path in tree.paths:
            n = min(self.nu(tree, path), int(tree.depth[path[-1]]))
            v = path[n - tree.base_depth] if n >= tree.base_depth else path[0]
            for leaf in tree.subtree(v):
                if tree.is_terminal[leaf] and min(int(self.depths[leaf]), int(tree.depth[leaf])) != n:
                    return False
        return True


Horizon = StoppingTime | PathHorizon


def _horizon_from_dict(data: Mapping) -> Horizon:
    if data.get("kind") == "paths":
        return PathHorizon({int(k): int(v) for k, v in data["depths"].items()})
    return StoppingTime.from_dict(data)


def _horizon_to_dict(h: Horizon) -> dict:
    if isinstance(h, PathHorizon):
        return {"kind": "paths", "depths": {str(k): v for k, v in sorted(h.depths.items())}}
    return h.to_dict()


@dataclass(frozen=True)
class Portfolio:
    """Self-financing strategy: holdings per node, horizon and initial capital.

    ``holdings[v]`` is held over (depth(v), depth(v)+1]; missing nodes hold 0.
    From the horizon on a liquidated portfolio holds nothing, otherwise it
    keeps its last position.
    """

    holdings: Mapping[int, float] = field(default_factory=dict)
    v0: float = 0.0
    horizon: Horizon = field(default_factory=StoppingTime.terminal)
    liquidated: bool = False

    @classmethod
    def zero(cls) -> "Portfolio":
        return cls({}, 0.0, StoppingTime.fixed(1), False)

    @classmethod
    def constant(cls, tree: TrajectoryTree, h: float, v0: float = 0.0,
                 horizon: Horizon | None = None, liquidated: bool = False) -> "Portfolio":
        """Hold ``h`` shares at every non-terminal node."""
        hold = {int(v): float(h) for v in np.flatnonzero(~tree.is_terminal)} if h else {}
        return cls(hold, float(v0), horizon or StoppingTime.terminal(), liquidated)

    def holding(self, node: int) -> float:
        return float(self.holdings.get(node, 0.0))

    def horizon_depth(self, tree: TrajectoryTree, path: Path) -> int:
        n = self.horizon.nu(tree, path)
        return max(min(n, int(tree.depth[path[-1]])), tree.base_depth)

    def holdings_along(self, tree: TrajectoryTree, path: Path) -> np.ndarray:
        """Effective position at each node of ``path``."""
        n = self.horizon_depth(tree, path) - tree.base_depth
        raw = np.array([self.holdings.get(v, 0.0) for v in path], dtype=np.float64)
        out = raw.copy()
        if n < len(path):
            out[n:] = 0.0 if self.liquidated or n == 0 else raw[n - 1]
        return out

    def to_dict(self) -> dict:
        return {
            "v0": self.v0,
            "holdings": {str(k): float(v) for k, v in sorted(self.holdings.items()) if v != 0.0},
            "horizon": _horizon_to_dict(self.horizon),
            "liquidated": self.liquidated,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Portfolio":
        try:
            hold = {int(k): float(v) for k, v in data.get("holdings", {}).items()}
            horizon = _horizon_from_dict(data.get("horizon", {"kind": "terminal"}))
            return cls(hold, float(data.get("v0", 0.0)), horizon, bool(data.get("liquidated", False)))
        except (TypeError, ValueError, KeyError) as exc:
            raise InputError(f"malformed portfolio document: {exc}") from exc


@dataclass(frozen=True)
class DebtLimitConfig:
    """Hypotheses for the credit-limited contrarian construction.

    ``A`` bounds how far the portfolio value may fall below zero, ``delta`` is
    the smallest non-zero one-step gain magnitude and ``m_hat`` caps how many
    arbitrage or flat nodes a single trajectory may cross.
    """

    A: float
    delta: float
    m_hat: int

    def __post_init__(self) -> None:
        if not self.A >= 0:
            raise InvalidConfig("credit limit A must be non-negative")
        if not self.delta > 0:
            raise InvalidConfig("delta must be positive")
        if int(self.m_hat) != self.m_hat or self.m_hat < 0:
            raise InvalidConfig("m_hat must be a non-negative integer")


@dataclass(frozen=True)
class Market:
    """A tree plus the rules portfolios must follow in it."""

    tree: TrajectoryTree
    constraint: PortfolioConstraint = field(default_factory=PortfolioConstraint)
    horizon: StoppingTime = field(default_factory=StoppingTime.terminal)
    liquidated: bool = False

    def trading_mask(self) -> np.ndarray:
        return self.horizon.trading_mask(self.tree)

    def admissible(self, p: Portfolio) -> bool:
        trading = self.trading_mask()
        return all(self.constraint.admits(h) for v, h in p.holdings.items()
                   if 0 <= v < self.tree.n_nodes and trading[v])

    def portfolio(self, holdings: Mapping[int, float], v0: float = 0.0) -> Portfolio:
        """Portfolio using this market's horizon and liquidation rule."""
        return Portfolio(dict(holdings), float(v0), self.horizon, self.liquidated)


def _check_path(tree: TrajectoryTree, path: Path) -> None:
    if not path or path[0] != 0:
        raise InputError("paths must start at the root")
    for a, b in zip(path, path[1:]):
        if tree.parent[b] != a:
            raise InputError(f"{b} is not a child of {a}")


def gains_process(tree: TrajectoryTree, p: Portfolio, path: Path, k: int, n: int) -> float:
    """Trading gains between depths ``k`` and ``n`` along ``path``."""
    base = tree.base_depth
    last = base + len(path) - 1
    if not base <= k <= n <= last:
        raise DepthOutOfRange(f"need {base} <= k <= n <= {last}, got k={k}, n={n}")
    h = p.holdings_along(tree, path)
    s = tree.price[list(path)]
    i, j = k - base, n - base
    return float(np.dot(h[i:j], np.diff(s[i:j + 1])))


def horizon_gains(tree: TrajectoryTree, p: Portfolio, start: int = 0) -> tuple[list[Path], np.ndarray]:
    """Gains from ``start`` up to the horizon, for every path through ``start``."""
    k = int(tree.depth[start])
    paths = tree.paths_through(start)
    out = np.empty(len(paths))
    for i, path in enumerate(paths):
        n = max(p.horizon_depth(tree, path), k)
        out[i] = gains_process(tree, p, path, k, n)
    return paths, out


def bank_account_path(tree: TrajectoryTree, p: Portfolio, path: Path) -> np.ndarray:
    """Cash position at each node of ``path`` implied by self-financing."""
    _check_path(tree, path)
    h = p.holdings_along(tree, path)
    s = tree.price[list(path)]
    b = np.empty(len(path))
    b[0] = p.v0 - h[0] * s[0]
    for i in range(len(path) - 1):
        b[i + 1] = b[i] + (h[i] - h[i + 1]) * s[i + 1]
    return b


def _is_stopping(tree: TrajectoryTree, h: Horizon) -> bool:
    return isinstance(h, StoppingTime) or h.is_stopping_time(tree)


def portfolio_sum(tree: TrajectoryTree, p1: Portfolio, p2: Portfolio) -> Portfolio:
    """Combined strategy running until the later of the two horizons.

    Before the earlier horizon the positions add; afterwards only the longer
    lived portfolio trades.  When both are liquidated the positions simply add.
    """
    both_liq = p1.liquidated and p2.liquidated
    if not both_liq and not (_is_stopping(tree, p1.horizon) and _is_stopping(tree, p2.horizon)):
        raise IncompatibleHorizons(
            "portfolio sum needs stopping-time horizons or two liquidated portfolios")
    base = tree.base_depth
    hold: dict[int, float] = {}
    leaf_n: dict[int, int] = {}
    for path in tree.paths:
        n1, n2 = p1.horizon_depth(tree, path), p2.horizon_depth(tree, path)
        h1, h2 = p1.holdings_along(tree, path), p2.holdings_along(tree, path)
        if both_liq:
            h = h1 + h2
        else:
            m = min(n1, n2) - base
            h = np.where(np.arange(len(path)) < m, h1 + h2, h1 if n1 >= n2 else h2)
        top = max(n1, n2)
        leaf_n[path[-1]] = top
        for i, v in enumerate(path):
            if base + i >= top:
                break
            prev = hold.get(v)
            if prev is not None and prev != h[i]:
                raise IncompatibleHorizons(f"summed holding at node {v} depends on the future")
            hold[v] = float(h[i])
    if isinstance(p1.horizon, StoppingTime) and isinstance(p2.horizon, StoppingTime):
        horizon: Horizon = StoppingTime.maximum(p1.horizon, p2.horizon)
    else:
        horizon = PathHorizon(leaf_n)
    hold = {v: h for v, h in hold.items() if h != 0.0}
    return Portfolio(hold, p1.v0 + p2.v0, horizon, both_liq)


def tau_sources(tree: TrajectoryTree, taus: Sequence[StoppingTime],
                horizon: StoppingTime) -> np.ndarray:
    """For every node, the ancestor whose holding a tau-sampled strategy copies.

    The ancestor sits at the last tau reached at or before the node.  Raises
    :class:`InvalidTauSpacing` unless tau starts at the root, never decreases
    and every step, including the final one up to the horizon, spans at least
    two periods.  A tau reached only at a terminal node counts as never
    reached.
    """
    if not taus:
        raise InvalidTauSpacing("need at least one stopping time (tau_0 = 0)")
    res = [t.resolve(tree) for t in taus]
    if res[0][0] != tree.depth[0]:
        raise InvalidTauSpacing("tau_0 must stop at the root")
    hres = horizon.resolve(tree)
    for leaf in tree.terminals:
        last = int(tree.depth[leaf])
        seq = [int(r[leaf]) for r in res]
        for a, b in zip(seq, seq[1:]):
            if b < a:
                raise InvalidTauSpacing(f"tau decreases on the path to node {leaf}: {seq}")
        n = min(int(hres[leaf]), last)
        if n <= tree.depth[0]:
            continue
        marks = sorted({t for t in seq if t < n and t < last}) + [n]
        for a, b in zip(marks, marks[1:]):
            if b - a < 2:
                raise InvalidTauSpacing(
                    f"tau steps {a}->{b} on the path to node {leaf} span fewer than 2 periods")
    src = np.arange(tree.n_nodes, dtype=np.int64)
    for v in range(tree.n_nodes):
        if tree.is_terminal[v]:
            continue
        reached = [int(r[v]) for r in res if r[v] >= 0]
        d = max(reached)
        u = v
        while tree.depth[u] > d:
            u = int(tree.parent[u])
        src[v] = u
    return src


def fast_trend_transform(tree: TrajectoryTree, p: Portfolio,
                         taus: Sequence[StoppingTime]) -> Portfolio:
    """Resample ``p`` so positions only change at the stopping times ``taus``.

    The result holds, at depth k, what ``p`` held at the last tau <= k, and
    is liquidated at the horizon.  Any change of position therefore persists
    for at least two periods.
    """
    if not isinstance(p.horizon, StoppingTime):
        raise IncompatibleHorizons("the transform needs a stopping-time horizon")
    src = tau_sources(tree, taus, p.horizon)
    trading = p.horizon.trading_mask(tree)
    hold = {}
    for v in np.flatnonzero(trading):
        h = p.holding(int(src[v]))
        if h != 0.0:
            hold[int(v)] = h
    return Portfolio(hold, p.v0, p.horizon, True)


def satisfies_pairing(tree: TrajectoryTree, p: Portfolio) -> bool:
    """True if every change of position is kept for at least one more period."""
    for path in tree.paths:
        h = np.concatenate([[0.0], p.holdings_along(tree, path)])
        for j in range(1, len(h) - 1):
            if h[j] != h[j - 1] and h[j + 1] != h[j]:
                return False
    return True
