"""Minmax price bounds by backward induction, plus a brute-force oracle.

The upper bound of a claim Z is the cheapest initial capital from which some
admissible strategy ends above Z on every trajectory; the lower bound is
``-upper(-Z)``.  On a finite prefix tree with holdings chosen independently
per node the global problem splits into one-step problems

    min over h of  max_j (v_j - h * d_j)

where d_j are the price moves to the children and v_j their values.  Without
constraints that minimum is the upper concave envelope of the points
(d_j, v_j) evaluated at 0, which this module computes exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    BudgetExceeded,
    EmptyInput,
    InputError,
    LengthMismatch,
    UnboundedPayoff,
)
from .market import Market, Portfolio, PortfolioConstraint, horizon_gains
from .tree import Path, StoppingTime, TrajectoryTree, children_deltas

__all__ = [
    "Payoff",
    "LocalMinmaxResult",
    "PriceBounds",
    "AttainabilityReport",
    "MertonReport",
    "MinmaxCertificate",
    "solve_local_minmax",
    "price_bounds",
    "brute_force_bounds",
    "merton_check",
    "classify_payoff_minmax",
    "check_attainability",
    "format_bound",
]

INF = math.inf
_UNCONSTRAINED = PortfolioConstraint()


# payoffs

def _price_at(tree: TrajectoryTree, path: Path, tau: StoppingTime | None) -> float:
    if tau is None:
        return float(tree.price[path[-1]])
    return float(tree.price[path[tau.nu(tree, path) - tree.base_depth]])


def _monitored(tree: TrajectoryTree, path: Path, times: Sequence[StoppingTime] | None) -> np.ndarray:
    if times is None:
        idx = list(path[1:]) or [path[0]]
        return tree.price[idx]
    return np.array([_price_at(tree, path, t) for t in times])


class Payoff:
    """A claim paid at the end of a trajectory; may depend on the whole path.

    ``fn(tree, path)`` returns the payout for a root-to-terminal path.  The
    built-ins evaluate at the terminal node unless a stopping time is given;
    lookback and Asian claims monitor every price after the root by default.
    Payoffs can be negated, added, shifted and scaled.
    """

    def __init__(self, kind: str, fn: Callable[[TrajectoryTree, Path], float], **params):
        self.kind = kind
        self.fn = fn
        self.params = params

    def __call__(self, tree: TrajectoryTree, path: Path) -> float:
        return float(self.fn(tree, path))

    def __repr__(self) -> str:
        shown = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"Payoff({self.kind}{': ' + shown if shown else ''})"

    @classmethod
    def call(cls, K: float, at: StoppingTime | None = None) -> "Payoff":
        K = float(K)
        return cls("call", lambda t, p: max(_price_at(t, p, at) - K, 0.0), K=K, at=at)

    @classmethod
    def put(cls, K: float, at: StoppingTime | None = None) -> "Payoff":
        K = float(K)
        return cls("put", lambda t, p: max(K - _price_at(t, p, at), 0.0), K=K, at=at)

    @classmethod
    def lookback(cls, a: float = 1.0, b: float = 0.0,
                 times: Sequence[StoppingTime] | None = None) -> "Payoff":
        a, b = float(a), float(b)
        return cls("lookback", lambda t, p: a * float(_monitored(t, p, times).max()) + b,
                   a=a, b=b, times=times)

    @classmethod
    def asian(cls, times: Sequence[StoppingTime] | None = None) -> "Payoff":
        return cls("asian", lambda t, p: float(_monitored(t, p, times).mean()), times=times)

    @classmethod
    def stock_at(cls, tau: StoppingTime) -> "Payoff":
        return cls("stock_at", lambda t, p: _price_at(t, p, tau), tau=tau)

    @classmethod
    def constant(cls, c: float) -> "Payoff":
        c = float(c)
        return cls("const", lambda t, p: c, c=c)

    @classmethod
    def custom(cls, fn: Callable[[TrajectoryTree, Path], float], name: str = "custom") -> "Payoff":
        return cls("custom", fn, name=name)

    @classmethod
    def from_leaf_values(cls, values: Mapping[int, float]) -> "Payoff":
        """Payoff given directly per terminal node id."""
        vals = dict(values)
        return cls("custom", lambda t, p: vals[p[-1]], name="table")

    @classmethod
    def parse(cls, spec: str) -> "Payoff":
        """Text form used by the CLI, e.g. ``call:K=1.0`` or ``stock_at:tau=fixed:2``."""
        name, _, rest = spec.strip().partition(":")
        try:
            if name == "stock_at":
                key, _, tau = rest.partition("=")
                if key != "tau":
                    raise ValueError("expected tau=<stopping time>")
                return cls.stock_at(StoppingTime.parse(tau))
            args = {}
            for item in filter(None, rest.split(",")):
                k, _, v = item.partition("=")
                args[k.strip()] = float(v)
            if name == "call":
                return cls.call(args["K"])
            if name == "put":
                return cls.put(args["K"])
            if name == "lookback":
                return cls.lookback(args.get("a", 1.0), args.get("b", 0.0))
            if name == "asian" and not args:
                return cls.asian()
            if name == "const":
                return cls.constant(args["c"])
        except (KeyError, ValueError) as exc:
            raise InputError(f"bad payoff spec {spec!r}: {exc}") from exc
        raise InputError(f"bad payoff spec {spec!r}")

    def leaf_values(self, tree: TrajectoryTree, start: int = 0) -> tuple[list[Path], np.ndarray]:
        paths = tree.paths_through(start)
        z = np.array([self(tree, p) for p in paths], dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise UnboundedPayoff("payoff is not finite on every trajectory")
        return paths, z

    # arithmetic

    def __neg__(self) -> "Payoff":
        f = self.fn
        return Payoff("custom", lambda t, p: -f(t, p), name=f"-{self!r}")

    def __add__(self, other: "Payoff | float") -> "Payoff":
        f = self.fn
        if isinstance(other, Payoff):
            g = other.fn
            return Payoff("custom", lambda t, p: f(t, p) + g(t, p), name=f"{self!r}+{other!r}")
        c = float(other)
        return Payoff("custom", lambda t, p: f(t, p) + c, name=f"{self!r}+{c}")

    __radd__ = __add__

    def __sub__(self, other: "Payoff | float") -> "Payoff":
        return self + (-other)

    def __mul__(self, a: float) -> "Payoff":
        f, a = self.fn, float(a)
        return Payoff("custom", lambda t, p: a * f(t, p), name=f"{a}*{self!r}")

    __rmul__ = __mul__


# one-step problem

@dataclass(frozen=True)
class LocalMinmaxResult:
    value: float
    optimal_h: float | None
    active_children: tuple[int, ...]


def _envelope_at_zero(d: list[float], v: list[float]) -> float:
    """Upper concave envelope of the points (d, v) at abscissa 0.

    In one dimension a point of the convex hull is a mix of at most two
    points, so the envelope is the best chord straddling 0.
    """
    best = -INF
    left, right = [], []
    for dj, vj in zip(d, v):
        if dj < 0:
            left.append((dj, vj))
        elif dj > 0:
            right.append((dj, vj))
        elif vj > best:
            best = vj
    for dl, vl in left:
        for dr, vr in right:
            c = (vl * dr - vr * dl) / (dr - dl)
            if c > best:
                best = c
    return best


def _optimal_range(d: list[float], v: list[float], value: float) -> tuple[float, float]:
    """All h with max_j (v_j - h d_j) <= value, as an interval."""
    a, b = -INF, INF
    for dj, vj in zip(d, v):
        if dj > 0:
            a = max(a, (vj - value) / dj)
        elif dj < 0:
            b = min(b, (vj - value) / dj)
    if a > b:  # rounding
        a = b = 0.5 * (a + b)
    return a, b


def _smallest(a: float, b: float) -> float:
    if a <= 0.0 <= b:
        return 0.0
    return a if a > 0 else b


def _objective(d: list[float], v: list[float], h: float) -> float:
    return max(vj - h * dj for dj, vj in zip(d, v))


def solve_local_minmax(deltas: Sequence[float], values: Sequence[float],
                       constraint: PortfolioConstraint | None = None) -> LocalMinmaxResult:
    """Minimize ``max_j (values[j] - h * deltas[j])`` over admissible ``h``.

    Among minimizers the smallest ``|h|`` is returned, then the smaller ``h``.
    Children whose value is ``-inf`` never attain the max and are ignored.
    """
    if len(deltas) != len(values):
        raise LengthMismatch(f"{len(deltas)} deltas but {len(values)} values")
    if len(deltas) == 0:
        raise EmptyInput("no children")
    c = constraint or _UNCONSTRAINED
    keep = [j for j, x in enumerate(values) if x != -INF]
    if any(values[j] == INF for j in keep):
        return LocalMinmaxResult(INF, 0.0, tuple(j for j in keep if values[j] == INF))
    if not keep:
        return LocalMinmaxResult(-INF, None, ())
    d = [float(deltas[j]) for j in keep]
    v = [float(values[j]) for j in keep]

    if c.kind == "grid":
        grid = c.grid_values()
        D, Vv = np.asarray(d), np.asarray(v)
        f = (Vv[None, :] - grid[:, None] * D[None, :]).max(axis=1)
        best = f.min()
        tol = 1e-12 * max(1.0, abs(best))
        cands = grid[f <= best + tol]
        h = float(min(cands, key=lambda x: (abs(x), x)))
        value = float(f[np.flatnonzero(grid == h)[0]])
    else:
        value = _envelope_at_zero(d, v)
        if value > -INF:
            a, b = _optimal_range(d, v, value)
        if c.kind == "unconstrained":
            if value == -INF:
                return LocalMinmaxResult(-INF, None, ())
            h = _smallest(a, b)
        else:
            lo, hi = c.lo, c.hi
            if value > -INF and max(a, lo) <= min(b, hi):
                h = _smallest(max(a, lo), min(b, hi))
            else:
                # minimizers lie outside: the convex objective is best at the nearer end
                rising = min(d) < 0 if value == -INF else b < lo
                h = lo if rising else hi
                if not math.isfinite(h):
                    return LocalMinmaxResult(-INF, None, ())
                value = _objective(d, v, h)
    tol = 1e-12 * max(1.0, abs(value))
    active = tuple(keep[i] for i in range(len(d)) if v[i] - h * d[i] >= value - tol)
    return LocalMinmaxResult(float(value), float(h), active)


# backward induction

def _format_inf(x: float) -> float | str:
    if x == INF:
        return "+inf"
    if x == -INF:
        return "-inf"
    return float(x)


format_bound = _format_inf


@dataclass(frozen=True)
class PriceBounds:
    """Lower and upper minmax values of a claim at ``anchor``.

    ``upper_hedge`` started with capital ``upper`` ends at or above the claim
    on every trajectory through the anchor; ``lower_hedge`` started with
    ``lower`` ends at or below it.  ``tolerance`` is set by the brute-force
    oracle: its grid resolution bound.
    """

    lower: float
    upper: float
    upper_hedge: Portfolio
    lower_hedge: Portfolio
    anchor: int = 0
    depth: int = 0
    tolerance: float | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    def to_dict(self) -> dict:
        out = {"lower": _format_inf(self.lower), "upper": _format_inf(self.upper),
               "anchor": self.anchor, "depth": self.depth}
        if self.tolerance is not None:
            out["tolerance"] = self.tolerance
        return out


def _backward(market: Market, anchor: int, z: Mapping[int, float]) -> tuple[float, dict[int, float]]:
    """Upper minmax value at ``anchor`` for terminal payouts ``z``, and its hedge."""
    tree = market.tree
    res = market.horizon.resolve(tree)
    nodes = tree.subtree(anchor)
    val: dict[int, float] = {}
    top: dict[int, float] = {}
    hedge: dict[int, float] = {}
    constraint = market.constraint
    for v in reversed(nodes):
        kids = tree.children[v]
        if not kids:
            val[v] = top[v] = z[v]
            continue
        top[v] = max(top[c] for c in kids)
        if res[v] >= 0:
            # trading has stopped: the seller must cover the worst continuation
            val[v] = top[v]
            continue
        p0 = tree.price[v]
        r = solve_local_minmax([tree.price[c] - p0 for c in kids], [val[c] for c in kids],
                               constraint)
        val[v] = r.value
        if r.optimal_h:
            hedge[v] = r.optimal_h
    return val[anchor], hedge


def price_bounds(market: Market, payoff: Payoff, anchor: int = 0) -> PriceBounds:
    """Exact conditional minmax bounds of ``payoff`` at node ``anchor``."""
    tree = market.tree
    anchor = tree.check_node(anchor)
    paths, z = payoff.leaf_values(tree, anchor)
    leaves = {p[-1]: x for p, x in zip(paths, z)}
    up, h_up = _backward(market, anchor, leaves)
    dn, h_dn = _backward(market, anchor, {k: -x for k, x in leaves.items()})
    lower = -dn
    return PriceBounds(
        lower=lower,
        upper=up,
        upper_hedge=Portfolio(h_up, up, market.horizon, market.liquidated),
        lower_hedge=Portfolio({v: -h for v, h in h_dn.items()}, lower, market.horizon,
                              market.liquidated),
        anchor=anchor,
        depth=int(tree.depth[anchor]),
    )


# brute force

def _path_delta_matrix(market: Market, anchor: int) -> tuple[list[Path], list[int], np.ndarray]:
    tree = market.tree
    trading = market.trading_mask()
    nodes = [v for v in tree.subtree(anchor) if trading[v] and not tree.is_terminal[v]]
    col = {v: i for i, v in enumerate(nodes)}
    paths = tree.paths_through(anchor)
    k = int(tree.depth[anchor]) - tree.base_depth
    A = np.zeros((len(nodes), len(paths)))
    for j, path in enumerate(paths):
        for a, b in zip(path[k:], path[k + 1:]):
            if a in col:
                A[col[a], j] = tree.price[b] - tree.price[a]
    return paths, nodes, A


def brute_force_bounds(market: Market, payoff: Payoff, h_grid: PortfolioConstraint | Sequence[float],
                       anchor: int = 0, budget: int = 5_000_000) -> PriceBounds:
    """Bounds by trying every grid strategy; an oracle for :func:`price_bounds`.

    ``h_grid`` is a grid constraint or an explicit list of holdings allowed at
    every trading node.  The returned ``tolerance`` bounds how far the exact
    value can sit below the grid value when the exact hedge ratios lie inside
    the grid's range: half the grid step times the largest total absolute
    price movement along a trajectory.
    """
    tree = market.tree
    anchor = tree.check_node(anchor)
    if isinstance(h_grid, PortfolioConstraint):
        grid = h_grid.grid_values()
    else:
        grid = np.unique(np.asarray(h_grid, dtype=np.float64))
    if grid.size == 0:
        raise EmptyInput("empty holding grid")
    paths, nodes, A = _path_delta_matrix(market, anchor)
    _, z = payoff.leaf_values(tree, anchor)
    m, f = len(grid), len(nodes)
    total = m ** f
    if total > budget:
        raise BudgetExceeded(f"{total} grid strategies exceed the budget {budget}",
                             required=total, budget=budget)
    powers = m ** np.arange(f, dtype=np.int64)
    chunk = max(1, 4_000_000 // max(1, len(paths) + f))
    best_up, arg_up = INF, None
    best_lo, arg_lo = -INF, None
    for lo in range(0, total, chunk):
        idx = np.arange(lo, min(total, lo + chunk), dtype=np.int64)
        H = grid[(idx[:, None] // powers[None, :]) % m]
        G = H @ A
        ups = (z[None, :] - G).max(axis=1)
        los = (z[None, :] + G).min(axis=1)
        i, j = int(ups.argmin()), int(los.argmax())
        if ups[i] < best_up:
            best_up, arg_up = float(ups[i]), H[i]
        if los[j] > best_lo:
            best_lo, arg_lo = float(los[j]), H[j]
    step = float(np.diff(grid).min()) if m > 1 else 0.0
    span = float(np.abs(A).sum(axis=0).max(initial=0.0))

    def as_portfolio(h: np.ndarray, v0: float, sign: float) -> Portfolio:
        hold = {v: sign * float(x) for v, x in zip(nodes, h) if x != 0.0}
        return Portfolio(hold, v0, market.horizon, market.liquidated)

    return PriceBounds(
        lower=best_lo,
        upper=best_up,
        upper_hedge=as_portfolio(arg_up, best_up, 1.0),
        lower_hedge=as_portfolio(arg_lo, best_lo, -1.0),
        anchor=anchor,
        depth=int(tree.depth[anchor]),
        tolerance=0.5 * step * span,
    )


# attainability

@dataclass(frozen=True)
class AttainabilityReport:
    """How far the optimal hedges are from replicating the claim.

    ``eps_up`` is the largest surplus of the upper hedge over the claim,
    ``eps_down`` the largest surplus of the claim over the lower hedge.
    """

    eps_up: float
    eps_down: float
    attainable: bool
    replicating_hedge: Portfolio | None
    point_price: float | None
    lower: float
    upper: float
    interval_bound_applicable: bool
    interval_bound_holds: bool | None

    def to_dict(self) -> dict:
        return {
            "lower": _format_inf(self.lower),
            "upper": _format_inf(self.upper),
            "attainable": self.attainable,
            "eps_up": self.eps_up,
            "eps_down": self.eps_down,
            "point_price": self.point_price,
            "interval_bound_applicable": self.interval_bound_applicable,
            "interval_bound_holds": self.interval_bound_holds,
        }


def check_attainability(market: Market, payoff: Payoff, anchor: int = 0,
                        bounds: PriceBounds | None = None) -> AttainabilityReport:
    tree = market.tree
    pb = bounds or price_bounds(market, payoff, anchor)
    if not pb.finite:
        raise UnboundedPayoff(f"bounds are not finite: [{pb.lower}, {pb.upper}]")
    paths, z = payoff.leaf_values(tree, pb.anchor)
    _, g_up = horizon_gains(tree, pb.upper_hedge, pb.anchor)
    _, g_dn = horizon_gains(tree, pb.lower_hedge, pb.anchor)
    scale = max(1.0, float(np.abs(z).max()))
    tol = 1e-12 * scale
    eps_up = max(0.0, float((pb.upper + g_up - z).max()))
    eps_down = max(0.0, float((z - pb.lower - g_dn).max()))
    attainable = eps_up <= tol
    applicable = market.constraint.symmetric
    holds = (pb.upper - pb.lower <= min(eps_up, eps_down) + tol) if applicable else None
    return AttainabilityReport(
        eps_up=eps_up if eps_up > tol else 0.0,
        eps_down=eps_down if eps_down > tol else 0.0,
        attainable=attainable,
        replicating_hedge=pb.upper_hedge if attainable else None,
        point_price=pb.upper if attainable else None,
        lower=pb.lower,
        upper=pb.upper,
        interval_bound_applicable=applicable,
        interval_bound_holds=holds,
    )


# static comparisons

@dataclass(frozen=True)
class MertonReport:
    """Minmax call bounds next to the static bounds (s0 - K)^+ and s0."""

    strike: float
    call_intrinsic: float
    s0: float
    lower: float
    upper: float
    zero_neutral: bool
    buy_and_hold_admissible: bool
    dominated_by_stock: bool
    lower_holds: bool
    upper_holds: bool
    constant_trajectory: bool
    lower_attained: bool

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["lower"], out["upper"] = _format_inf(self.lower), _format_inf(self.upper)
        return out


def _has_constant_trajectory(market: Market, start: int = 0) -> bool:
    tree = market.tree
    s = tree.price[start]
    for path in tree.paths_through(start):
        n = market.horizon.nu(tree, path) - tree.base_depth
        seg = tree.price[list(path[int(tree.depth[start]) - tree.base_depth:n + 1])]
        if np.all(seg == s):
            return True
    return False


def merton_check(market: Market, K: float) -> MertonReport:
    """Compare the minmax interval of a call at the horizon with (s0 - K)^+ and s0."""
    tree = market.tree
    payoff = Payoff.call(K, at=market.horizon)
    pb = price_bounds(market, payoff)
    zero = price_bounds(market, Payoff.constant(0.0))
    s0 = tree.s0
    c0 = max(s0 - K, 0.0)
    tol = 1e-12 * max(1.0, s0)
    dominated = all(payoff(tree, p) <= _price_at(tree, p, market.horizon) for p in tree.paths)
    const = _has_constant_trajectory(market)
    return MertonReport(
        strike=float(K),
        call_intrinsic=c0,
        s0=s0,
        lower=pb.lower,
        upper=pb.upper,
        zero_neutral=zero.lower == 0.0 == zero.upper,
        buy_and_hold_admissible=market.constraint.admits(1.0),
        dominated_by_stock=dominated,
        lower_holds=c0 <= pb.lower + tol,
        upper_holds=pb.upper <= s0 + tol,
        constant_trajectory=const,
        lower_attained=const and abs(pb.lower - c0) <= tol,
    )


@dataclass(frozen=True)
class MinmaxCertificate:
    """Claim that ``payoff <= sum a_i S_{nu_i} + b`` (upper) or ``>=`` (lower)."""

    direction: str
    coefficients: tuple[float, ...]
    times: tuple[StoppingTime, ...]
    b: float = 0.0
    verified: bool = False

    def __post_init__(self) -> None:
        if self.direction not in ("upper", "lower"):
            raise InputError("direction must be 'upper' or 'lower'")
        if len(self.coefficients) != len(self.times):
            raise LengthMismatch("one coefficient per stopping time")

    def bound(self, tree: TrajectoryTree, path: Path) -> float:
        return sum(a * _price_at(tree, path, t) for a, t in zip(self.coefficients, self.times)) + self.b


def classify_payoff_minmax(tree: TrajectoryTree, payoff: Payoff,
                           candidate: MinmaxCertificate) -> MinmaxCertificate:
    """Check the certificate's inequality on every trajectory of ``tree``."""
    ok = True
    for path in tree.paths:
        z, bnd = payoff(tree, path), candidate.bound(tree, path)
        tol = 1e-12 * max(1.0, abs(z), abs(bnd))
        if (z > bnd + tol) if candidate.direction == "upper" else (z < bnd - tol):
            ok = False
            break
    return replace(candidate, verified=ok)
