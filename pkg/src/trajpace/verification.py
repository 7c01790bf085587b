"""Seeded property suites over random instances, driven by ``trajpace verify``.

Each suite draws ``cases`` independent instances from ``default_rng([seed, i])``
and reports, per case, whether the property held plus enough data to
reproduce a failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analysis import (
    classify_tree,
    find_arbitrage_strategy,
    find_contrarian,
    verify_debt_limited,
)
from .errors import BudgetExceeded, InputError, TrajpaceError
from .generators import MartingaleSamplerConfig, random_tree, sample_martingale_set
from .market import (
    DebtLimitConfig,
    Market,
    Portfolio,
    PortfolioConstraint,
    horizon_gains,
)
from .pricing import Payoff, brute_force_bounds, merton_check, price_bounds
from .tree import StoppingTime, TrajectoryTree, build_tree, stopped_tree

__all__ = [
    "SUITES",
    "CaseResult",
    "SuiteReport",
    "run_suite",
    "random_stopping_time",
    "random_martingale_measure",
    "expectation",
    "fast_trend_tree",
]


@dataclass
class CaseResult:
    case: int
    passed: bool
    detail: dict = field(default_factory=dict)
    counterexample: dict | None = None

    def to_dict(self) -> dict:
        out = {"case": self.case, "passed": self.passed, **self.detail}
        if self.counterexample is not None:
            out["counterexample"] = self.counterexample
        return out


@dataclass
class SuiteReport:
    suite: str
    seed: int
    depth: int
    results: list[CaseResult]

    @property
    def passed(self) -> int:
        return sum(r.passed for r in self.results)

    @property
    def failed(self) -> int:
        return len(self.results) - self.passed

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "seed": self.seed,
            "depth": self.depth,
            "cases": len(self.results),
            "passed": self.passed,
            "failed": self.failed,
            "results": [r.to_dict() for r in self.results],
        }


def _close(a: float, b: float, tol: float = 1e-9) -> bool:
    if a == b:
        return True
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def _payoffs(K: float) -> dict[str, Payoff]:
    return {"call": Payoff.call(K), "put": Payoff.put(K), "asian": Payoff.asian(),
            "lookback": Payoff.lookback()}


def _strike(rng: np.random.Generator, s0: float = 4.0) -> float:
    return s0 + float(rng.integers(-4, 5)) / 8


def random_stopping_time(rng: np.random.Generator, tree: TrajectoryTree) -> StoppingTime:
    """A random member of the supported stopping-time families."""
    kind = int(rng.integers(0, 4))
    if kind == 0:
        return StoppingTime.fixed(int(rng.integers(0, tree.max_depth + 1)))
    if kind == 1:
        lo, hi = float(tree.price.min()), float(tree.price.max())
        return StoppingTime.hitting(float(rng.uniform(lo, hi)), above=bool(rng.integers(0, 2)))
    if kind == 2:
        return StoppingTime.at_nodes(np.flatnonzero(rng.random(tree.n_nodes) < 0.3))
    a, b = random_stopping_time(rng, tree), random_stopping_time(rng, tree)
    return StoppingTime.maximum(a, b) if rng.random() < 0.5 else StoppingTime.minimum(a, b)


def _tree_ce(tree: TrajectoryTree, **extra) -> dict:
    return {"tree": tree.to_dict(), **extra}


# suites

def _duality(rng, depth, i):
    tree = random_tree(rng, max_depth=depth, max_degree=3, kind="any")
    m = Market(tree)
    K = _strike(rng)
    bump = Payoff.from_leaf_values({int(v): float(rng.integers(0, 3)) / 4 for v in tree.terminals})
    worst = 0.0
    for name, z in _payoffs(K).items():
        pb, neg = price_bounds(m, z), price_bounds(m, -z)
        big = price_bounds(m, z + bump)
        if pb.lower != -neg.upper:
            return False, {"payoff": name}, _tree_ce(tree, K=K, payoff=name,
                                                     lower=pb.lower, neg_upper=neg.upper)
        if not (pb.upper <= big.upper and pb.lower <= big.lower):
            return False, {"payoff": name}, _tree_ce(tree, K=K, payoff=name, reason="monotonicity")
        if math.isfinite(pb.lower):
            worst = max(worst, abs(pb.lower + neg.upper))
    return True, {"max_residual": worst}, None


def _interval(rng, depth, i):
    tree = random_tree(rng, max_depth=depth, max_degree=4, kind="zero_neutral")
    m = Market(tree)
    K = _strike(rng)
    for name, z in _payoffs(K).items():
        pb = price_bounds(m, z)
        if not pb.lower <= pb.upper + 1e-12 * max(1.0, abs(pb.upper)):
            return False, {"payoff": name}, _tree_ce(tree, K=K, payoff=name,
                                                     lower=pb.lower, upper=pb.upper)
    return True, {}, None


def _grid_portfolio(rng, tree, tick=0.25, bound=2.0):
    n = int(round(bound / tick))
    return Portfolio({v: float(rng.integers(-n, n + 1)) * tick for v in range(tree.n_nodes)})


def _contrarian(rng, depth, i):
    tree = random_tree(rng, max_depth=depth, max_degree=4, kind="zero_neutral")
    p = _grid_portfolio(rng, tree)
    for eps in (1.0, 1e-3):
        r = find_contrarian(tree, p, 0, eps)
        if r is None:
            return False, {"epsilon": eps}, _tree_ce(tree, portfolio=p.to_dict(), epsilon=eps)
        steps_ok = all(g <= eps / 2 ** k for k, g in enumerate(r.step_gains))
        if not (r.achieved_gain < eps and steps_ok):
            return False, {"epsilon": eps}, _tree_ce(tree, portfolio=p.to_dict(), epsilon=eps,
                                                     result=r.to_dict())
    return True, {}, None


def _optional_sampling(rng, depth, i):
    kind = "arbitrage_free" if i % 2 == 0 else "zero_neutral"
    tree = random_tree(rng, max_depth=depth, max_degree=4, kind=kind)
    nu = random_stopping_time(rng, tree)
    st = stopped_tree(tree, nu)
    c = classify_tree(st)
    ok = c.locally_arbitrage_free if kind == "arbitrage_free" else c.locally_0_neutral
    ce = None if ok else _tree_ce(tree, stopping_time=nu.to_dict(), kind=kind)
    return ok, {"kind": kind, "stopped_nodes": st.n_nodes}, ce


def _with_constant_path(tree: TrajectoryTree) -> TrajectoryTree:
    """Add a constant trajectory unless one is already there."""
    v = 0
    while not tree.is_terminal[v]:
        flat = [c for c in tree.children[v] if tree.price[c] == tree.s0]
        if not flat:
            break
        v = flat[0]
    if tree.is_terminal[v]:
        return tree
    seqs = [[float(tree.price[u]) for u in p] for p in tree.paths]
    return build_tree(seqs + [[tree.s0] * (tree.max_depth + 1)])


def _merton(rng, depth, i):
    tree = random_tree(rng, max_depth=depth, max_degree=3, kind="zero_neutral")
    if i % 2 == 1:
        tree = _with_constant_path(tree)
    K = _strike(rng)
    r = merton_check(Market(tree), K)
    ok = r.zero_neutral and r.lower_holds and r.upper_holds
    if r.constant_trajectory:
        ok = ok and r.lower_attained
    ce = None if ok else _tree_ce(tree, K=K, report=r.to_dict())
    return ok, {"constant_trajectory": r.constant_trajectory}, ce


def random_martingale_measure(rng: np.random.Generator, tree: TrajectoryTree) -> np.ndarray:
    """Conditional child probabilities making the price a martingale.

    All weights are positive, so the measure is equivalent to any other one
    charging every branch.  Needs every inner node to be up-down or flat.
    """
    q = np.zeros(tree.n_nodes)
    q[0] = 1.0
    for v in range(tree.n_nodes):
        kids = tree.children[v]
        if not kids:
            continue
        d = np.array([tree.price[c] - tree.price[v] for c in kids])
        w = rng.uniform(0.05, 1.0, size=len(kids))
        up, down = d > 0, d < 0
        if up.any() != down.any():
            raise InputError(f"node {v} admits no martingale measure")
        if up.any():
            # rescale the falling side so the mean move is zero
            w[down] *= float((w[up] * d[up]).sum()) / float(-(w[down] * d[down]).sum())
        q[list(kids)] = w / w.sum()
    return q


def expectation(tree: TrajectoryTree, cond: np.ndarray, leaf_values: dict[int, float]) -> float:
    """Expected leaf value under conditional branch probabilities ``cond``."""
    val = np.zeros(tree.n_nodes)
    for v in reversed(range(tree.n_nodes)):
        kids = tree.children[v]
        val[v] = leaf_values[v] if not kids else sum(cond[c] * val[c] for c in kids)
    return float(val[0])


def _conditional_from_reach(tree: TrajectoryTree, reach) -> np.ndarray:
    q = np.ones(tree.n_nodes)
    for v in range(1, tree.n_nodes):
        q[v] = reach[v] / reach[tree.parent[v]]
    return q


def _martingale_sandwich(rng, depth, i):
    cfg = MartingaleSamplerConfig(model="trinomial", x0=100.0, u=float(rng.uniform(1.05, 1.3)),
                                  d=float(rng.uniform(0.75, 0.95)), p_mid=float(rng.uniform(0.1, 0.8)),
                                  T=max(1, min(depth, 5)), exhaustive=True)
    tree = sample_martingale_set(cfg)
    K = float(rng.uniform(80.0, 120.0))
    z = Payoff.call(K)
    paths, vals = z.leaf_values(tree)
    leaves = {p[-1]: x for p, x in zip(paths, vals)}
    pb = price_bounds(Market(tree), z)
    measures = [_conditional_from_reach(tree, tree.meta["q_prob"])]
    measures += [random_martingale_measure(rng, tree) for _ in range(3)]
    for q in measures:
        e = expectation(tree, q, leaves)
        tol = 1e-9 * max(1.0, abs(e))
        if not pb.lower - tol <= e <= pb.upper + tol:
            return False, {}, {"config": cfg.__dict__, "K": K, "expectation": e,
                               "lower": pb.lower, "upper": pb.upper}
    return True, {"lower": pb.lower, "upper": pb.upper}, None


def _debt_limit(rng, depth, i):
    tick, step = 0.25, 0.125
    tree = random_tree(rng, max_depth=depth, max_degree=3, kind="zero_neutral",
                       max_special=2, step=step)
    p = _grid_portfolio(rng, tree, tick)
    _, g = horizon_gains(tree, p)
    low = 0.0
    for path in tree.paths:
        h = p.holdings_along(tree, path)
        s = tree.price[list(path)]
        low = min(low, float(np.cumsum(h[:-1] * np.diff(s)).min(initial=0.0)))
    cfg = DebtLimitConfig(A=-low + 1.0, delta=tick * step, m_hat=2)
    m = Market(tree, PortfolioConstraint.grid(tick, 2.0))
    try:
        r = verify_debt_limited(m, cfg, p)
    except TrajpaceError as exc:
        return False, {"error": str(exc)}, _tree_ce(tree, portfolio=p.to_dict())
    ok = all(x <= 0 for x in r.step_gains) and bool(tree.is_terminal[r.path[-1]])
    ce = None if ok else _tree_ce(tree, portfolio=p.to_dict(), result=r.to_dict())
    return ok, {"achieved_gain": r.achieved_gain}, ce


def fast_trend_tree(rng: np.random.Generator, pairs: int = 2, step: float = 0.5) -> TrajectoryTree:
    """Locally 0-neutral tree of depth ``2 * pairs`` with one-sided trends.

    At even depths every node moves by 0 or by one signed move (an arbitrage
    node); at odd depths it moves up or down.  The zero move of each
    one-sided node thus leads to an up-down node, which is what lets a
    position held for two periods lose.
    """
    seqs = [[4.0]]
    for _ in range(pairs):
        nxt = []
        for s in seqs:
            sign = 1.0 if rng.random() < 0.5 else -1.0
            size = step * float(rng.integers(1, 3))
            for a in (0.0, sign * size):
                for b in (-step, step):
                    x = s[-1] + a
                    nxt.append(s + [x, x + b])
        seqs = nxt
    return build_tree(seqs)


def _fast_trends(rng, depth, i):
    pairs = max(1, min(2, depth // 2))
    tree = fast_trend_tree(rng, pairs)
    taus = [StoppingTime.fixed(2 * j) for j in range(pairs)]
    m = Market(tree, PortfolioConstraint.grid(1.0, 1.0), liquidated=True)
    paired = find_arbitrage_strategy(m, taus=taus)
    free = find_arbitrage_strategy(m, budget=10 ** 12)
    ok = paired is None and free is not None
    ce = None if ok else _tree_ce(tree, paired=None if paired is None else paired.to_dict())
    return ok, {"unpaired_arbitrage_found": free is not None}, ce


def _grid_for_budget(f: int, budget: int, bound: float) -> PortfolioConstraint:
    for tick in (0.125, 0.25, 0.5, 1.0):
        if (2 * int(round(bound / tick)) + 1) ** f <= budget:
            return PortfolioConstraint.grid(tick, bound)
    return PortfolioConstraint.grid(bound, bound)


def _oracle_agreement(rng, depth, i):
    tree = random_tree(rng, max_depth=depth, max_degree=2, kind="zero_neutral", stop_prob=0.3)
    z = _payoffs(_strike(rng))[["call", "put", "asian", "lookback"][i % 4]]
    f = int((~tree.is_terminal).sum())
    coarse = PortfolioConstraint.grid(0.5, 1.0)
    try:
        exact = price_bounds(Market(tree, coarse), z)
        bf = brute_force_bounds(Market(tree, coarse), z, coarse, budget=2_000_000)
    except BudgetExceeded:
        return True, {"skipped": "budget"}, None
    if not (_close(exact.upper, bf.upper, 1e-12) and _close(exact.lower, bf.lower, 1e-12)):
        return False, {}, _tree_ce(tree, constraint=coarse.to_spec(),
                                   dp=[exact.lower, exact.upper], brute=[bf.lower, bf.upper])
    grid = _grid_for_budget(f, 200_000, 2.0)
    dp = price_bounds(Market(tree), z)
    bf = brute_force_bounds(Market(tree), z, grid, budget=200_000)
    tol = bf.tolerance + 1e-12
    ok = dp.upper <= bf.upper + 1e-12 and dp.lower >= bf.lower - 1e-12
    inside = all(abs(h) <= grid.bound for h in dp.upper_hedge.holdings.values())
    if inside:
        ok = ok and bf.upper <= dp.upper + tol
    ce = None if ok else _tree_ce(tree, dp=[dp.lower, dp.upper], brute=[bf.lower, bf.upper],
                                  tolerance=bf.tolerance)
    return ok, {"gap": bf.upper - dp.upper, "tolerance": bf.tolerance}, ce


SUITES: dict[str, tuple[Callable, int]] = {
    # name: (case function, default depth)
    "duality": (_duality, 4),
    "interval": (_interval, 4),
    "contrarian": (_contrarian, 4),
    "optional-sampling": (_optional_sampling, 4),
    "merton": (_merton, 4),
    "martingale-sandwich": (_martingale_sandwich, 3),
    "debt-limit": (_debt_limit, 4),
    "fast-trends": (_fast_trends, 4),
    "oracle-agreement": (_oracle_agreement, 3),
}


def run_suite(name: str, seed: int = 0, cases: int = 100, depth: int | None = None) -> SuiteReport:
    if name not in SUITES:
        raise InputError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    if cases < 0:
        raise InputError("cases must be non-negative")
    fn, default_depth = SUITES[name]
    depth = default_depth if depth is None else int(depth)
    if depth < 1:
        raise InputError("depth must be >= 1")
    results = []
    for i in range(cases):
        rng = np.random.default_rng([seed, i])
        passed, detail, ce = fn(rng, depth, i)
        results.append(CaseResult(i, bool(passed), detail, ce))
    return SuiteReport(name, seed, depth, results)
