from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajpace import (
    Market,
    PathHorizon,
    Payoff,
    Portfolio,
    PortfolioConstraint,
    StoppingTime,
    bank_account_path,
    build_tree,
    fast_trend_transform,
    gains_process,
    lattice_tree,
    portfolio_sum,
    price_bounds,
    random_tree,
    satisfies_pairing,
)
from trajpace.errors import (
    DepthOutOfRange,
    IncompatibleHorizons,
    InputError,
    InvalidConfig,
    InvalidTauSpacing,
)
from trajpace.market import horizon_gains


def _line(prices):
    t = build_tree([prices])
    return t, t.paths[0]


def test_gains_telescoping():
    t, path = _line([100.0, 110.0, 105.0])
    p = Portfolio.constant(t, 1.0)
    assert gains_process(t, p, path, 0, 2) == 5.0
    assert gains_process(t, Portfolio(), path, 0, 2) == 0.0
    with pytest.raises(DepthOutOfRange):
        gains_process(t, p, path, 1, 3)
    with pytest.raises(DepthOutOfRange):
        gains_process(t, p, path, 2, 1)


def test_binomial_replication_by_hand(binomial2):
    # hedge ratios from the replication equations, worked out by hand
    up, down = binomial2.children[0]
    p = Portfolio({0: 22 / 40, up: 44 / 48}, v0=11.0)
    for path in binomial2.paths:
        z = max(binomial2.price[path[-1]] - 100.0, 0.0)
        assert p.v0 + gains_process(binomial2, p, path, 0, 2) == pytest.approx(z, abs=1e-12)


def test_bank_account_examples(binomial2):
    t, path = _line([1.0, 1.2, 0.7])
    assert list(bank_account_path(t, Portfolio(), path)) == [0.0, 0.0, 0.0]
    b = bank_account_path(t, Portfolio.constant(t, 1.0, v0=1.0, liquidated=False), path)
    assert list(b) == [0.0, 0.0, 0.0]
    pb = price_bounds(Market(binomial2), Payoff.call(100.0))
    hedge = pb.upper_hedge
    for path in binomial2.paths:
        b = bank_account_path(binomial2, hedge, path)
        h = hedge.holdings_along(binomial2, path)
        s = binomial2.price[list(path)]
        for i in range(len(path)):
            assert b[i] + h[i] * s[i] == pytest.approx(hedge.v0 + gains_process(binomial2, hedge, path, 0, i),
                                                       abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.booleans(), st.sampled_from(["terminal", "fixed:1", "fixed:2", "level:4.2"]))
def test_self_financing_closure(seed, liquidated, horizon):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, max_depth=4, max_degree=3, kind="any")
    hold = {v: float(rng.integers(-3, 4)) / 4 for v in range(t.n_nodes)}
    p = Portfolio(hold, float(rng.normal()), StoppingTime.parse(horizon), liquidated)
    for path in t.paths:
        b = bank_account_path(t, p, path)
        h = p.holdings_along(t, path)
        s = t.price[list(path)]
        for i in range(len(path)):
            assert b[i] + h[i] * s[i] == pytest.approx(p.v0 + gains_process(t, p, path, 0, i), abs=1e-9)


def test_holdings_after_horizon():
    t, path = _line([1.0, 2.0, 3.0, 4.0])
    hold = {0: 1.0, 1: 2.0, 2: 3.0}
    frozen = Portfolio(hold, horizon=StoppingTime.fixed(2), liquidated=False)
    liq = Portfolio(hold, horizon=StoppingTime.fixed(2), liquidated=True)
    assert list(frozen.holdings_along(t, path)) == [1.0, 2.0, 2.0, 2.0]
    assert list(liq.holdings_along(t, path)) == [1.0, 2.0, 0.0, 0.0]


def test_constraints():
    assert PortfolioConstraint.parse("unconstrained").admits(1e9)
    iv = PortfolioConstraint.parse("interval:-1,2")
    assert iv.admits(2.0) and not iv.admits(2.1) and not iv.symmetric
    g = PortfolioConstraint.parse("grid:0.25,1")
    assert list(g.grid_values()) == [-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0]
    assert g.admits(0.5) and not g.admits(0.3) and not g.admits(1.25)
    with pytest.raises(InvalidConfig):
        PortfolioConstraint.interval(0.5, 1.0)
    with pytest.raises(InputError):
        PortfolioConstraint.parse("grid:1")
    assert PortfolioConstraint.parse(g.to_spec()) == g


def test_portfolio_json_round_trip():
    p = Portfolio({0: 1.5, 3: -2.0}, 0.25, StoppingTime.at_nodes([1, 2]), True)
    again = Portfolio.from_dict(json.loads(json.dumps(p.to_dict())))
    assert again.to_dict() == p.to_dict()
    assert again.holdings == {0: 1.5, 3: -2.0}


def test_sum_with_zero_is_identity(binomial2):
    p = Portfolio({0: 0.5, 1: -1.0}, 2.0, StoppingTime.terminal())
    s = portfolio_sum(binomial2, p, Portfolio.zero())
    assert s.holdings == p.holdings and s.v0 == p.v0
    for path in binomial2.paths:
        assert s.horizon_depth(binomial2, path) == 2


def test_sum_horizon_is_max():
    t = lattice_tree(1.0, [1.1, 0.9], 3)
    s = portfolio_sum(t, Portfolio({0: 1.0}, horizon=StoppingTime.fixed(2)),
                      Portfolio({0: 1.0}, horizon=StoppingTime.fixed(3)))
    assert all(s.horizon_depth(t, p) == 3 for p in t.paths)


def test_sum_requires_compatible_horizons(binomial2):
    up = binomial2.children[0][0]
    # peeks ahead: stops at 1 on the up-up path only
    leaves = {leaf: 1 if binomial2.price[leaf] > 140 else 2 for leaf in binomial2.terminals}
    odd = PathHorizon(leaves)
    assert not odd.is_stopping_time(binomial2)
    p1 = Portfolio({0: 1.0, up: 1.0}, horizon=odd, liquidated=False)
    p2 = Portfolio({0: 1.0}, horizon=StoppingTime.terminal(), liquidated=False)
    with pytest.raises(IncompatibleHorizons):
        portfolio_sum(binomial2, p1, p2)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.booleans(), st.booleans())
def test_sum_gains_are_additive(seed, liq1, liq2):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, max_depth=3, max_degree=3, kind="any")
    def rand_port(liq):
        hold = {v: float(rng.integers(-4, 5)) / 2 for v in range(t.n_nodes)}
        nodes = {int(v) for v in np.flatnonzero(rng.random(t.n_nodes) < 0.3)}
        return Portfolio(hold, float(rng.integers(-2, 3)), StoppingTime.at_nodes(nodes), liq)
    p1, p2 = rand_port(liq1), rand_port(liq2)
    s = portfolio_sum(t, p1, p2)
    _, g1 = horizon_gains(t, p1)
    _, g2 = horizon_gains(t, p2)
    paths, gs = horizon_gains(t, s)
    assert s.v0 == p1.v0 + p2.v0
    assert np.allclose(gs, g1 + g2, atol=1e-12)


def test_sum_of_liquidated_path_horizons():
    t = lattice_tree(1.0, [1.1, 0.9], 2)
    peek = PathHorizon({leaf: 1 if t.price[leaf] > 1.2 else 2 for leaf in t.terminals})
    p1 = Portfolio({0: 1.0}, horizon=peek, liquidated=True)
    p2 = Portfolio({0: 2.0}, horizon=StoppingTime.terminal(), liquidated=True)
    s = portfolio_sum(t, p1, p2)
    _, g1 = horizon_gains(t, p1)
    _, g2 = horizon_gains(t, p2)
    _, gs = horizon_gains(t, s)
    assert np.allclose(gs, g1 + g2)


def _chain(depth):
    """A binary tree where every level moves by +/-1."""
    return lattice_tree(10.0, [1.0, -1.0], depth, additive=True)


def test_fast_trend_constant_unchanged():
    t = _chain(6)
    p = Portfolio.constant(t, 2.0, liquidated=True)
    taus = [StoppingTime.fixed(0), StoppingTime.fixed(2), StoppingTime.fixed(4)]
    q = fast_trend_transform(t, p, taus)
    assert q.holdings == {v: 2.0 for v in p.holdings}


def test_fast_trend_blocks():
    t = _chain(6)
    hold = {v: float(t.depth[v] + 1) * (1 + v % 3) for v in range(t.n_nodes)}
    p = Portfolio(hold)
    taus = [StoppingTime.fixed(0), StoppingTime.fixed(2), StoppingTime.fixed(4)]
    q = fast_trend_transform(t, p, taus)
    for path in t.paths:
        h = q.holdings_along(t, path)
        for k in range(6):
            khat = max(x for x in (0, 2, 4) if x <= k)
            assert h[k] == hold[path[khat]]
        assert h[6] == 0.0
    assert satisfies_pairing(t, q)
    assert not satisfies_pairing(t, p)


def test_fast_trend_spacing_errors():
    t = _chain(6)
    p = Portfolio.constant(t, 1.0)
    with pytest.raises(InvalidTauSpacing):
        fast_trend_transform(t, p, [StoppingTime.fixed(0), StoppingTime.fixed(1)])
    with pytest.raises(InvalidTauSpacing):
        fast_trend_transform(t, p, [StoppingTime.fixed(1)])
    with pytest.raises(InvalidTauSpacing):
        fast_trend_transform(t, p, [StoppingTime.fixed(0), StoppingTime.fixed(2), StoppingTime.fixed(5)])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_fast_trend_output_is_paired(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, max_depth=6, max_degree=2, kind="any", stop_prob=0.0)
    hold = {v: float(rng.integers(-2, 3)) for v in range(t.n_nodes)}
    p = Portfolio(hold, horizon=StoppingTime.terminal())
    # tau_1: first time at depth >= 2 the price is above s0, but no later than depth 4
    up = StoppingTime.from_predicate(lambda tr, v: tr.depth[v] >= 2 and tr.price[v] > tr.s0
                                     or tr.depth[v] >= 4)
    taus = [StoppingTime.fixed(0), up]
    q = fast_trend_transform(t, p, taus)
    assert satisfies_pairing(t, q)


def test_zero_portfolio_is_admissible_and_gainless(binomial2):
    for c in ("unconstrained", "interval:-1,1", "grid:0.5,2"):
        m = Market(binomial2, PortfolioConstraint.parse(c))
        z = Portfolio.zero()
        assert m.admissible(z)
        _, g = horizon_gains(binomial2, z)
        assert np.all(g == 0.0)
