from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from trajpace import (
    Market,
    MinmaxCertificate,
    Payoff,
    PortfolioConstraint,
    StoppingTime,
    brute_force_bounds,
    build_tree,
    check_attainability,
    classify_payoff_minmax,
    classify_tree,
    horizon_gains,
    lattice_tree,
    merton_check,
    price_bounds,
    random_tree,
    solve_local_minmax,
)
from trajpace.errors import BudgetExceeded, EmptyInput, InputError, LengthMismatch, UnboundedPayoff

from oracles import binomial_closed_form, dense_grid_minmax, dp_upper_lp, lp_minmax

dyadic = st.integers(-16, 16).map(lambda k: k / 8)


@st.composite
def one_step_problem(draw, zero_neutral=False):
    n = draw(st.integers(1, 5))
    d = draw(st.lists(dyadic, min_size=n, max_size=n))
    if zero_neutral:
        assume(min(d) <= 0 <= max(d))
    v = draw(st.lists(st.integers(-40, 40).map(lambda k: k / 8), min_size=n, max_size=n))
    return d, v


# one-step problem

def test_local_minmax_examples():
    assert solve_local_minmax([-0.1, 0.0, 0.1], [0.0, 0.0, 0.1]).value == pytest.approx(0.05)
    r = solve_local_minmax([0.0, 0.1], [0.0, 0.1])
    assert (r.value, r.optimal_h) == (0.0, 1.0)
    r = solve_local_minmax([0.05, 0.1], [0.0, 1.0])
    assert r.value == -math.inf and r.optimal_h is None
    r = solve_local_minmax([0.0], [3.0])
    assert (r.value, r.optimal_h) == (3.0, 0.0)
    # values of -inf are ignored
    assert solve_local_minmax([-1.0, 1.0], [-math.inf, 2.0]).value == -math.inf
    assert solve_local_minmax([-1.0, 0.0, 1.0], [-math.inf, 2.0, 1.0]).value == 2.0


def test_local_minmax_errors():
    with pytest.raises(LengthMismatch):
        solve_local_minmax([0.1], [1.0, 2.0])
    with pytest.raises(EmptyInput):
        solve_local_minmax([], [])


@settings(max_examples=300, deadline=None)
@given(one_step_problem())
def test_local_minmax_matches_lp(prob):
    d, v = prob
    r = solve_local_minmax(d, v)
    ref = lp_minmax(d, v)
    if ref == -math.inf:
        assert r.value == -math.inf
    else:
        assert r.value == pytest.approx(ref, abs=1e-9)
        # the reported hedge attains the value
        assert max(x - r.optimal_h * y for x, y in zip(v, d)) == pytest.approx(r.value, abs=1e-12)
        assert set(r.active_children) == {j for j in range(len(d))
                                 if v[j] - r.optimal_h * d[j] >= r.value - 1e-12}


@settings(max_examples=100, deadline=None)
@given(one_step_problem(zero_neutral=True))
def test_local_minmax_matches_dense_grid(prob):
    d, v = prob
    r = solve_local_minmax(d, v)
    g, _ = dense_grid_minmax(d, v)
    assert r.value <= g + 1e-12
    # grid spacing 5e-4 times |d| <= 2 bounds the discretization error
    assert g <= r.value + 1e-3


@settings(max_examples=200, deadline=None)
@given(one_step_problem(), st.integers(-4, 0), st.integers(0, 4))
def test_local_minmax_interval(prob, lo, hi):
    d, v = prob
    c = PortfolioConstraint.interval(lo / 2, hi / 2)
    r = solve_local_minmax(d, v, c)
    ref = lp_minmax(d, v, lo / 2, hi / 2)
    assert r.value == pytest.approx(ref, abs=1e-9)
    assert c.admits(r.optimal_h)
    assert max(x - r.optimal_h * y for x, y in zip(v, d)) == pytest.approx(r.value, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(one_step_problem(), st.sampled_from([0.25, 0.5, 1.0]), st.integers(1, 4))
def test_local_minmax_grid(prob, tick, n):
    d, v = prob
    c = PortfolioConstraint.grid(tick, n * tick)
    r = solve_local_minmax(d, v, c)
    vals = {h: max(x - h * y for x, y in zip(v, d)) for h in c.grid_values()}
    assert r.value == min(vals.values())
    assert c.admits(r.optimal_h)
    assert vals[r.optimal_h] == r.value


# backward induction

def test_trinomial_call(one_step):
    pb = price_bounds(Market(one_step), Payoff.call(1.0))
    assert pb.lower == pytest.approx(0.0, abs=1e-12)
    assert pb.upper == pytest.approx(0.05, abs=1e-12)
    assert pb.upper_hedge.holding(0) == pytest.approx(0.5)
    bf = brute_force_bounds(Market(one_step), Payoff.call(1.0), PortfolioConstraint.grid(0.01, 2.0))
    assert abs(bf.upper - 0.05) < 1e-3 and abs(bf.lower) < 1e-3


def test_binomial_call_point_price(binomial2):
    pb = price_bounds(Market(binomial2), Payoff.call(100.0))
    assert pb.lower == pytest.approx(11.0, abs=1e-10)
    assert pb.upper == pytest.approx(11.0, abs=1e-10)


@pytest.mark.parametrize("T", [1, 2, 3, 5, 8])
@pytest.mark.parametrize("K", [80.0, 100.0, 130.0])
def test_binomial_closed_form(T, K):
    t = lattice_tree(100.0, [1.2, 0.8], T)
    pb = price_bounds(Market(t), Payoff.call(K))
    ref = binomial_closed_form(100.0, 1.2, 0.8, T, K)
    assert pb.upper == pytest.approx(ref, abs=1e-10)
    assert pb.lower == pytest.approx(ref, abs=1e-10)


def test_unbounded_payoff(one_step):
    with pytest.raises(UnboundedPayoff):
        price_bounds(Market(one_step), Payoff.custom(lambda t, p: math.inf))


def test_not_zero_neutral_bounds():
    t = build_tree([[1.0, 1.05], [1.0, 1.1]])
    pb = price_bounds(Market(t), Payoff.call(1.0))
    assert pb.upper == -math.inf and pb.lower == math.inf
    assert pb.to_dict()["upper"] == "-inf"
    # the long position is capped, so the sure gain is bounded
    pb = price_bounds(Market(t, PortfolioConstraint.interval(-1.0, 1.0)), Payoff.constant(0.0))
    assert pb.upper == pytest.approx(-0.05)


def _trading(market):
    return market.trading_mask() & ~market.tree.is_terminal


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(["terminal", "fixed:1", "fixed:2", "level:4.25"]),
       st.sampled_from([None, (-1.0, 1.0), (0.0, 2.0)]))
def test_dp_matches_lp_oracle(seed, horizon, bounds):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, max_depth=4, max_degree=3, kind="any")
    c = PortfolioConstraint() if bounds is None else PortfolioConstraint.interval(*bounds)
    m = Market(t, c, StoppingTime.parse(horizon))
    K = float(rng.integers(28, 36)) / 8
    pay = Payoff.call(K)
    paths, z = pay.leaf_values(t)
    leaf = {p[-1]: x for p, x in zip(paths, z)}
    lo, hi = (None, None) if bounds is None else bounds
    ref = dp_upper_lp(t, leaf, _trading(m) | t.is_terminal, lo, hi)
    pb = price_bounds(m, pay)
    if ref == -math.inf:
        assert pb.upper == -math.inf
    else:
        assert pb.upper == pytest.approx(ref, abs=1e-9)
    ref_lo = -dp_upper_lp(t, {k: -x for k, x in leaf.items()}, _trading(m) | t.is_terminal, lo, hi)
    if math.isfinite(ref_lo):
        assert pb.lower == pytest.approx(ref_lo, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(["call", "put", "asian", "lookback"]))
def test_dp_equals_brute_force_on_grid(seed, kind):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, max_depth=3, max_degree=3, kind="any", stop_prob=0.4)
    c = PortfolioConstraint.grid(0.5, 1.0)
    m = Market(t, c)
    pay = {"call": Payoff.call(4.0), "put": Payoff.put(4.0), "asian": Payoff.asian(),
           "lookback": Payoff.lookback()}[kind]
    pb = price_bounds(m, pay)
    try:
        bf = brute_force_bounds(m, pay, c, budget=2_000_000)
    except BudgetExceeded:
        assume(False)
    assert pb.upper == pytest.approx(bf.upper, abs=1e-12)
    assert pb.lower == pytest.approx(bf.lower, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_unconstrained_dp_versus_brute_force(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, max_depth=2, max_degree=2, kind="zero_neutral")
    m = Market(t)
    pay = Payoff.call(4.0)
    pb = price_bounds(m, pay)
    grid = PortfolioConstraint.grid(0.125, 4.0)
    bf = brute_force_bounds(m, pay, grid)
    assert pb.upper <= bf.upper + 1e-12
    assert pb.lower >= bf.lower - 1e-12
    if all(abs(h) <= 4.0 for h in pb.upper_hedge.holdings.values()):
        assert bf.upper <= pb.upper + bf.tolerance + 1e-12


# structural properties

def _corpus_case(seed, kind="zero_neutral"):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, max_depth=4, max_degree=3, kind=kind)
    K = float(rng.integers(28, 36)) / 8
    return rng, t, K


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(["zero_neutral", "any"]))
def test_duality_exact(seed, kind):
    rng, t, K = _corpus_case(seed, kind)
    m = Market(t)
    for pay in (Payoff.call(K), Payoff.put(K), Payoff.asian(), Payoff.lookback()):
        assert price_bounds(m, pay).lower == -price_bounds(m, -pay).upper


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 100_000))
def test_monotone_in_payoff(seed):
    rng, t, K = _corpus_case(seed, "any")
    m = Market(t)
    bump = {leaf: float(rng.integers(0, 3)) / 4 for leaf in t.terminals}
    small = Payoff.call(K)
    big = small + Payoff.from_leaf_values(bump)
    a, b = price_bounds(m, small), price_bounds(m, big)
    assert a.upper <= b.upper
    assert a.lower <= b.lower


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([0.5, 2.0, 4.0]), st.integers(-3, 3))
def test_scaling_and_cash(seed, a, c):
    rng, t, K = _corpus_case(seed)
    m = Market(t)
    pay = Payoff.asian()
    base = price_bounds(m, pay)
    scaled = price_bounds(m, a * pay + c)
    assert scaled.upper == pytest.approx(a * base.upper + c, abs=1e-9)
    assert scaled.lower == pytest.approx(a * base.lower + c, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_subadditive(seed):
    rng, t, K = _corpus_case(seed)
    m = Market(t)
    z1, z2 = Payoff.call(K), Payoff.lookback(1.0, -K)
    s = price_bounds(m, z1 + z2)
    assert s.upper <= price_bounds(m, z1).upper + price_bounds(m, z2).upper + 1e-9
    assert s.lower >= price_bounds(m, z1).lower + price_bounds(m, z2).lower - 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(["unconstrained", "interval:-1,1", "grid:0.5,2"]),
       st.sampled_from(["terminal", "fixed:2", "level:4.25"]), st.booleans())
def test_hedges_super_and_sub_replicate(seed, cons, horizon, liquidated):
    rng, t, K = _corpus_case(seed)
    m = Market(t, PortfolioConstraint.parse(cons), StoppingTime.parse(horizon), liquidated)
    pay = Payoff.put(K)
    pb = price_bounds(m, pay)
    paths, z = pay.leaf_values(t)
    _, g_up = horizon_gains(t, pb.upper_hedge)
    _, g_dn = horizon_gains(t, pb.lower_hedge)
    # the claim is only hedged up to the horizon; after it the worst remaining leaf counts
    assert m.admissible(pb.upper_hedge) and m.admissible(pb.lower_hedge)
    if horizon == "terminal":
        assert np.all(pb.upper + g_up >= z - 1e-9)
        assert np.all(pb.lower + g_dn <= z + 1e-9)
        # tight: some trajectory meets the bound
        assert np.min(pb.upper + g_up - z) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_interval_on_zero_neutral(seed):
    rng, t, K = _corpus_case(seed)
    assert classify_tree(t).locally_0_neutral
    m = Market(t)
    for pay in (Payoff.call(K), Payoff.put(K), Payoff.asian(), Payoff.lookback()):
        pb = price_bounds(m, pay)
        assert pb.lower <= pb.upper + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_conditional_anchor(seed):
    rng, t, K = _corpus_case(seed)
    m = Market(t)
    pay = Payoff.call(K)
    inner = [v for v in range(t.n_nodes) if not t.is_terminal[v]]
    v = int(rng.choice(inner))
    pb = price_bounds(m, pay, anchor=v)
    paths, z = pay.leaf_values(t, v)
    assert pb.depth == int(t.depth[v])
    assert z.min() - 1e-12 <= pb.lower <= pb.upper <= z.max() + 1e-12


# attainability, Merton, certificates

def test_attainability(binomial2, one_step):
    rep = check_attainability(Market(binomial2), Payoff.call(100.0))
    assert rep.attainable and rep.point_price == pytest.approx(11.0)
    assert rep.replicating_hedge.holding(0) == pytest.approx(0.55)
    rep = check_attainability(Market(one_step), Payoff.call(1.0))
    assert not rep.attainable
    assert rep.eps_up == pytest.approx(0.05) and rep.eps_down == pytest.approx(0.1)
    assert rep.interval_bound_applicable and rep.interval_bound_holds


def test_attainability_interval_flag(one_step):
    rep = check_attainability(Market(one_step, PortfolioConstraint.interval(0.0, 1.0)), Payoff.call(1.0))
    assert not rep.interval_bound_applicable and rep.interval_bound_holds is None


def test_merton_examples():
    t = build_tree([[1.0, 1.0, 1.0], [1.0, 1.0, 1.2], [1.0, 1.0, 0.8], [1.0, 1.3], [1.0, 0.7]])
    r = merton_check(Market(t), 0.9)
    assert r.zero_neutral and r.constant_trajectory
    assert r.lower_holds and r.upper_holds and r.lower_attained
    assert r.lower == pytest.approx(0.1)
    r2 = merton_check(Market(lattice_tree(100.0, [1.2, 0.8], 2)), 100.0)
    assert r2.lower_holds and r2.upper_holds and not r2.constant_trajectory


def test_certificates(binomial2):
    T = StoppingTime.terminal()
    stock = MinmaxCertificate("upper", (1.0,), (T,))
    assert classify_payoff_minmax(binomial2, Payoff.call(100.0), stock).verified
    intrinsic = MinmaxCertificate("lower", (1.0,), (T,), b=-100.0)
    assert classify_payoff_minmax(binomial2, Payoff.call(100.0), intrinsic).verified
    assert classify_payoff_minmax(binomial2, Payoff.put(100.0),
                                  MinmaxCertificate("upper", (), (), b=100.0)).verified
    avg = MinmaxCertificate("upper", (0.5, 0.5), (StoppingTime.fixed(1), StoppingTime.fixed(2)))
    assert classify_payoff_minmax(binomial2, Payoff.asian(), avg).verified
    assert classify_payoff_minmax(binomial2, Payoff.asian(), MinmaxCertificate(
        "lower", (0.5, 0.5), (StoppingTime.fixed(1), StoppingTime.fixed(2)))).verified
    # the running max is not below the final price, but is not above it either
    assert classify_payoff_minmax(binomial2, Payoff.lookback(), MinmaxCertificate("lower", (1.0,), (T,))).verified
    assert not classify_payoff_minmax(binomial2, Payoff.lookback(),
                                      MinmaxCertificate("upper", (1.0,), (T,))).verified
    with pytest.raises(InputError):
        MinmaxCertificate("sideways", (), ())


@pytest.mark.parametrize("spec, expected", [
    ("call:K=1", 0.1), ("put:K=1.05", 0.0), ("const:c=3", 3.0),
    ("lookback:a=2,b=-1", 1.2), ("asian", 1.1), ("stock_at:tau=fixed:0", 1.0),
])
def test_payoff_parse(spec, expected):
    t = build_tree([[1.0, 1.1]])
    assert Payoff.parse(spec)(t, t.paths[0]) == pytest.approx(expected)


@pytest.mark.parametrize("spec", ["call", "call:X=1", "swap:K=1", "asian:K=1", "stock_at:fixed:1", "const:c=abc"])
def test_payoff_parse_errors(spec):
    with pytest.raises(InputError):
        Payoff.parse(spec)
