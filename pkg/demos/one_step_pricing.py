"""Price a call on the smallest interesting market and look at the hedges.

The stock starts at 1 and moves to 0.9, 1.0 or 1.1.  Nothing says how likely
each move is, so the claim gets an interval of prices instead of one number.
"""

from trajpace import (
    Market,
    Payoff,
    PortfolioConstraint,
    brute_force_bounds,
    build_tree,
    check_attainability,
    horizon_gains,
    price_bounds,
)

tree = build_tree([[1.0, 0.9], [1.0, 1.0], [1.0, 1.1]])
market = Market(tree)
call = Payoff.call(1.0)

pb = price_bounds(market, call)
print(f"call K=1: [{pb.lower:.4f}, {pb.upper:.4f}]")

# The seller charges the upper bound and holds half a share.
paths, z = call.leaf_values(tree)
_, gains = horizon_gains(tree, pb.upper_hedge)
print(f"upper hedge holds {pb.upper_hedge.holding(0):.3f} shares")
for p, payout, g in zip(paths, z, gains):
    print(f"  ends at {tree.price[p[-1]]:.1f}: payout {payout:.3f}, hedge worth {pb.upper + g:.3f}")

# No single hedge replicates the call, hence the gap.
rep = check_attainability(market, call)
print(f"attainable: {rep.attainable}  (eps_up={rep.eps_up:.3f}, eps_down={rep.eps_down:.3f})")

# Trying every holding on a fine grid lands on the same numbers.
bf = brute_force_bounds(market, call, PortfolioConstraint.grid(0.01, 2.0))
print(f"brute force on a 0.01 grid: [{bf.lower:.4f}, {bf.upper:.4f}]")

# Limiting the position size can only widen the interval.
capped = price_bounds(Market(tree, PortfolioConstraint.interval(0.0, 0.25)), call)
print(f"holdings in [0, 0.25]: [{capped.lower:.4f}, {capped.upper:.4f}]")
