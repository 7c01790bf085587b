"""A market with one-sided moves that is still free of arbitrage.

Every other level the price can only stay put or move one way, so a one-way
position held for a single period cannot lose and sometimes wins.  Traders
who must keep a new position for at least two periods lose that edge: the
flat move is always followed by an up-or-down move.
"""

import numpy as np

from trajpace import Market, PortfolioConstraint, StoppingTime, classify_tree, find_arbitrage_strategy, horizon_gains
from trajpace.verification import fast_trend_tree

tree = fast_trend_tree(np.random.default_rng(5), pairs=2)
print("node classes:", classify_tree(tree).counts)

market = Market(tree, PortfolioConstraint.grid(1.0, 1.0), liquidated=True)

free = find_arbitrage_strategy(market, method="local")
_, g = horizon_gains(tree, free)
print(f"unrestricted: arbitrage {free.holdings}, gains from {g.min():.2f} to {g.max():.2f}")

taus = [StoppingTime.fixed(0), StoppingTime.fixed(2)]
print("rebalancing only at depths 0 and 2:", find_arbitrage_strategy(market, taus=taus))
