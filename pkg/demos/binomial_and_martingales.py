"""Where the minmax interval meets classical risk-neutral pricing.

On a binomial tree every claim is replicable, so the interval collapses to
the textbook price.  On a trinomial tree it does not, but every martingale
measure still prices inside it.
"""

import numpy as np

from trajpace import Market, MartingaleSamplerConfig, Payoff, lattice_tree, price_bounds, sample_martingale_set
from trajpace.verification import expectation, random_martingale_measure

tree = lattice_tree(100.0, [1.2, 0.8], 2)
pb = price_bounds(Market(tree), Payoff.call(100.0))
print(f"binomial, T=2, K=100: [{pb.lower:.6f}, {pb.upper:.6f}]")
print("root hedge:", round(pb.upper_hedge.holding(0), 4))

tri = sample_martingale_set(MartingaleSamplerConfig(model="trinomial", u=1.15, d=0.9, T=3, exhaustive=True))
call = Payoff.call(100.0)
pb = price_bounds(Market(tri), call)
paths, z = call.leaf_values(tri)
leaves = {p[-1]: x for p, x in zip(paths, z)}
print(f"trinomial, T=3, K=100: [{pb.lower:.4f}, {pb.upper:.4f}]")

rng = np.random.default_rng(0)
prices = [expectation(tri, random_martingale_measure(rng, tri), leaves) for _ in range(1000)]
print(f"1000 random martingale measures price it in [{min(prices):.4f}, {max(prices):.4f}]")
