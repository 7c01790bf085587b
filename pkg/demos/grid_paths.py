"""Sample log-price grid trajectories and write them out for plotting.

Uses s0 = 1, N1 = N2 = 100, delta = beta = 0.0082, p = 3 and
c = (p * delta)**2, with a single stopping level at N2 * beta**2.  Writes paths.csv next to this file.
"""

from pathlib import Path

from trajpace import GridConfig, classify_tree, sample_grid_set, validate_grid_path

d = 0.0082
cfg = GridConfig(s0=1.0, delta=d, beta=d, p=3, N1=100, N2=100, Lambda=(100,), c=(3 * d) ** 2)
tree = sample_grid_set(cfg, 200, seed=2024)

seqs = tree.sequences()
bad = sum(bool(validate_grid_path(cfg, s)) for s in seqs)
lengths = [len(s) - 1 for s in seqs]
print(f"{len(seqs)} paths, lengths {min(lengths)}..{max(lengths)}, {bad} constraint violations")

c = classify_tree(tree)
print("node classes:", c.counts)

out = Path(__file__).with_name("paths.csv")
with out.open("w") as fh:
    fh.write("path,depth,price\n")
    for i, s in enumerate(seqs):
        for k, (price, _) in enumerate(s):
            fh.write(f"{i},{k},{price!r}\n")
print("wrote", out)
