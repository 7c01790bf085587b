"""Trajectory-set constructors.

* log-price grid sets, enumerated in full or sampled;
* the quadratic-variation special case where w is the running sum of squared
  log moves;
* trees obtained by sampling a discrete martingale at stopping times;
* ingestion of an observed price chart onto the grid;
* small random trees and lattices used by the verification suites.

On the grid the price is ``s0 * exp(k * delta)`` with integer ``k`` and the
second coordinate is an integer ``j`` standing for ``j * beta**2``; ``w`` is
stored as that integer so equality is exact.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    BudgetExceeded,
    EmptyChart,
    InputError,
    InvalidConfig,
    InvalidModel,
)
from .tree import TrajectoryTree, build_tree

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "GridConfig",
    "MartingaleSamplerConfig",
    "ChartSeries",
    "IngestedTrajectory",
    "enumerate_grid_set",
    "sample_grid_set",
    "build_bjn_set",
    "sample_martingale_set",
    "ingest_chart",
    "validate_grid_path",
    "random_tree",
    "lattice_tree",
    "node_budget",
]

_TOL = 1e-9


def node_budget() -> int:
    return int(os.environ.get("TRAJPACE_NODE_BUDGET", 1_000_000))


def _load_mapping(path: str | os.PathLike) -> dict:
    p = FsPath(path)
    try:
        if p.suffix.lower() == ".toml":
            return tomllib.loads(p.read_text())
        return json.loads(p.read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {p}: {exc}") from exc


@dataclass(frozen=True)
class GridConfig:
    """Parameters of a log-price grid trajectory set.

    Price index ``k`` moves by at most ``p`` per step and stays within
    ``[-N1, N1]``.  The w index ``j`` rises by between 1 and ``c / beta**2``
    ticks per step and stays at or below ``N2``.  A trajectory ends the first
    time ``j`` lands in ``Lambda``.  ``c`` defaults to ``(p * delta)**2``.
    """

    s0: float
    delta: float
    beta: float
    p: int
    N1: int
    N2: int
    Lambda: tuple[int, ...]
    c: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "Lambda", tuple(sorted({int(x) for x in self.Lambda})))
        if self.c is None:
            object.__setattr__(self, "c", (self.p * self.delta) ** 2)
        if not (self.s0 > 0 and self.delta > 0 and self.beta > 0 and self.c > 0):
            raise InvalidConfig("s0, delta, beta and c must be positive")
        if int(self.p) != self.p or self.p < 1:
            raise InvalidConfig("p must be an integer >= 1")
        if int(self.N1) != self.N1 or self.N1 < 0 or int(self.N2) != self.N2 or self.N2 < 1:
            raise InvalidConfig("need integers N1 >= 0 and N2 >= 1")
        if not self.Lambda:
            raise InvalidConfig("Lambda (the stopping levels) is empty")
        if self.Lambda[0] < 1 or self.Lambda[-1] > self.N2:
            raise InvalidConfig(f"stopping levels must lie in [1, N2={self.N2}]")
        if self.N1 > self.p * self.N2:
            warnings.warn(f"N1={self.N1} exceeds p*N2={self.p * self.N2}: outer levels are unreachable",
                          stacklevel=3)

    @property
    def d(self) -> float:
        return self.p * self.delta

    @property
    def max_w_step(self) -> int:
        return int(math.floor(self.c / self.beta ** 2 + _TOL))

    def price(self, k: int | np.ndarray) -> float | np.ndarray:
        return self.s0 * np.exp(np.asarray(k) * self.delta) if isinstance(k, np.ndarray) \
            else self.s0 * math.exp(k * self.delta)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["Lambda"] = list(self.Lambda)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "GridConfig":
        allowed = {"s0", "delta", "beta", "p", "c", "N1", "N2", "Lambda"}
        extra = set(data) - allowed
        if extra:
            raise InvalidConfig(f"unknown grid config fields: {sorted(extra)}")
        try:
            return cls(float(data["s0"]), float(data["delta"]), float(data["beta"]), int(data["p"]),
                       int(data["N1"]), int(data["N2"]), tuple(data["Lambda"]),
                       None if data.get("c") is None else float(data["c"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad grid config: {exc}") from exc

    @classmethod
    def load(cls, path: str | os.PathLike) -> "GridConfig":
        return cls.from_dict(_load_mapping(path))


def _check_moves(cfg: GridConfig) -> None:
    if cfg.max_w_step < 1:
        raise InvalidConfig("c < beta**2: no admissible w move")


def _tree_from_arrays(parent, depth, price, ws, kids, meta) -> TrajectoryTree:
    return TrajectoryTree(
        np.array(parent, dtype=np.int64),
        np.array(depth, dtype=np.int64),
        np.array(price, dtype=np.float64),
        tuple(ws),
        tuple(tuple(k) for k in kids),
        {k: tuple(v) for k, v in meta.items()},
    )


def _enumerate(cfg: GridConfig, moves, stop: set[int], top: int, budget: int | None) -> TrajectoryTree:
    """Depth-first construction; ``moves(k, j)`` yields admissible (k', j')."""
    budget = node_budget() if budget is None else budget
    parent, depth, price, ws, kids, ks = [-1], [0], [cfg.price(0)], [0], [[]], [0]
    stack = [0]
    while stack:
        v = stack.pop()
        k, j = ks[v], ws[v]
        if j in stop:
            continue
        new = []
        for k2, j2 in moves(k, j):
            c = len(parent)
            if c >= budget:
                raise BudgetExceeded(f"grid set exceeds the node budget {budget}", budget=budget)
            parent.append(v); depth.append(depth[v] + 1); price.append(cfg.price(k2))
            ws.append(j2); kids.append([]); ks.append(k2)
            kids[v].append(c)
            new.append(c)
        stack.extend(reversed(new))
    # ids were handed out in creation order, so parents precede children
    return _tree_from_arrays(parent, depth, price, ws, kids, {"k": ks})


def enumerate_grid_set(cfg: GridConfig, budget: int | None = None) -> TrajectoryTree:
    """Every admissible grid trajectory, cut when w first enters the stopping set."""
    _check_moves(cfg)
    stop, top = set(cfg.Lambda), max(cfg.Lambda)

    def moves(k, j):
        for k2 in range(max(-cfg.N1, k - cfg.p), min(cfg.N1, k + cfg.p) + 1):
            for j2 in range(j + 1, min(j + cfg.max_w_step, top) + 1):
                yield k2, j2

    return _enumerate(cfg, moves, stop, top, budget)


def _bjn_levels(cfg: GridConfig) -> tuple[set[int], int, int]:
    ratio = (cfg.beta / cfg.delta) ** 2
    levels = set()
    for n in cfg.Lambda:
        x = n * ratio
        if abs(x - round(x)) > 1e-6 * max(1.0, x):
            raise InvalidConfig(f"stopping level {n}*beta^2 is not a multiple of delta^2")
        levels.add(int(round(x)))
    jump = min(cfg.p, int(math.floor(math.sqrt(cfg.c) / cfg.delta + _TOL)))
    if cfg.N1 == 0 or jump < 1:
        raise InvalidConfig("no non-zero price move is admissible, so w can never increase")
    return levels, max(levels), jump


def build_bjn_set(cfg: GridConfig, budget: int | None = None) -> TrajectoryTree:
    """Grid set whose w is the running sum of squared log moves.

    ``w`` is stored in units of ``delta**2``; since w must increase, the price
    moves at every step.
    """
    stop, top, jump = _bjn_levels(cfg)

    def moves(k, j):
        for k2 in range(max(-cfg.N1, k - jump), min(cfg.N1, k + jump) + 1):
            j2 = j + (k2 - k) ** 2
            if k2 != k and j2 <= top:
                yield k2, j2

    return _enumerate(cfg, moves, stop, top, budget)


def sample_grid_set(cfg: GridConfig, n: int, seed: int) -> TrajectoryTree:
    """``n`` grid trajectories drawn with uniformly random admissible moves.

    Path ``i`` uses its own generator seeded by ``(seed, i)``.
    """
    _check_moves(cfg)
    if n < 0:
        raise InvalidConfig("n must be non-negative")
    stop, top = set(cfg.Lambda), max(cfg.Lambda)
    root = (cfg.price(0), 0)
    seqs = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        k, j = 0, 0
        seq = [root]
        while j not in stop:
            lo, hi = max(-cfg.N1, k - cfg.p), min(cfg.N1, k + cfg.p)
            k = int(rng.integers(lo, hi + 1))
            j = j + int(rng.integers(1, min(cfg.max_w_step, top - j) + 1))
            seq.append((cfg.price(k), j))
        seqs.append(seq)
    index = {"k": lambda s: [int(round(math.log(x[0] / cfg.s0) / cfg.delta)) for x in s]}
    return build_tree(seqs or [[root]], meta=index)


# martingale sampling

@dataclass(frozen=True)
class MartingaleSamplerConfig:
    """A discrete martingale and the times at which it is observed.

    ``model``: ``binomial`` (multiply by u or d), ``trinomial`` (u, 1 or d) or
    ``walk`` (add +sigma or -sigma).  Up/down probabilities are chosen so the
    expected move is zero; ``p_mid`` is the trinomial's no-move probability.
    ``sampling``: ``every`` step, ``every_m`` steps, or ``level`` (the next
    time the process has moved by at least ``level`` since the last
    observation).  The final time ``T`` is always observed.
    """

    model: str = "binomial"
    x0: float = 100.0
    u: float = 1.2
    d: float = 0.8
    sigma: float = 1.0
    p_mid: float = 1.0 / 3.0
    T: int = 2
    sampling: str = "every"
    m: int = 1
    level: float = 1.0
    n_paths: int = 100
    seed: int = 0
    exhaustive: bool = False

    def __post_init__(self) -> None:
        if self.model in ("binomial", "trinomial"):
            if not (0 < self.d < 1 < self.u) or not self.x0 > 0:
                raise InvalidModel("multiplicative models need 0 < d < 1 < u and x0 > 0")
        elif self.model == "walk":
            if not self.sigma > 0:
                raise InvalidModel("walk step sigma must be positive")
        else:
            raise InvalidModel(f"unknown model {self.model!r}")
        if self.model == "trinomial" and not 0 < self.p_mid < 1:
            raise InvalidModel("p_mid must lie in (0, 1)")
        if int(self.T) != self.T or self.T < 1:
            raise InvalidModel("T must be a positive integer")
        if self.sampling not in ("every", "every_m", "level"):
            raise InvalidModel(f"unknown sampling {self.sampling!r}")
        if self.sampling == "every_m" and self.m < 1:
            raise InvalidModel("m must be >= 1")
        if self.sampling == "level" and not self.level > 0:
            raise InvalidModel("level must be positive")
        if not self.exhaustive and self.n_paths < 1:
            raise InvalidModel("n_paths must be >= 1")

    def steps(self) -> tuple[list[float], list[float], bool]:
        """(moves, probabilities, multiplicative)."""
        if self.model == "binomial":
            q = (1 - self.d) / (self.u - self.d)
            return [self.u, self.d], [q, 1 - q], True
        if self.model == "trinomial":
            rest = 1 - self.p_mid
            pu = rest * (1 - self.d) / (self.u - self.d)
            return [self.u, 1.0, self.d], [pu, self.p_mid, rest - pu], True
        return [self.sigma, -self.sigma], [0.5, 0.5], False

    @classmethod
    def from_dict(cls, data: Mapping) -> "MartingaleSamplerConfig":
        names = set(cls.__dataclass_fields__)
        extra = set(data) - names
        if extra:
            raise InvalidModel(f"unknown sampler fields: {sorted(extra)}")
        try:
            return cls(**dict(data))
        except TypeError as exc:
            raise InvalidModel(str(exc)) from exc

    @classmethod
    def load(cls, path: str | os.PathLike) -> "MartingaleSamplerConfig":
        return cls.from_dict(_load_mapping(path))


def _fingerprint(history: np.ndarray) -> str:
    return hashlib.blake2b(np.ascontiguousarray(history, dtype=np.float64).tobytes(),
                           digest_size=12).hexdigest()


def _sample_times(cfg: MartingaleSamplerConfig, x: np.ndarray) -> list[int]:
    T = cfg.T
    if cfg.sampling == "every":
        return list(range(T + 1))
    if cfg.sampling == "every_m":
        times = list(range(0, T + 1, cfg.m))
    else:
        times = [0]
        for t in range(1, T + 1):
            if abs(x[t] - x[times[-1]]) >= cfg.level - _TOL * max(1.0, cfg.level):
                times.append(t)
    if times[-1] != T:
        times.append(T)
    return times


def _observe(cfg: MartingaleSamplerConfig, x: np.ndarray) -> list[tuple[float, tuple]]:
    return [(float(x[t]), (t, _fingerprint(x[: t + 1]))) for t in _sample_times(cfg, x)]


def _trajectory(cfg: MartingaleSamplerConfig, moves, mult: bool, outcome: Sequence[int]) -> np.ndarray:
    steps = np.asarray([moves[i] for i in outcome])
    if mult:
        return cfg.x0 * np.concatenate([[1.0], np.cumprod(steps)])
    return cfg.x0 + np.concatenate([[0.0], np.cumsum(steps)])


def sample_martingale_set(cfg: MartingaleSamplerConfig, budget: int | None = None) -> TrajectoryTree:
    """Tree of martingale paths observed at the configured times.

    Each w is (observation time, fingerprint of the full history so far), so
    different histories stay distinct nodes.  In exhaustive mode every
    outcome sequence is enumerated and each node carries ``q_prob``, the
    probability of reaching it.
    """
    moves, probs, mult = cfg.steps()
    budget = node_budget() if budget is None else budget
    if cfg.exhaustive:
        count = len(moves) ** cfg.T
        if count * (cfg.T + 1) > budget:
            raise BudgetExceeded(f"{count} outcome sequences exceed the node budget {budget}",
                                 required=count, budget=budget)
        outcomes = list(itertools.product(range(len(moves)), repeat=cfg.T))
        weights = [math.prod(probs[i] for i in o) for o in outcomes]
    else:
        outcomes = []
        for i in range(cfg.n_paths):
            rng = np.random.default_rng([cfg.seed, i])
            outcomes.append(tuple(int(x) for x in rng.choice(len(moves), size=cfg.T, p=probs)))
        weights = None
    seqs = [_observe(cfg, _trajectory(cfg, moves, mult, o)) for o in outcomes]
    tree = build_tree(seqs)
    if weights is None:
        return tree
    lookup = {(int(tree.parent[v]), float(tree.price[v]), tree.w[v]): v
              for v in range(1, tree.n_nodes)}
    q = np.zeros(tree.n_nodes)
    for seq, wgt in zip(seqs, weights):
        v = 0
        q[0] += wgt
        for price, w in seq[1:]:
            v = lookup[(v, price, w)]
            q[v] += wgt
    return TrajectoryTree(tree.parent, tree.depth, tree.price, tree.w, tree.children,
                          {"q_prob": tuple(float(x) for x in q)})


# chart ingestion

@dataclass(frozen=True)
class ChartSeries:
    timestamps: tuple
    values: tuple[float, ...]
    log_prices: bool = False

    @classmethod
    def read_csv(cls, path: str | os.PathLike, log_prices: bool = False) -> "ChartSeries":
        """Two columns (timestamp, value); a non-numeric first row is a header."""
        ts, vals = [], []
        try:
            with open(path, newline="") as fh:
                for i, row in enumerate(csv.reader(fh)):
                    if not row or not "".join(row).strip():
                        continue
                    if len(row) < 2:
                        raise InputError(f"{path}: row {i + 1} needs two columns")
                    try:
                        v = float(row[1])
                    except ValueError:
                        if i == 0:
                            continue
                        raise InputError(f"{path}: row {i + 1} has a non-numeric value")
                    ts.append(row[0])
                    vals.append(v)
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc}") from exc
        return cls(tuple(ts), tuple(vals), log_prices)


@dataclass(frozen=True)
class IngestedTrajectory:
    """A chart mapped onto the grid.

    ``k`` are price indices, ``w`` the running sum of squared index moves (so
    the quadratic variation is ``w * delta**2``).  ``clipped`` lists the
    observation indices whose move had to be shortened; ``terminated`` says
    whether w reached a stopping level, in which case the trajectory ends
    there.
    """

    prices: tuple[float, ...]
    k: tuple[int, ...]
    w: tuple[int, ...]
    timestamps: tuple
    clipped: tuple[int, ...]
    terminated: bool
    delta: float

    @property
    def quadratic_variation(self) -> tuple[float, ...]:
        return tuple(x * self.delta ** 2 for x in self.w)

    def sequence(self) -> list[tuple[float, int]]:
        return list(zip(self.prices, self.w))

    def to_dict(self) -> dict:
        return {
            "prices": list(self.prices),
            "k": list(self.k),
            "w": list(self.w),
            "timestamps": list(self.timestamps),
            "clipped": list(self.clipped),
            "terminated": self.terminated,
        }


def ingest_chart(series: ChartSeries, cfg: GridConfig) -> IngestedTrajectory:
    """Map an observed chart onto the log-price grid of ``cfg``.

    Levels are measured from the first observation and rounded half up; the
    trajectory starts at ``cfg.s0``.  Moves longer than the admissible jump
    are clipped, and the walk stops once its quadratic variation hits a
    stopping level.
    """
    vals = list(series.values)
    if not vals:
        raise EmptyChart("chart has no observations")
    if series.log_prices:
        x = np.asarray(vals, dtype=np.float64)
    else:
        if min(vals) <= 0:
            raise InputError("raw prices must be positive")
        x = np.log(np.asarray(vals, dtype=np.float64))
    if not np.all(np.isfinite(x)):
        raise InputError("chart values must be finite")
    raw = np.floor((x - x[0]) / cfg.delta + 0.5).astype(np.int64)
    jump = min(cfg.p, int(math.floor(math.sqrt(cfg.c) / cfg.delta + _TOL)))
    ratio = (cfg.beta / cfg.delta) ** 2
    stop = {n * ratio for n in cfg.Lambda}

    def in_stop(w: int) -> bool:
        return any(abs(w - s) <= 1e-9 * max(1.0, s) for s in stop)

    ks, ws, clipped = [0], [0], []
    terminated = False
    for i in range(1, len(raw)):
        dk = int(raw[i]) - ks[-1]
        step = max(-jump, min(jump, dk))
        k = max(-cfg.N1, min(cfg.N1, ks[-1] + step))
        if k - ks[-1] != dk:
            clipped.append(i)
        ks.append(k)
        ws.append(ws[-1] + (k - ks[-2]) ** 2)
        if in_stop(ws[-1]):
            terminated = True
            break
    n = len(ks)
    prices = tuple(cfg.s0 * math.exp(k * cfg.delta) for k in ks)
    ts = tuple(series.timestamps[:n]) if series.timestamps else tuple(range(n))
    return IngestedTrajectory(prices, tuple(ks), tuple(ws), ts, tuple(clipped), terminated, cfg.delta)


def validate_grid_path(cfg: GridConfig, seq: Sequence[tuple[float, float]], mode: str = "grid") -> list[str]:
    """Constraint violations of one trajectory; empty when it is admissible.

    Works from the prices themselves (logarithms, not stored indices).  In
    ``grid`` mode w counts ``beta**2`` ticks; in ``qv`` mode w counts
    ``delta**2`` units and must equal the running sum of squared log moves.
    """
    out = []
    if not seq:
        return ["empty trajectory"]
    s = np.array([float(x[0]) for x in seq])
    w = np.array([float(x[1]) for x in seq])
    unit = cfg.beta ** 2 if mode == "grid" else cfg.delta ** 2
    W = w * unit
    if not math.isclose(s[0], cfg.s0, rel_tol=1e-12):
        out.append(f"starts at {s[0]}, not s0={cfg.s0}")
    if W[0] != 0:
        out.append("w does not start at 0")
    if np.any(s <= 0):
        return out + ["non-positive price"]
    logk = np.log(s / cfg.s0) / cfg.delta
    off = np.abs(logk - np.round(logk))
    if np.any(off > 1e-6):
        out.append(f"price off the grid at step {int(np.argmax(off > 1e-6))}")
    if np.any(np.abs(np.round(logk)) > cfg.N1):
        out.append("price index beyond N1")
    dlog = np.diff(np.log(s))
    if np.any(np.abs(dlog) > cfg.d * (1 + 1e-9)):
        out.append("log move larger than p*delta")
    dW = np.diff(W)
    if np.any(dW <= 0):
        out.append("w does not increase strictly")
    if np.any(dW > cfg.c * (1 + 1e-9)):
        out.append("w increment larger than c")
    if mode == "grid":
        if np.any(w != np.round(w)) or np.any(w > cfg.N2):
            out.append("w off the grid or beyond N2")
    elif not np.allclose(dW, dlog ** 2, rtol=1e-9, atol=1e-15):
        out.append("w is not the running sum of squared log moves")
    stop = [n * cfg.beta ** 2 for n in cfg.Lambda]
    hits = [i for i in range(1, len(W)) if any(math.isclose(W[i], q, rel_tol=1e-9) for q in stop)]
    if not hits or hits[0] != len(W) - 1:
        out.append("trajectory does not end at its first visit to the stopping set")
    return out


# small synthetic trees

def random_tree(rng: np.random.Generator, max_depth: int = 4, max_degree: int = 3,
                kind: str = "zero_neutral", stop_prob: float = 0.2, s0: float = 4.0,
                step: float = 0.125, max_special: int | None = None,
                p_special: float = 0.2) -> TrajectoryTree:
    """Random finite tree with dyadic price moves.

    ``kind``: ``arbitrage_free`` (every node up-down or flat),
    ``zero_neutral`` (arbitrage nodes allowed too) or ``any``.  Moves are
    multiples of ``step`` in [-4, 4] steps, so with the default s0 prices
    stay positive up to depth 5.  ``max_special`` caps the number of
    arbitrage or flat nodes on a trajectory.
    """
    if kind not in ("arbitrage_free", "zero_neutral", "any"):
        raise InputError(f"unknown random tree kind {kind!r}")
    if max_degree < 2 and kind != "any":
        raise InputError("need max_degree >= 2")
    pos, neg = [1, 2, 3, 4], [-1, -2, -3, -4]

    def pick(options, n):
        return list(rng.choice(options, size=n, replace=False)) if n else []

    def moves(special_left: bool) -> tuple[list[int], bool]:
        r = rng.random()
        if kind == "any":
            n = int(rng.integers(1, max_degree + 1))
            return pick(neg + [0] + pos, n), False
        if special_left and r < p_special / 2:
            return [0], True
        if special_left and kind == "zero_neutral" and r < p_special:
            n = int(rng.integers(1, max_degree))
            return [0] + pick(pos if rng.random() < 0.5 else neg, n), True
        n = int(rng.integers(2, max_degree + 1))
        first = [int(rng.choice(neg)), int(rng.choice(pos))]
        rest = [x for x in neg + [0] + pos if x not in first]
        return first + pick(rest, n - 2), False

    parent, depth, price, kids, special = [-1], [0], [s0], [[]], [0]
    v = 0
    while v < len(parent):
        d = depth[v]
        if d < max_depth and (d == 0 or rng.random() >= stop_prob):
            left = max_special is None or special[v] < max_special
            mv, sp = moves(left)
            for m in sorted(int(x) for x in mv):
                c = len(parent)
                parent.append(v); depth.append(d + 1); price.append(price[v] + m * step)
                kids.append([]); special.append(special[v] + sp)
                kids[v].append(c)
        v += 1
    return _tree_from_arrays(parent, depth, price, [None] * len(parent), kids, {})


def lattice_tree(s0: float, factors: Sequence[float], T: int, additive: bool = False) -> TrajectoryTree:
    """Non-recombining tree where each step multiplies by (or adds) one of ``factors``."""
    seqs = []
    for outcome in itertools.product(factors, repeat=T):
        x = [s0]
        for f in outcome:
            x.append(x[-1] + f if additive else x[-1] * f)
        seqs.append(x)
    return build_tree(seqs)
