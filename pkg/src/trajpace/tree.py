"""Finite trajectory sets stored as prefix trees of (price, w) pairs.

A node stands for every trajectory sharing the history from the root down to
it, so conditioning on a node is just taking its subtree.  Node ids are dense,
start at 0 for the root and every parent id precedes its children; most
algorithms rely on that ordering to sweep the tree forwards or backwards
without recursion.

Paths are plain tuples of node ids running from the root to a terminal node.
"""

from __future__ import annotations

import hashlib
import json
import math
import weakref
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyInput,
    InconsistentRoot,
    InputError,
    PrefixConflict,
    TerminalNode,
    UnknownNode,
)

__all__ = [
    "TrajectoryTree",
    "StoppingTime",
    "build_tree",
    "conditional_set",
    "children_deltas",
    "stopped_tree",
    "freeze_w",
]

Path = tuple[int, ...]


def freeze_w(w: Any) -> Hashable:
    """Turn a JSON-ish w value into a hashable one (lists become tuples)."""
    if isinstance(w, (list, tuple)):
        return tuple(freeze_w(x) for x in w)
    if isinstance(w, np.generic):
        return w.item()
    if isinstance(w, dict):
        return tuple(sorted((k, freeze_w(v)) for k, v in w.items()))
    return w


def _thaw_w(w: Any) -> Any:
    if isinstance(w, tuple):
        return [_thaw_w(x) for x in w]
    if isinstance(w, bytes):
        return w.hex()
    return w


@dataclass(frozen=True, eq=False)
class TrajectoryTree:
    """Immutable prefix tree.  Use :func:`build_tree` or :meth:`from_dict`.

    ``depth`` is absolute: a tree obtained by conditioning at a depth-k node
    has a root of depth k.  ``origin`` maps ids back to the tree this one was
    cut from, when there is one.  ``meta`` holds optional per-node columns
    such as grid indices or attached probabilities.
    """

    parent: np.ndarray
    depth: np.ndarray
    price: np.ndarray
    w: tuple
    children: tuple[tuple[int, ...], ...]
    meta: Mapping[str, tuple] = field(default_factory=dict)
    origin: np.ndarray | None = None

    def __post_init__(self) -> None:
        for arr in (self.parent, self.depth, self.price, self.origin):
            if arr is not None:
                arr.setflags(write=False)

    # basic accessors

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def root(self) -> int:
        return 0

    @property
    def s0(self) -> float:
        return float(self.price[0])

    @property
    def w0(self) -> Hashable:
        return self.w[0]

    @property
    def base_depth(self) -> int:
        return int(self.depth[0])

    @cached_property
    def is_terminal(self) -> np.ndarray:
        mask = np.array([len(c) == 0 for c in self.children], dtype=bool)
        mask.setflags(write=False)
        return mask

    @cached_property
    def terminals(self) -> np.ndarray:
        return np.flatnonzero(self.is_terminal)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def check_node(self, node: int) -> int:
        if not isinstance(node, (int, np.integer)) or not 0 <= node < self.n_nodes:
            raise UnknownNode(f"node {node!r} is not in the tree ({self.n_nodes} nodes)")
        return int(node)

    def path_to(self, node: int) -> Path:
        """Node ids from the root down to ``node`` inclusive."""
        node = self.check_node(node)
        out = []
        while node >= 0:
            out.append(node)
            node = int(self.parent[node])
        return tuple(reversed(out))

    @cached_property
    def paths(self) -> tuple[Path, ...]:
        """All root-to-terminal paths, in depth-first order."""
        return tuple(self.paths_through(0))

    def paths_through(self, node: int) -> list[Path]:
        """Full paths (starting at the root) that pass through ``node``."""
        prefix = self.path_to(node)
        out: list[Path] = []
        stack = [(node, prefix)]
        while stack:
            v, pre = stack.pop()
            kids = self.children[v]
            if not kids:
                out.append(pre)
                continue
            for c in reversed(kids):
                stack.append((c, pre + (c,)))
        return out

    def subtree(self, node: int) -> list[int]:
        """Ids of ``node`` and all its descendants in pre-order."""
        node = self.check_node(node)
        out = []
        stack = [node]
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(reversed(self.children[v]))
        return out

    def sequences(self) -> list[list[tuple[float, Hashable]]]:
        """Every trajectory as its list of (price, w) pairs."""
        return [[(float(self.price[v]), self.w[v]) for v in p] for p in self.paths]

    # interchange

    def to_dict(self) -> dict:
        nodes = []
        for v in range(self.n_nodes):
            rec = {
                "id": v,
                "parent": None if self.parent[v] < 0 else int(self.parent[v]),
                "price": float(self.price[v]),
                "w": _thaw_w(self.w[v]),
                "terminal": bool(self.is_terminal[v]),
            }
            for key, col in self.meta.items():
                if col[v] is not None:
                    rec[key] = col[v]
            nodes.append(rec)
        return {"s0": self.s0, "w0": _thaw_w(self.w0), "nodes": nodes}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrajectoryTree":
        """Rebuild a tree from its JSON form, checking every structural rule."""
        try:
            records = list(data["nodes"])
            s0 = float(data["s0"])
            w0 = freeze_w(data.get("w0"))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed tree document: {exc}") from exc
        if not records:
            raise EmptyInput("tree document has no nodes")
        n = len(records)
        parent = np.full(n, -1, dtype=np.int64)
        depth = np.zeros(n, dtype=np.int64)
        price = np.zeros(n, dtype=np.float64)
        ws: list[Hashable] = [None] * n
        kids: list[list[int]] = [[] for _ in range(n)]
        std = {"id", "parent", "price", "w", "terminal"}
        meta_cols: dict[str, list] = {}
        for i, rec in enumerate(records):
            if rec.get("id") != i:
                raise InputError(f"node ids must be dense and ordered; got {rec.get('id')!r} at {i}")
            par = rec.get("parent")
            if i == 0:
                if par is not None:
                    raise InputError("node 0 must be the root")
            else:
                if par is None or not isinstance(par, int) or not 0 <= par < i:
                    raise InputError(f"node {i}: parent must precede the child")
                parent[i] = par
                depth[i] = depth[par] + 1
                kids[par].append(i)
            price[i] = float(rec["price"])
            if not math.isfinite(price[i]):
                raise InputError(f"node {i}: price must be finite")
            ws[i] = freeze_w(rec.get("w"))
            for key in rec.keys() - std:
                meta_cols.setdefault(key, [None] * n)[i] = rec[key]
        if price[0] != s0 or ws[0] != w0:
            raise InconsistentRoot("root node disagrees with s0/w0")
        for i, rec in enumerate(records):
            if bool(rec.get("terminal")) != (len(kids[i]) == 0):
                raise InputError(f"node {i}: terminal flag disagrees with its children")
            seen = set()
            for c in kids[i]:
                key = (price[c], ws[c])
                if key in seen:
                    raise InputError(f"node {i}: two children share (price, w) = {key}")
                seen.add(key)
        return cls(parent, depth, price, tuple(ws), tuple(tuple(k) for k in kids),
                   {k: tuple(v) for k, v in meta_cols.items()})

    @classmethod
    def from_json(cls, text: str) -> "TrajectoryTree":
        return cls.from_dict(json.loads(text))


def _split_point(item: Any) -> tuple[float, Hashable]:
    if isinstance(item, (tuple, list)) and len(item) == 2:
        return float(item[0]), freeze_w(item[1])
    return float(item), None


def build_tree(trajectories: Iterable[Sequence[Any]],
               meta: Mapping[str, Callable[[Sequence], Sequence]] | None = None) -> TrajectoryTree:
    """Canonical prefix tree of a finite set of (price, w) sequences.

    Items may also be bare prices, in which case w is ``None``.  Duplicates
    collapse; a sequence that is a strict prefix of another is rejected.
    ``meta`` maps a column name to a function returning one value per element
    of a sequence; the first value seen for a node wins.
    """
    parent: list[int] = []
    depth: list[int] = []
    price: list[float] = []
    ws: list[Hashable] = []
    kids: list[dict] = []
    ends: list[bool] = []
    meta = dict(meta or {})
    cols: dict[str, list] = {k: [] for k in meta}

    count = 0
    for seq in trajectories:
        seq = list(seq)
        if not seq:
            raise EmptyInput("trajectory sequences must be non-empty")
        points = [_split_point(x) for x in seq]
        extra = {k: list(fn(seq)) for k, fn in meta.items()}
        for x, _ in points:
            if not math.isfinite(x):
                raise InputError("prices must be finite")
        if count == 0:
            parent.append(-1); depth.append(0); price.append(points[0][0])
            ws.append(points[0][1]); kids.append({}); ends.append(False)
            for k in cols:
                cols[k].append(extra[k][0])
        elif (price[0], ws[0]) != points[0]:
            raise InconsistentRoot(f"sequence starts at {points[0]}, expected {(price[0], ws[0])}")
        count += 1
        v = 0
        for i, key in enumerate(points[1:], start=1):
            if ends[v]:
                raise PrefixConflict("a trajectory is a strict prefix of another")
            nxt = kids[v].get(key)
            if nxt is None:
                nxt = len(parent)
                kids[v][key] = nxt
                parent.append(v); depth.append(depth[v] + 1); price.append(key[0])
                ws.append(key[1]); kids.append({}); ends.append(False)
                for k in cols:
                    cols[k].append(extra[k][i])
            v = nxt
        if kids[v]:
            raise PrefixConflict("a trajectory is a strict prefix of another")
        ends[v] = True
    if count == 0:
        raise EmptyInput("no trajectories given")
    return TrajectoryTree(
        np.array(parent, dtype=np.int64),
        np.array(depth, dtype=np.int64),
        np.array(price, dtype=np.float64),
        tuple(ws),
        tuple(tuple(k.values()) for k in kids),
        {k: tuple(v) for k, v in cols.items()},
    )


def _restrict(tree: TrajectoryTree, keep: Sequence[int]) -> TrajectoryTree:
    """Sub-tree on ``keep`` (parent-before-child order, closed under parents)."""
    keep = list(keep)
    remap = {old: new for new, old in enumerate(keep)}
    parent = np.array([remap.get(int(tree.parent[v]), -1) for v in keep], dtype=np.int64)
    kids: list[list[int]] = [[] for _ in keep]
    for new, old in enumerate(keep):
        for c in tree.children[old]:
            if c in remap:
                kids[new].append(remap[c])
    origin = np.array(keep, dtype=np.int64)
    if tree.origin is not None:
        origin = tree.origin[origin]
    return TrajectoryTree(
        parent,
        tree.depth[keep].copy(),
        tree.price[keep].copy(),
        tuple(tree.w[v] for v in keep),
        tuple(tuple(k) for k in kids),
        {k: tuple(col[v] for v in keep) for k, col in tree.meta.items()},
        origin,
    )


def conditional_set(tree: TrajectoryTree, node: int) -> TrajectoryTree:
    """The trajectories through ``node``, rooted there (depths stay absolute)."""
    return _restrict(tree, tree.subtree(node))


def children_deltas(tree: TrajectoryTree, node: int) -> np.ndarray:
    """Price change to each child, in child order."""
    node = tree.check_node(node)
    kids = tree.children[node]
    if not kids:
        raise TerminalNode(f"node {node} is terminal")
    return tree.price[list(kids)] - tree.price[node]


class StoppingTime:
    """A rule deciding, node by node, whether a trajectory stops there.

    The decision reads a single node, hence only the history up to it, so the
    induced per-path time is automatically non-anticipative.  When no node on
    a path stops, the time defaults to the depth of its terminal node.

    Build instances with the class methods; ``maximum``/``minimum`` combine two
    stopping times.
    """

    _SERIALIZABLE = ("terminal", "fixed", "nodes", "level")

    def __init__(self, kind: str, **params: Any):
        self.kind = kind
        self.params = params
        self._cache: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()

    @classmethod
    def terminal(cls) -> "StoppingTime":
        return cls("terminal")

    @classmethod
    def fixed(cls, n: int) -> "StoppingTime":
        if int(n) != n or n < 0:
            raise InputError(f"fixed stopping depth must be a non-negative integer, got {n!r}")
        return cls("fixed", depth=int(n))

    @classmethod
    def at_nodes(cls, nodes: Iterable[int]) -> "StoppingTime":
        return cls("nodes", nodes=frozenset(int(v) for v in nodes))

    @classmethod
    def hitting(cls, level: float, above: bool = True) -> "StoppingTime":
        return cls("level", level=float(level), above=bool(above))

    @classmethod
    def from_predicate(cls, fn: Callable[[TrajectoryTree, int], bool]) -> "StoppingTime":
        return cls("predicate", fn=fn)

    @classmethod
    def maximum(cls, a: "StoppingTime", b: "StoppingTime") -> "StoppingTime":
        return cls("max", parts=(a, b))

    @classmethod
    def minimum(cls, a: "StoppingTime", b: "StoppingTime") -> "StoppingTime":
        return cls("min", parts=(a, b))

    def __repr__(self) -> str:
        shown = {k: v for k, v in self.params.items() if k != "fn"}
        return f"StoppingTime({self.kind!r}, {shown})"

    def _fires(self, tree: TrajectoryTree) -> np.ndarray:
        k = self.kind
        if k == "terminal":
            return np.zeros(tree.n_nodes, dtype=bool)
        if k == "fixed":
            return tree.depth >= self.params["depth"]
        if k == "level":
            lvl = self.params["level"]
            return tree.price >= lvl if self.params["above"] else tree.price <= lvl
        if k == "nodes":
            mask = np.zeros(tree.n_nodes, dtype=bool)
            ids = [v for v in self.params["nodes"] if 0 <= v < tree.n_nodes]
            mask[ids] = True
            return mask
        if k == "predicate":
            fn = self.params["fn"]
            return np.array([bool(fn(tree, v)) for v in range(tree.n_nodes)], dtype=bool)
        raise InputError(f"unknown stopping-time kind {k!r}")

    def resolve(self, tree: TrajectoryTree) -> np.ndarray:
        """Per node: the stopping depth if already decided there, else -1.

        A node whose value is -1 lies strictly before the stopping time on
        every path through it.  Terminal nodes are always decided.
        """
        hit = self._cache.get(tree)
        if hit is not None:
            return hit
        if self.kind in ("max", "min"):
            r1, r2 = (p.resolve(tree) for p in self.params["parts"])
            if self.kind == "max":
                res = np.where((r1 >= 0) & (r2 >= 0), np.maximum(r1, r2), -1)
            else:
                both = np.minimum(np.where(r1 >= 0, r1, np.iinfo(np.int64).max),
                                  np.where(r2 >= 0, r2, np.iinfo(np.int64).max))
                res = np.where((r1 >= 0) | (r2 >= 0), both, -1)
        else:
            fires = self._fires(tree)
            res = np.full(tree.n_nodes, -1, dtype=np.int64)
            par, dep = tree.parent, tree.depth
            for v in range(tree.n_nodes):
                p = par[v]
                if p >= 0 and res[p] >= 0:
                    res[v] = res[p]
                elif fires[v]:
                    res[v] = dep[v]
            term = tree.is_terminal & (res < 0)
            res[term] = dep[term]
        res = res.astype(np.int64)
        res.setflags(write=False)
        self._cache[tree] = res
        return res

    def trading_mask(self, tree: TrajectoryTree) -> np.ndarray:
        """Nodes strictly before the stopping time (where holdings still count)."""
        return self.resolve(tree) < 0

    def nu(self, tree: TrajectoryTree, path: Path) -> int:
        return int(self.resolve(tree)[path[-1]])

    def stopping_nodes(self, tree: TrajectoryTree) -> np.ndarray:
        """Nodes at which a path's stopping time is reached."""
        res = self.resolve(tree)
        return np.flatnonzero(res == tree.depth)

    # serialization

    def to_dict(self) -> dict:
        if self.kind == "terminal":
            return {"kind": "terminal"}
        if self.kind == "fixed":
            return {"kind": "fixed", "depth": self.params["depth"]}
        if self.kind == "nodes":
            return {"kind": "nodes", "nodes": sorted(self.params["nodes"])}
        if self.kind == "level":
            return {"kind": "level", "level": self.params["level"], "above": self.params["above"]}
        if self.kind in ("max", "min"):
            return {"kind": self.kind, "parts": [p.to_dict() for p in self.params["parts"]]}
        raise InputError("predicate stopping times cannot be serialized")

    @classmethod
    def from_dict(cls, data: Mapping) -> "StoppingTime":
        try:
            kind = data["kind"]
            if kind == "terminal":
                return cls.terminal()
            if kind == "fixed":
                return cls.fixed(data.get("depth", data.get("n")))
            if kind == "nodes":
                return cls.at_nodes(data["nodes"])
            if kind == "level":
                return cls.hitting(data["level"], data.get("above", True))
            if kind in ("max", "min"):
                a, b = (cls.from_dict(p) for p in data["parts"])
                return cls.maximum(a, b) if kind == "max" else cls.minimum(a, b)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed stopping-time document: {exc}") from exc
        raise InputError(f"unknown stopping-time kind {data.get('kind')!r}")

    @classmethod
    def parse(cls, spec: str) -> "StoppingTime":
        """Compact text form: ``terminal``, ``fixed:N``, ``level:X``,
        ``level_below:X`` or ``nodes:1;2;3``."""
        spec = spec.strip()
        name, _, arg = spec.partition(":")
        try:
            if name == "terminal" and not arg:
                return cls.terminal()
            if name == "fixed":
                return cls.fixed(int(arg))
            if name == "level":
                return cls.hitting(float(arg), True)
            if name == "level_below":
                return cls.hitting(float(arg), False)
            if name == "nodes":
                return cls.at_nodes(int(x) for x in arg.replace(";", ",").split(",") if x)
        except ValueError as exc:
            raise InputError(f"bad stopping-time spec {spec!r}: {exc}") from exc
        raise InputError(f"bad stopping-time spec {spec!r}")


def stopped_tree(tree: TrajectoryTree, nu: StoppingTime) -> TrajectoryTree:
    """Every trajectory cut at its stopping time, re-assembled as a prefix tree.

    Since stopping is decided node by node, cutting paths is the same as
    pruning everything strictly below the nodes where the time is reached.
    """
    res = nu.resolve(tree)
    keep = [v for v in range(tree.n_nodes) if v == 0 or res[tree.parent[v]] < 0]
    return _restrict(tree, keep)
