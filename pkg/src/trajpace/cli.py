"""Command-line front end.

Every command prints a JSON run report (or writes it to ``--out``).  Exit
codes: 0 success, 1 domain failure, 2 bad input or usage.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Any

import jsonschema

from .analysis import (
    classify_tree,
    detect_local_arbitrage,
    find_arbitrage_strategy,
    find_contrarian,
)
from .errors import DomainError, InputError, TrajpaceError
from .generators import (
    ChartSeries,
    GridConfig,
    MartingaleSamplerConfig,
    build_bjn_set,
    enumerate_grid_set,
    ingest_chart,
    sample_grid_set,
    sample_martingale_set,
)
from .market import Market, Portfolio, PortfolioConstraint
from .pricing import Payoff, check_attainability, price_bounds
from .tree import StoppingTime, TrajectoryTree, build_tree, stopped_tree
from .verification import SUITES, run_suite

TREE_SCHEMA = {
    "type": "object",
    "required": ["s0", "nodes"],
    "properties": {
        "s0": {"type": "number"},
        "w0": {},
        "nodes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "parent", "price", "terminal"],
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "parent": {"type": ["integer", "null"], "minimum": 0},
                    "price": {"type": "number"},
                    "w": {},
                    "terminal": {"type": "boolean"},
                },
            },
        },
    },
}


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(message)


# input helpers

def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def _load_tree(path: str) -> TrajectoryTree:
    doc = _read_json(path)
    # a run report that carries a tree is accepted too
    if isinstance(doc, dict) and "nodes" not in doc and isinstance(doc.get("results"), dict):
        doc = doc["results"].get("tree", doc)
    try:
        jsonschema.validate(doc, TREE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "document"
        raise InputError(f"{path}: {where}: {exc.message}") from None
    return TrajectoryTree.from_dict(doc)


def _file_digest(path: str) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def _horizon(spec: str | None) -> StoppingTime:
    if spec is None:
        return StoppingTime.terminal()
    if spec.startswith("spec:"):
        return StoppingTime.from_dict(_read_json(spec[5:]))
    if spec.endswith(".json") and Path(spec).exists():
        return StoppingTime.from_dict(_read_json(spec))
    return StoppingTime.parse(spec)


def _market(args) -> Market:
    return Market(_load_tree(args.tree), PortfolioConstraint.parse(args.constraint),
                  _horizon(args.horizon), args.liquidate)


def _save_tree(tree: TrajectoryTree, path: str | None) -> None:
    if path:
        Path(path).write_text(tree.to_json(sort_keys=True))


def _emit_paths(rows: list[list[float]], path: str | None) -> None:
    """CSV of (path, depth, price) rows for plotting."""
    if not path:
        return
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["path", "depth", "price"])
        for i, prices in enumerate(rows):
            for k, x in enumerate(prices):
                out.writerow([i, k, repr(float(x))])


def _tree_rows(tree: TrajectoryTree) -> list[list[float]]:
    return [[float(tree.price[v]) for v in p] for p in tree.paths]


def _tree_summary(tree: TrajectoryTree) -> dict:
    return {"digest": tree.digest(), "nodes": tree.n_nodes, "paths": len(tree.paths),
            "max_depth": tree.max_depth}


# commands; each returns (results, exit code)

def cmd_build(args):
    cfg = GridConfig.load(args.config)
    tree = build_bjn_set(cfg) if args.mode == "qv" else enumerate_grid_set(cfg)
    _save_tree(tree, args.save_tree)
    _emit_paths(_tree_rows(tree), args.emit_paths)
    return {"config": cfg.to_dict(), "mode": args.mode, **_tree_summary(tree),
            "tree": tree.to_dict()}, 0


def cmd_sample(args):
    cfg = GridConfig.load(args.config)
    tree = sample_grid_set(cfg, args.n_paths, args.seed)
    _save_tree(tree, args.save_tree)
    _emit_paths(_tree_rows(tree), args.emit_paths)
    return {"config": cfg.to_dict(), "n": args.n_paths, **_tree_summary(tree),
            "tree": tree.to_dict()}, 0


def cmd_sample_mart(args):
    data = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        data["seed"] = args.seed
    if args.n_paths is not None:
        data["n_paths"] = args.n_paths
    cfg = MartingaleSamplerConfig.from_dict(data)
    tree = sample_martingale_set(cfg)
    _save_tree(tree, args.save_tree)
    _emit_paths(_tree_rows(tree), args.emit_paths)
    return {"config": dict(cfg.__dict__), **_tree_summary(tree), "tree": tree.to_dict()}, 0


def cmd_ingest(args):
    cfg = GridConfig.load(args.config)
    series = ChartSeries.read_csv(args.chart, log_prices=args.log_prices)
    traj = ingest_chart(series, cfg)
    tree = build_tree([traj.sequence()])
    _save_tree(tree, args.save_tree)
    _emit_paths([list(traj.prices)], args.emit_paths)
    return {"trajectory": traj.to_dict(), "tree": tree.to_dict()}, 0


def cmd_classify(args):
    tree = _load_tree(args.tree)
    return classify_tree(tree).to_dict(), 0


def cmd_price(args):
    m = _market(args)
    pb = price_bounds(m, Payoff.parse(args.payoff), args.anchor)
    return {"payoff": args.payoff, "constraint": m.constraint.to_spec(),
            "horizon": m.horizon.to_dict(), **pb.to_dict()}, 0


def cmd_hedge(args):
    m = _market(args)
    payoff = Payoff.parse(args.payoff)
    pb = price_bounds(m, payoff, args.anchor)
    out = {"payoff": args.payoff, **pb.to_dict(),
           "upper_hedge": pb.upper_hedge.to_dict(), "lower_hedge": pb.lower_hedge.to_dict()}
    if pb.finite:
        out["attainability"] = check_attainability(m, payoff, args.anchor, pb).to_dict()
    return out, 0


def cmd_contrarian(args):
    tree = _load_tree(args.tree)
    p = Portfolio.from_dict(_read_json(args.portfolio)) if args.portfolio else Portfolio()
    r = find_contrarian(tree, p, args.anchor, args.epsilon)
    arb = detect_local_arbitrage(tree, p)
    if r is None:
        return {"found": False, "epsilon": args.epsilon, "local_arbitrage_nodes": arb}, 1
    return {"found": True, **r.to_dict(), "local_arbitrage_nodes": arb}, 0


def cmd_arbitrage(args):
    m = _market(args)
    p = find_arbitrage_strategy(m, budget=args.budget, method=args.method)
    return {"constraint": m.constraint.to_spec(), "arbitrage": p is not None,
            "strategy": None if p is None else p.to_dict()}, 0


def cmd_stopped(args):
    tree = _load_tree(args.tree)
    nu = _horizon(args.horizon)
    st = stopped_tree(tree, nu)
    _save_tree(st, args.save_tree)
    c = classify_tree(st)
    return {"stopping_time": nu.to_dict(), **_tree_summary(st),
            "locally_0_neutral": c.locally_0_neutral,
            "locally_arbitrage_free": c.locally_arbitrage_free, "tree": st.to_dict()}, 0


def cmd_verify(args):
    rep = run_suite(args.suite, seed=args.seed, cases=args.cases, depth=args.depth)
    return rep.to_dict(), 0 if rep.ok else 1


# parser

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="trajpace", description="Minmax pricing on trajectory trees.")
    ap.add_argument("--out", help="write the JSON report here instead of stdout")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--out", default=argparse.SUPPRESS,
                       help="write the JSON report here instead of stdout")
        return p

    def market_flags(p):
        p.add_argument("--tree", required=True)
        p.add_argument("--constraint", default="unconstrained",
                       help="unconstrained | interval:lo,hi | grid:tick,bound")
        p.add_argument("--horizon", default=None,
                       help="terminal | fixed:N | level:X | nodes:a;b | spec:FILE")
        p.add_argument("--liquidate", action="store_true", help="liquidate at the horizon")

    def output_flags(p):
        p.add_argument("--save-tree", help="also write the tree JSON here")
        p.add_argument("--emit-paths", help="write (path, depth, price) rows to this CSV")

    p = add("build", cmd_build, "enumerate a grid trajectory set")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=["grid", "qv"], default="grid",
                   help="qv: w is the running quadratic variation")
    output_flags(p)

    p = add("sample", cmd_sample, "sample random grid trajectories")
    p.add_argument("--config", required=True)
    p.add_argument("--n-paths", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    output_flags(p)

    p = add("sample-mart", cmd_sample_mart, "sample a martingale trajectory set")
    p.add_argument("--config")
    p.add_argument("--n-paths", type=int)
    p.add_argument("--seed", type=int)
    output_flags(p)

    p = add("ingest", cmd_ingest, "map an observed chart onto a grid")
    p.add_argument("--chart", required=True, help="CSV of (timestamp, value)")
    p.add_argument("--config", required=True)
    p.add_argument("--log-prices", action="store_true")
    output_flags(p)

    p = add("classify", cmd_classify, "classify every node of a tree")
    p.add_argument("--tree", required=True)

    for name, fn, text in (("price", cmd_price, "minmax price bounds"),
                           ("hedge", cmd_hedge, "bounds with hedges and attainability")):
        p = add(name, fn, text)
        market_flags(p)
        p.add_argument("--payoff", required=True,
                       help="call:K= | put:K= | lookback:a=,b= | asian | stock_at:tau= | const:c=")
        p.add_argument("--anchor", type=int, default=0)

    p = add("contrarian", cmd_contrarian, "find a trajectory on which a portfolio gains < epsilon")
    p.add_argument("--tree", required=True)
    p.add_argument("--portfolio", help="portfolio JSON")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--anchor", type=int, default=0)

    p = add("arbitrage", cmd_arbitrage, "search for an arbitrage strategy")
    market_flags(p)
    p.add_argument("--method", choices=["auto", "local", "enumerate"], default="auto")
    p.add_argument("--budget", type=int)

    p = add("stopped", cmd_stopped, "cut every trajectory at a stopping time")
    p.add_argument("--tree", required=True)
    p.add_argument("--horizon", required=True, help="stopping time spec")
    p.add_argument("--save-tree")

    p = add("verify", cmd_verify, "run a seeded property suite")
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--depth", type=int)
    return ap


def _digests(args) -> dict:
    out = {}
    for key in ("tree", "config", "portfolio", "chart"):
        path = getattr(args, key, None)
        if path:
            out[key] = _file_digest(path)
    return out


def _error(exc: TrajpaceError) -> dict:
    out = {"error": type(exc).__name__, "message": str(exc)}
    for key in ("hypothesis", "node", "required", "budget"):
        val = getattr(exc, key, None)
        if val is not None:
            out[key] = val
    if getattr(exc, "path", None) is not None:
        out["path"] = list(exc.path)
    return out


def _json_default(x):
    if hasattr(x, "item"):
        return x.item()
    if isinstance(x, (set, frozenset, tuple)):
        return list(x)
    return str(x)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    start = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"trajpace: {exc}", file=sys.stderr)
        return 2
    report: dict[str, Any] = {"command": argv}
    try:
        report["input_digests"] = _digests(args)
        results, code = args.func(args)
    except InputError as exc:
        print(f"trajpace: {exc}", file=sys.stderr)
        results, code = _error(exc), 2
    except DomainError as exc:
        print(f"trajpace: {exc}", file=sys.stderr)
        results, code = _error(exc), 1
    report.setdefault("input_digests", {})
    report["results"] = results
    report["exit_code"] = code
    report["wall_time"] = round(time.perf_counter() - start, 6)
    text = json.dumps(report, sort_keys=True, indent=2, default=_json_default)
    out = getattr(args, "out", None)
    if out:
        try:
            Path(out).write_text(text + "\n")
        except OSError as exc:
            print(f"trajpace: cannot write {out}: {exc.strerror}", file=sys.stderr)
            return 2
    else:
        print(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
