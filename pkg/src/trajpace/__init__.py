"""Minmax pricing and arbitrage analysis on finite trajectory trees."""

from .analysis import (
    ContrarianResult,
    NodeClass,
    TreeClassification,
    classify_deltas,
    classify_node,
    classify_tree,
    detect_local_arbitrage,
    find_arbitrage_strategy,
    find_contrarian,
    verify_debt_limited,
)
from .errors import *  # noqa: F401,F403
from .generators import (
    ChartSeries,
    GridConfig,
    MartingaleSamplerConfig,
    build_bjn_set,
    enumerate_grid_set,
    ingest_chart,
    lattice_tree,
    random_tree,
    sample_grid_set,
    sample_martingale_set,
    validate_grid_path,
)
from .market import (
    DebtLimitConfig,
    Market,
    PathHorizon,
    Portfolio,
    PortfolioConstraint,
    bank_account_path,
    horizon_gains,
    fast_trend_transform,
    gains_process,
    portfolio_sum,
    satisfies_pairing,
)
from .pricing import (
    AttainabilityReport,
    MinmaxCertificate,
    Payoff,
    PriceBounds,
    brute_force_bounds,
    check_attainability,
    classify_payoff_minmax,
    merton_check,
    price_bounds,
    solve_local_minmax,
)
from .tree import (
    StoppingTime,
    TrajectoryTree,
    build_tree,
    children_deltas,
    conditional_set,
    stopped_tree,
)

__version__ = "0.1.0"
