"""Optimal portfolios and arbitrage under initially enlarged filtrations."""

from insiderlab.drift import InsiderInfo, alpha_exact, alpha_indicator, alpha_on_path, conditional_mass
from insiderlab.market import (
    AssetPaths,
    BrownianPath,
    MarketParams,
    TimeGrid,
    asset_paths,
    make_grid,
    sample_bridge,
    sample_brownian,
)
from insiderlab.utility import Estimate, UtilitySpec

__version__ = "0.1.0"

__all__ = [
    "AssetPaths",
    "BrownianPath",
    "Estimate",
    "InsiderInfo",
    "MarketParams",
    "TimeGrid",
    "UtilitySpec",
    "alpha_exact",
    "alpha_indicator",
    "alpha_on_path",
    "asset_paths",
    "conditional_mass",
    "make_grid",
    "sample_bridge",
    "sample_brownian",
]
