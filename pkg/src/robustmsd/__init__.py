"""Robust multi-period mean-standard-deviation portfolios under KL uncertainty."""

from .core import (
    NominalModel,
    PortfolioSpec,
    ReturnSample,
    RiskProfile,
    Strategy,
    WealthPath,
    evaluate_objective,
)
from .errors import RobustMSDError
from .solver import HorizonSolution, PeriodSolution, solve_horizon, solve_period

__all__ = [
    "HorizonSolution",
    "NominalModel",
    "PeriodSolution",
    "PortfolioSpec",
    "ReturnSample",
    "RiskProfile",
    "RobustMSDError",
    "Strategy",
    "WealthPath",
    "evaluate_objective",
    "solve_horizon",
    "solve_period",
]

__version__ = "0.1.0"
