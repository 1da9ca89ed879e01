from ..geo import haversine
from .correlation import (
    CorrelationPoint,
    bin_by_distance,
    correlation_vs_distance,
    read_correlation_csv,
    write_correlation_csv,
)
from .expfit import ExpFitModel, FitError, NoKnee, fit_report, fit_two_term_exp, knee_distance
from .idw import Grid, GridError, grid_pgm, idw, idw_grid, rmse, sparse_subset_rmse, spread_subset, write_grid_csv
from .kendall import UndefinedCorrelation, kendall_tau

__all__ = [
    "CorrelationPoint",
    "ExpFitModel",
    "FitError",
    "Grid",
    "GridError",
    "NoKnee",
    "UndefinedCorrelation",
    "bin_by_distance",
    "correlation_vs_distance",
    "fit_report",
    "fit_two_term_exp",
    "grid_pgm",
    "haversine",
    "idw",
    "idw_grid",
    "kendall_tau",
    "knee_distance",
    "read_correlation_csv",
    "rmse",
    "sparse_subset_rmse",
    "spread_subset",
    "write_correlation_csv",
    "write_grid_csv",
]
