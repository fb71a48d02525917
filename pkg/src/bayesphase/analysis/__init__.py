"""Calibration, fitting, error budgets and Monte-Carlo sweeps."""

from .calibration import (DiffusionFit, FitError, allan_deviation, calibrate_diffusion,
                          increment_std, increment_std_ci)
from .fits import ParityFit, VisibilityFit, fit_parity, fit_visibility, visibility_from_counts
from .parity import ParityBudget, bessel_j0, parity_contrast
from .sweeps import (flux_sweep, in_advantage_region, kappa_optimum, kappa_sweep, mc_variance,
                     min_over_tau, single_band_servo, small_tau_variance, variance_surface)
from .tables import PRIOR_TABLE, check_prior_table, loglog_slope, rows_to_csv, rows_to_json

__all__ = [
    "DiffusionFit", "FitError", "allan_deviation", "calibrate_diffusion", "increment_std",
    "increment_std_ci", "ParityFit", "VisibilityFit", "fit_parity", "fit_visibility",
    "visibility_from_counts", "ParityBudget", "bessel_j0", "parity_contrast", "flux_sweep",
    "in_advantage_region", "kappa_optimum", "kappa_sweep", "mc_variance", "min_over_tau",
    "single_band_servo", "small_tau_variance", "variance_surface", "PRIOR_TABLE",
    "check_prior_table", "loglog_slope", "rows_to_csv", "rows_to_json",
]
