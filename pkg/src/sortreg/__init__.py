"""Portfolio sorting as nonparametric partition regression."""

from .estimator import FitSeries, PeriodFit, fit_panel, fit_period, linear_functional, mu_hat, mu_hat_t
from .inference import (TestResult, VarianceEstimate, beta_fm_inference, infeasible_variance,
                        t_test_hml, var_fm, var_pi)
from .panel import Panel, PanelPeriod, log_by_period, panel_from_arrays, validate, zscore_by_period
from .portfolio import Partition, assign_cells, form_partition, marginal_breakpoints
from .tuning import TuningResult, bias_constant_hat, select_j_factor, select_j_star, variance_constants_hat

__version__ = "0.1.0"
