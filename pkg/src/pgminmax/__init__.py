"""Proximally guided stochastic solvers for weakly-convex-concave min-max problems."""
from .errors import ConfigurationError, ConvergenceError, DomainError, NumericalError, ParseError
from .geometry import (BregmanGeometry, DualRegularizer, PrimalConstraint, bregman_divergence,
                       composite_mirror_step, primal_prox_step, project)
from .problems import (DroProblem, DroTruncatedLogistic, ProblemConstants, QuadraticLoss, RobustMultiDist,
                       TruncatedLogisticLoss, component_grad, full_dual_payoff, inner_max_closed_form,
                       stoch_subgrad, truncated_logistic, weak_convexity_bound)
from .inner import OracleCounter, SaddleSubproblem, smd_solve, svrg_solve
from .outer import PgSchedule, RunTrace, pg_smd, pg_svrg, sample_output_index, theorem_T
from .baselines import PlConfig, StepSchedule, erm_sgd, pl_method, pl_step
from .stationarity import StationarityReport, moreau_grad_norm, moreau_prox, psi_value, stationarity_report
from .data_io import Dataset, TraceRow, imbalance_split, metrics, parse_libsvm, write_trace_csv

__version__ = "0.1.0"
