"""Monte Carlo solvers, exact oracles and property checks for quadratic BSDEs."""
from .drivers import (Driver, QuadraticEnvelope, SuperlinearEnvelope, check_assumption_A, get_driver,
                      normalize_envelope, validate_growth)
from .exceptions import *  # noqa: F401,F403
from .infconv import InfConvGrid, inf_convolution, infconv_values, tabulate_infconv
from .oracles import (TerminalFunction, cole_hopf_value, gaussian_expectation, get_terminal,
                      linear_bsde_value, truncate)
from .phi import (BoundsProfile, build_theta, compute_bounds, eval_F, eval_H, localization_times,
                  ode_oracle, phi_general, phi_linear)
from .regression import RegressionSpec
from .solver import (BsdeSolution, LSMCSolver, SolverConfig, energy_estimate, solve_l1,
                     solve_localized, solve_lsmc, solve_truncated_family)
from .stochastic import PathEnsemble, SeedSpec, TimeGrid, build_grid, simulate_brownian
from .verification import (CheckReport, check_comparison, check_monotone_family, check_sandwich,
                           estimate_norms)

__version__ = "0.1.0"
