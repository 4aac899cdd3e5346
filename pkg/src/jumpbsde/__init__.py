"""Quadratic BSDEs with jumps on discrete lattices, and the exponential-utility
portfolio problem they solve.

Core layers:

* :mod:`jumpbsde.levy`      -- atomic jump measures, truncation, jump functional
* :mod:`jumpbsde.market`    -- coefficients, constraints, price/wealth steps
* :mod:`jumpbsde.generator` -- the driver family and its inner minimization
* :mod:`jumpbsde.lattice`   -- binomial-plus-jumps lattice (tree / markov)
* :mod:`jumpbsde.bsde`      -- backward induction solver and a-priori checks
* :mod:`jumpbsde.cascade`   -- terminal splitting, truncation schedule, transport
* :mod:`jumpbsde.utility`   -- value process, optimal strategy, verification

Service layer: :mod:`jumpbsde.service` exposes the runs over HTTP (FastAPI);
:mod:`jumpbsde.cli` is a thin client writing the returned artifacts to disk.
"""

from .levy import (
    JumpGrid,
    equivalence_constant,
    g_alpha,
    g_alpha_prime,
    grid_from_json,
    grid_to_json,
    l2_norm_sq,
    linf_norm,
    truncate,
    u_alpha_norm,
)
from .market import Coefficient, ConstraintSet, MarketSpec, step_price, step_wealth, theta
from .generator import (
    GeneratorSpec,
    f_eval,
    f_km_eval,
    f_m_eval,
    f_1m_eval,
    f_tilde_eval,
    gamma_eval,
    lambda_slope,
    minimize_over_C,
    portfolio_argmin,
    smoothstep_cut,
)
from .lattice import Lattice, build as build_lattice
from .bsde import BsdeSolution, check_apriori, picard_residual, solve
from .cascade import (
    CascadeConfig,
    CascadeTrace,
    change_of_variables,
    compute_N,
    solve_quadratic,
    truncate_terminal,
)
from .utility import (
    A_process,
    OptimalityReport,
    optimal_strategy,
    value_function,
    verify_optimality,
)

__version__ = "0.1.0"
