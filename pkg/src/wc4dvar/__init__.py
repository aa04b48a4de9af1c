"""Weak-constraint four-dimensional variational assimilation toolkit.

Solvers for the time-parallel inner problem in its saddle-point, state
and forcing forms, a forced Burgers twin experiment to exercise them,
and an analytic cost model for comparing the variants on parallel
hardware they never actually ran on.
"""

from .burgers import (AssimilationProblem, BurgersConfig, generate_problem,
                      load_problem, save_problem)
from .costmodel import (MODES, CostParams, building_block_costs,
                        composite_costs, pi_p, variant_cost)
from .errors import (DimensionError, InstabilityError, IntegrityError,
                     LinesearchError, NumericalError, ParameterError)
from .experiments import (DEFAULT_VARIANTS, ExperimentGrid, MapCell,
                          ResultsStore, RunSummary, best_method_map,
                          cost_rows, load_store, read_trace_csv,
                          reference_optimum, run_matrix, save_store)
from .gaussnewton import GNControls, RunTrace, VariantSpec, run_variant
from .krylov import (InnerTrace, SolverControls, cg, fom_forcing,
                     fom_left_preconditioned, gmres_left_preconditioned)
from .operators import (BlockBidiagonal, BlockDiagonalSPD,
                        SelectionObservation, build_sqexp_covariance)

__version__ = "0.1.0"
