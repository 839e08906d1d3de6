"""Traffic density reconstruction from sparse probe-vehicle endpoints.

Pipeline: discretize a ground-truth initial density into a vehicle fleet,
evolve it with the follow-the-leader model, observe only the initial and
final positions of a small probe subset, fit the per-segment vehicle counts
by projected gradient descent through the unrolled Euler dynamics, and
reconstruct the moving-cell traffic density from the result.
"""

from .core import (AlphaBounds, AlphaVector, ConfigError, DomainError,
                   FleetConfig, InfeasibleError, ProbeObservations,
                   ScaleSystem, StepSizeError, TrafficReconError, VelocityMap,
                   greenshields, make_alpha_bounds)
from .datagen import (Dataset, DensityProfile, Scenario, custom_scenario,
                      discretize_positions, generate_dataset, load_dataset,
                      save_dataset, scenario_from_spec, shock_scenario,
                      sinusoidal_scenario, validate_alpha_assumption)
from .densityfield import (PiecewiseDensity, SpacetimeDensity, density_at,
                           discrete_density, spacetime_density, wasserstein_L1)
from .evaluate import (EvalReport, compare_to_godunov, convergence_study,
                       evaluate_reconstruction, godunov_reference, mse,
                       relative_error, test_simulate)
from .learn import (TrainConfig, TrainResult, adjoint_gradient, fit,
                    project_onto_feasible, train_loss)
from .macrosolver import GodunovGrid, godunov_flux, godunov_solve
from .microsim import (MaxPrincipleReport, ParametrizedSystem, TrajectoryField,
                       check_maximum_principle, ftl_full_simulate,
                       probe_forward, probe_forward_values)

__version__ = "0.1.0"
