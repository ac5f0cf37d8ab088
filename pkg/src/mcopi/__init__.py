"""Monte Carlo optimistic policy iteration for structured finite MDPs."""

from .errors import (HorizonWithoutAbsorption, InvariantViolation,
                     MaxIterationsExceeded, McopiError, MdpFormatError,
                     NonContractive, StructureViolation)
from .mdp import (DISCOUNTED, GAME, SSP, InitialDistribution, Mdp,
                  load_clusters, load_mdp, load_model)
from .structure import (ReachabilityGraph, StructureReport, analyze,
                        build_reachability_graph, decompose_structure)
from .solvers import (OptimalActionSets, apply_bellman, apply_policy_bellman,
                      evaluate_policy_exact, greedy_policy,
                      optimal_action_sets, policy_iteration,
                      reach_probabilities, value_iteration)
from .opi import (FIRST_STATE_ONLY, TIME_BASED, TRAJECTORY_UPDATE,
                  VISIT_BASED, DiagnosticsTable, OpiConfig, OpiRunState,
                  RunResult, StepSchedule, Trajectory, TailEstimates,
                  estimator_diagnostics, first_visit_tail_costs,
                  initial_run_state, opi_iteration, run_opi,
                  simulate_trajectory, stream, truncation_horizon)
from .variants import (GameRunResult, GameSpec, NegaminForm, SspValidation,
                       load_game, negamin_transform, run_opi_game,
                       run_opi_ssp, solve_game_exact, solve_negamin,
                       validate_ssp)
from .aggregation import (AggregatedRunResult, ClusterMap, ClusterValidation,
                          ThetaVector, build_cluster_map,
                          cluster_reach_probabilities, run_opi_aggregated,
                          singleton_clusters, validate_clusters)
from .experiments import (BaseGraph, ComparisonResult, GeneratedExperiment,
                          GeneratorSpec, generate_experiment_mdp,
                          histogram_rows, load_base_graph, random_base_graph,
                          run_comparison)

__version__ = "0.1.0"
