"""Primal-dual toolkit for discounted constrained MDPs.

Modules
-------
core           tabular problem data, policies, exact evaluation
simplex        dense two-phase LP solver
oracle         occupation-measure LP oracle
sampling       seeded Monte Carlo estimation over generative environments
primal_dual    projected primal-dual mirror descent and its guarantees
decomposition  weakly coupled problems solved one subproblem at a time
inventory      multi-product replenishment environment with a shared budget
transport      exact integer transportation assignments
queueing       multi-class scheduling with overflow routing
harness        TOML-driven experiment runner and CLI
acceptance     release criteria as callable pass/fail checks
"""

from .acceptance import CriterionReport, run_all
from .core import (MixingPolicy, OccupationMeasure, StationaryPolicy,
                   TabularCMDP, ValueTables, costs_of_policy,
                   evaluate_policy_exact, mixing_to_stationary,
                   occupation_exact, performance_difference, uniform_policy,
                   validate, weighted_kl)
from .decomposition import (DecomposablePolicy, DecomposedRunResult,
                            ExactSubEvaluator, SubEvaluation, SubProblem,
                            WeaklyCoupledCMDP, joint_policy, product_cmdp,
                            run_decomposed, uniform_decomposable_policy)
from .inventory import (InventoryConfig, InventorySubEvaluator,
                        ProductInventoryEnv, build_tabular,
                        build_weakly_coupled, never_order_policy,
                        reduced_config, reference_config,
                        run_reference_experiment)
from .oracle import OracleSolution, check_complementary_slackness, solve_lp
from .primal_dual import (DualState, IterationRecord, RunResult, SolverConfig,
                          StepSchedule, TheoremConstants, dual_update,
                          policy_update, project_lambda, run,
                          slater_lambda_bound, theorem1_bounds, violation_norm)
from .harness import (ConfigError, ExperimentConfig, RateFit,
                      TheoremCheckReport, load_config, rate_regression,
                      run_experiment, theorem_check)
from .queueing import (QueueConfig, QueueExperimentConfig, QueueRunResult,
                       QueueState, evaluate_joint, reference_config as
                       reference_queue_config, run_queue_experiment,
                       scaled_config as scaled_queue_config, threshold_scan)
from .sampling import (MCConfig, QEstimate, ReturnsEstimate, StreamBundle,
                       TabularEnv, TabularPolicySampler, VectorEnv,
                       estimate_constraints, estimate_q, estimate_returns,
                       rng_stream)
from .transport import max_weight_assignment

__all__ = [name for name in dir() if not name.startswith("_")]
