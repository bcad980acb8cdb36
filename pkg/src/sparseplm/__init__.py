"""Penalized LAD estimation of partial linear models with sparse ReLU networks."""

from .errors import (ConfigError, DegenerateDataError, DivergenceError,
                     IllConditionedError, InfeasibleError)
from .network import (NetworkArch, PlmParams, WeightStack, forward,
                      forward_batch, input_jacobian, output_bound_exceeded,
                      param_subgradient, predict, random_weights)
from .objective import (PenaltySpec, SurrogateSpec, default_layer_weights,
                        exact_objective, l0_count, l0_objective, lad_risk,
                        penalty_subgradient, penalty_value, relaxed_objective,
                        surrogate_subgradient, surrogate_value)
from .projection import (benefit, clip_box, project_box_beta, project_exact,
                         project_relaxed, project_sparse_box,
                         sparse_box_project)
from .datagen import (Batch, Dataset, GenConfig, error_density_at_zero,
                      generate, true_g, true_g_batch)
from .solver import (FitTrace, SolverConfig, StepSchedule, TraceRecord,
                     final_objective, initial_params, polish_beta, run,
                     run_warm_started, stationarity_proxy, step_exact,
                     step_relaxed, stochastic_subgradient_sample)
from .inference import (InferenceReport, Metrics, PhiStarFit, SmoothnessSpec,
                        covering_bound, estimate_f0, estimate_phi_star,
                        estimation_metrics, sandwich_covariance,
                        theoretical_rate)
from .cli import ExperimentConfig, derive_seeds, load_config, main

__version__ = "0.1.0"
