"""Noisy group testing with Belief Propagation and adaptive pooling designs."""

from .model import (GroundTruth, PoolDesign, Scenario, TestResults, derive_rng,
                    log_posterior_weight, run_tests, sample_ground_truth, scenario)
from .designs import (DegreePair, DorfmanPlan, build_biregular, build_dorfman2, build_dorfman3,
                      build_grid, choose_degrees, dorfman_pool_size, informative_dorfman_plan)
from .bp import (BPConfig, ContradictoryEvidence, MessageState, bethe_free_energy, dd_classify,
                 entropy_estimate, init_messages, run_bp, run_bp_parallel_diagnostic,
                 threshold_classify)
from .pipeline import (PipelineTrace, StagePlanParams, format_trace, parse_trace, run_adaptive_bp,
                       run_baseline, run_pipeline, table_params)
from .experiments import (ExperimentConfig, dorfman_expectations, entropy_curve, info_lower_bound,
                          run_experiment)

__all__ = [
    "GroundTruth", "PoolDesign", "Scenario", "TestResults", "derive_rng", "log_posterior_weight",
    "run_tests", "sample_ground_truth", "scenario",
    "DegreePair", "DorfmanPlan", "build_biregular", "build_dorfman2", "build_dorfman3",
    "build_grid", "choose_degrees", "dorfman_pool_size", "informative_dorfman_plan",
    "BPConfig", "ContradictoryEvidence", "MessageState", "bethe_free_energy", "dd_classify",
    "entropy_estimate", "init_messages", "run_bp", "run_bp_parallel_diagnostic",
    "threshold_classify",
    "PipelineTrace", "StagePlanParams", "format_trace", "parse_trace", "run_adaptive_bp",
    "run_baseline", "run_pipeline", "table_params",
    "ExperimentConfig", "dorfman_expectations", "entropy_curve", "info_lower_bound",
    "run_experiment",
]
