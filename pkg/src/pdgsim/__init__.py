"""Simulator and analysis harness for privacy-preserving decentralized gradient methods.

Implements two single-message privacy-preserving algorithms (PDG-DS with
diminishing stepsizes, PDG-NDS with non-diminishing stepsizes), the baselines
they are compared against (DGD, EXTRA, DIGing, time-varying AB), stepsize
admissibility checkers, runtime contraction-inequality monitors, and the
gradient-inference attacks and indistinguishability witnesses used to assess
what an adversary can recover from the message log.
"""

from pdgsim.topology import (
    Graph,
    SpectralData,
    graph_preset,
    load_edge_list,
    metropolis_weights,
    mixing_streams,
    sample_mixing_matrix,
    spectral_data,
    validate_mixing_matrix,
    validate_weight_matrix,
)
from pdgsim.objectives import (
    Optimum,
    Problem,
    generate_sensing_instance,
    gradient,
    lipschitz_bound,
    optimum,
    quadratic_sensing_problem,
    rendezvous_problem,
)
from pdgsim.schedules import (
    ConditionReport,
    StepsizeSchedule,
    check_diminishing,
    check_nondiminishing,
    evaluate,
    find_feasible_delta_c,
    make_schedule,
)
from pdgsim.engine import DivergenceError, MessageRecord, Trace, run
from pdgsim.analysis import (
    MetricsRow,
    detect_convergence,
    metrics,
    verify_lyapunov_ds,
    verify_lyapunov_nds,
)
from pdgsim.adversary import (
    AdversaryView,
    WitnessResult,
    construct_witness,
    infer_ab_gradient,
    infer_diging_gradient,
    project_view,
)
from pdgsim.harness import ConfigError, ExperimentConfig, RunArtifacts, run_experiment

__all__ = [
    "AdversaryView",
    "ConditionReport",
    "ConfigError",
    "DivergenceError",
    "ExperimentConfig",
    "Graph",
    "MessageRecord",
    "MetricsRow",
    "Optimum",
    "Problem",
    "RunArtifacts",
    "SpectralData",
    "StepsizeSchedule",
    "Trace",
    "WitnessResult",
    "check_diminishing",
    "check_nondiminishing",
    "construct_witness",
    "detect_convergence",
    "evaluate",
    "find_feasible_delta_c",
    "generate_sensing_instance",
    "gradient",
    "graph_preset",
    "infer_ab_gradient",
    "infer_diging_gradient",
    "lipschitz_bound",
    "load_edge_list",
    "make_schedule",
    "metrics",
    "metropolis_weights",
    "mixing_streams",
    "optimum",
    "project_view",
    "quadratic_sensing_problem",
    "rendezvous_problem",
    "run",
    "run_experiment",
    "sample_mixing_matrix",
    "spectral_data",
    "validate_mixing_matrix",
    "validate_weight_matrix",
    "verify_lyapunov_ds",
    "verify_lyapunov_nds",
]
