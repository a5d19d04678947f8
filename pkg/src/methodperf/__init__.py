"""White-box performance-influence modeling for configurable systems."""
from .analysis import correlate, cv, measurement_cv_curve, variance_report
from .configspace import Configuration, ConfigurationSpace, OptionDef
from .learning import PerfModel, RandomForest, RegressionTree, TreeHyperparams, importance, mape
from .pipeline import FilterParams, overhead_study, run_pipeline, select_hard, trace_influence
from .sampling import SampleSet, build_learning_set, plackett_burman, sample_pair_wise, sample_random
from .synthsys import (
    GeneratorProfile,
    GroundTruthSystem,
    gen_system,
    simulate_blackbox,
    simulate_coarse,
    simulate_fine,
    true_perf,
)
from .traces import filter_outliers, read_blackbox, read_coarse, read_fine

__version__ = "0.1.0"

__all__ = [
    "Configuration", "ConfigurationSpace", "FilterParams", "GeneratorProfile", "GroundTruthSystem",
    "OptionDef", "PerfModel", "RandomForest", "RegressionTree", "SampleSet", "TreeHyperparams",
    "build_learning_set", "correlate", "cv", "filter_outliers", "gen_system", "importance", "mape",
    "measurement_cv_curve", "overhead_study", "plackett_burman", "run_pipeline", "sample_pair_wise",
    "read_blackbox", "read_coarse", "read_fine", "sample_random", "select_hard", "simulate_blackbox",
    "simulate_coarse", "simulate_fine", "trace_influence", "true_perf", "variance_report",
]
