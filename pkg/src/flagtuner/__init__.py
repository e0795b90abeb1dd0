"""Compiler optimization-flag autotuning toolkit.

Selects an on/off setting for each binary optimization flag of a compiler to
minimize a target program's run time, using a phased random-forest surrogate
and an improved binary particle swarm search, with random-search and GA
baselines and a synthetic-landscape harness for reproducible evaluation.
"""

from .baselines import GAParams, ga_tune, rio_tune
from .core import (
    CatalogError,
    CompilerFamily,
    Dataset,
    FlagCatalog,
    FlagDef,
    Measurement,
    Sequence,
    Status,
    TunerConfig,
    TuningResult,
    catalog_from_file,
    random_sequence,
)
from .evaluator import (
    Budget,
    CompilerTarget,
    MeasurementCache,
    SyntheticLandscape,
    ToolchainError,
    brute_force_best,
    measure,
    measure_baseline,
)
from .model_builder import BuildState, PoolExhaustedError, build_model, select_by_distribution, select_by_ei
from .searcher import (
    Particle,
    SearchResult,
    Swarm,
    binarize,
    cosine_similarity,
    finalize,
    init_swarm,
    search,
    velocity_update,
)
from .surrogate import (
    Forest,
    Prediction,
    expected_improvement,
    fit,
    normal_cdf,
    normal_pdf,
    predict,
)

__version__ = "0.1.0"

__all__ = [
    "Budget",
    "BuildState",
    "CatalogError",
    "CompilerFamily",
    "CompilerTarget",
    "Dataset",
    "FlagCatalog",
    "FlagDef",
    "Forest",
    "GAParams",
    "Measurement",
    "MeasurementCache",
    "Particle",
    "PoolExhaustedError",
    "Prediction",
    "SearchResult",
    "Sequence",
    "Status",
    "Swarm",
    "SyntheticLandscape",
    "ToolchainError",
    "TunerConfig",
    "TuningResult",
    "binarize",
    "brute_force_best",
    "build_model",
    "catalog_from_file",
    "cosine_similarity",
    "expected_improvement",
    "finalize",
    "fit",
    "ga_tune",
    "init_swarm",
    "measure",
    "measure_baseline",
    "normal_cdf",
    "normal_pdf",
    "predict",
    "random_sequence",
    "rio_tune",
    "search",
    "select_by_distribution",
    "select_by_ei",
    "velocity_update",
]
