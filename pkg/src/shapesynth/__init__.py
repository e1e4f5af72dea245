"""shapesynth: spatial microsimulation small-area estimation toolkit."""

from .errors import DataError, InfeasibleError, SchemaError, ShapeSynthError
from .harmonize import (
    ConstraintTable,
    RecodeSpec,
    SurveyTable,
    filter_by_region,
    load_marginals,
    load_survey,
    reconcile_marginals,
    stratified_sample,
    write_survey_csv,
)
from .ipf import FitDiagnostics, FitOptions, WeightField, fit_all, fit_zone
from .synthpop import IntegerCounts, SyntheticPopulation, expand, integerise_trs
from .pipeline import (
    PipelineConfig,
    aggregate_prevalence,
    derive_behavior_constraints,
    run_level1,
    run_level2,
    run_shape,
)
from .evaluate import (
    CompositeReport,
    ci_coverage,
    composite_from_deviations,
    composite_scores,
    evaluate_estimates,
    mae,
    pearson_r,
    rank_models,
    standardize_mae,
)

__version__ = "0.1.0"
