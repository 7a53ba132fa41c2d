"""Predict binary place attributes from anonymous visit logs."""
__version__ = "0.1.0"

from .domain import (
    Category,
    DegenerateLabelsError,
    LabelTable,
    Place,
    PlaceAttrError,
    PlaceTable,
    ValidationError,
    VisitEvent,
    VisitLog,
    eligible_places,
    load_labels,
    load_places,
    load_visit_log,
)
from .embedder import (
    CovisitMatrix,
    EmbeddingFactors,
    SingularSystemError,
    build_covisit_matrix,
    place_embedding_features,
    wals_factorize,
)
from .evaluator import (
    AblationReport,
    CoverageReport,
    EvalReport,
    PipelineConfig,
    ablate,
    auc,
    combine_sources,
    coverage,
    cross_validate,
    distribution_table,
    export_distributions,
    macro_average,
    stratified_folds,
)
from .features import EmptyFeatureMatrixError, FeatureMatrix, FeaturizerConfig, featurize
from .learner import (
    LinearModel,
    SelectionReport,
    TrainConfig,
    TrainingDivergedError,
    mutual_information,
    predict_scores,
    select_features,
    top_features,
    train,
)
from .synthworld import AttributeSpec, WorldConfig, WorldTruth, default_attributes, generate_world, simulate, simulate_visits

__all__ = [
    "Category",
    "DegenerateLabelsError",
    "LabelTable",
    "Place",
    "PlaceAttrError",
    "PlaceTable",
    "ValidationError",
    "VisitEvent",
    "VisitLog",
    "eligible_places",
    "load_labels",
    "load_places",
    "load_visit_log",
    "CovisitMatrix",
    "EmbeddingFactors",
    "SingularSystemError",
    "build_covisit_matrix",
    "place_embedding_features",
    "wals_factorize",
    "AblationReport",
    "CoverageReport",
    "EvalReport",
    "PipelineConfig",
    "ablate",
    "auc",
    "combine_sources",
    "coverage",
    "cross_validate",
    "distribution_table",
    "export_distributions",
    "macro_average",
    "stratified_folds",
    "LinearModel",
    "SelectionReport",
    "TrainConfig",
    "TrainingDivergedError",
    "mutual_information",
    "predict_scores",
    "select_features",
    "top_features",
    "train",
    "EmptyFeatureMatrixError",
    "FeatureMatrix",
    "FeaturizerConfig",
    "featurize",
    "AttributeSpec",
    "WorldConfig",
    "WorldTruth",
    "default_attributes",
    "generate_world",
    "simulate",
    "simulate_visits",
]
