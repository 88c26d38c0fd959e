"""Post-selection inference for a treatment coefficient in high-dimensional logistic models."""

__version__ = "0.1.0"

from .data import Dataset, load_csv
from .errors import (
    DataError,
    DegenerateLoadingError,
    EstimationError,
    NonConvergenceError,
    RankError,
    SeparationError,
    WeakInstrumentError,
)
from .estimators import (
    CriterionProfile,
    Estimates,
    InferenceResult,
    PipelineConfig,
    criterion_Ln,
    estimate,
    fit_double_selection,
    fit_naive_post_selection,
    fit_optimal_iv,
)
from .inference import ConfidenceRegion, build_region, test_alpha
from .pen_logistic import fit_lasso_logistic, fit_logistic_refit, run_step1
from .simulate import DgpSpec, McSummary, draw_dataset, run_grid, run_monte_carlo
from .weighted_lasso import fit_weighted_lasso, run_step2

__all__ = [
    "ConfidenceRegion", "CriterionProfile", "DataError", "Dataset", "DegenerateLoadingError",
    "DgpSpec", "EstimationError", "Estimates", "InferenceResult", "McSummary",
    "NonConvergenceError", "PipelineConfig", "RankError", "SeparationError",
    "WeakInstrumentError", "build_region", "criterion_Ln", "draw_dataset", "estimate",
    "fit_double_selection", "fit_lasso_logistic", "fit_logistic_refit",
    "fit_naive_post_selection", "fit_optimal_iv", "fit_weighted_lasso", "load_csv",
    "run_grid", "run_monte_carlo", "run_step1", "run_step2", "test_alpha",
]
