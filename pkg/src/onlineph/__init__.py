"""Online and sliding-window tests of proportional hazards for streamed survival data."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CheckpointError,
    DegenerateBlockError,
    EmptyRiskSetError,
    InvalidInputError,
    InvalidTimeError,
    OnlinePHError,
    SeparationError,
    SingularHError,
    SingularInformationError,
)
from .gtest import TestResult, chisq_quantile, chisq_sf, full_test  # noqa: E402
from .online import (  # noqa: E402
    BlockResult,
    BlockSummary,
    EngineOptions,
    OnlineState,
    aee_estimate,
    block_summary,
    cee_update,
    cuee_update,
    process_block,
    push_window,
    stream_results,
    update_cumulative,
    window_test,
)
from .residuals import (  # noqa: E402
    ResidualSet,
    TransformKind,
    km_left_continuous,
    schoenfeld_residuals,
    transform_and_center,
)
from .survival import (  # noqa: E402
    CoxFit,
    DataBlock,
    SolverOptions,
    SubjectRecord,
    fit_cox,
    information,
    log_partial_likelihood,
    score,
    weighted_mean_covariates,
    weighted_variance,
)

__all__ = [
    "BlockResult",
    "BlockSummary",
    "CheckpointError",
    "CoxFit",
    "DataBlock",
    "DegenerateBlockError",
    "EmptyRiskSetError",
    "EngineOptions",
    "InvalidInputError",
    "InvalidTimeError",
    "OnlinePHError",
    "OnlineState",
    "ResidualSet",
    "SeparationError",
    "SingularHError",
    "SingularInformationError",
    "SolverOptions",
    "SubjectRecord",
    "TestResult",
    "TransformKind",
    "aee_estimate",
    "block_summary",
    "cee_update",
    "chisq_quantile",
    "chisq_sf",
    "cuee_update",
    "fit_cox",
    "full_test",
    "information",
    "km_left_continuous",
    "log_partial_likelihood",
    "process_block",
    "push_window",
    "schoenfeld_residuals",
    "score",
    "stream_results",
    "transform_and_center",
    "update_cumulative",
    "weighted_mean_covariates",
    "weighted_variance",
    "window_test",
]
