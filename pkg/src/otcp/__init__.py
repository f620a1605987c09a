"""Multivariate conformal prediction through optimal-transport ranks.

Calibration score vectors are matched to reference rank vectors by an
exact assignment solve; the resulting rank map orders the score space
and yields quantile regions that contain an exact fraction of the
calibration scores regardless of their distribution. Marginal and
input-conditional predictors, classical baselines, synthetic scenarios
and evaluation metrics sit on top of that core.
"""

import os as _os

# OTCP_THREADS caps internal parallelism (BLAS thread pools). It must be
# applied before numpy loads its backend, hence before any submodule
# import; embedding processes that imported numpy earlier keep their own
# settings.
if "OTCP_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["OTCP_THREADS"])

from .assignment import solver_backend
from .engine import (
    ConditionalPredictor,
    MarginalPredictor,
    QuantileRegion,
    build_quantile_region,
    conditional_region,
    fit_conditional,
    fit_marginal,
    predict_region_membership,
    region_contains,
)
from .errors import (
    CalibrationTooSmall,
    DegenerateBox,
    DimensionMismatch,
    EmptyTestSet,
    InfeasibleDuals,
    InvalidDimension,
    InvalidLabel,
    InvalidProbability,
    LevelOutOfRange,
    MalformedData,
    NeighborCountTooSmall,
    NonFiniteInput,
    OtcpError,
    SingularCovariance,
    TooFewTestPoints,
)
from .evaluation import (
    ClassificationData,
    MetricReport,
    RegressionData,
    binned_coverage,
    bounding_box,
    classification_set_metrics,
    generate_gmm_classification,
    generate_heteroscedastic,
    generate_mixture_regression,
    marginal_coverage,
    region_volume_mc,
    worst_set_coverage,
    worst_slab_coverage,
)
from .references import (
    ReferenceRanks,
    positive_orthant_reference,
    reference_of_kind,
    spherical_reference,
)
from .scores import (
    AbsOneHot,
    SignedResidual,
    abs_onehot_score,
    aps_score,
    fit_baseline,
    fit_scalar_classifier,
    ip_score,
    ms_score,
    normalize_probs,
    scalar_quantile,
    signed_residual,
)
from .transport import (
    Assignment,
    DualPotentials,
    RankMap,
    ScoreMatrix,
    evaluate_rank,
    recover_duals,
    solve_assignment,
)

__version__ = "0.1.0"
