"""Difference-in-differences toolkit for tweet panels under staggered lockdowns."""

__version__ = "0.1.0"

from .estimators import (
    AttEstimate,
    EventStudyResult,
    IdentificationError,
    NotIdentifiedError,
    att_gt,
    att_two_period,
    did_fit,
    did_regression,
    event_study,
    spillover_rings,
)
from .extras import (
    MortalityProfile,
    PValueFamily,
    balance_check,
    bh_adjust,
    group_shares,
    placebo_groups,
)
from .ols import ModelSpec, fit_model, fit_ols, vcov_cluster, vcov_white
from .panel import (
    EVENT_STUDY_SCHEDULE,
    EVENT_STUDY_SCHEME,
    DEFAULT_SCHEDULE,
    DEFAULT_SCHEME,
    Panel,
    PeriodScheme,
    TreatmentSchedule,
    load_panel,
)
from .sensitivity import SensitivityResult, breakdown_scan, max_pre_violation, robust_ci
from .synthetic import DgpConfig, GroundTruth, generate_panel, monte_carlo
from .text import TopicDictionary, binary_entropy, normalize, rank_by_entropy, tag_topics

__all__ = [
    "AttEstimate",
    "EventStudyResult",
    "IdentificationError",
    "NotIdentifiedError",
    "att_gt",
    "att_two_period",
    "did_fit",
    "did_regression",
    "event_study",
    "spillover_rings",
    "MortalityProfile",
    "PValueFamily",
    "balance_check",
    "bh_adjust",
    "group_shares",
    "placebo_groups",
    "ModelSpec",
    "fit_model",
    "fit_ols",
    "vcov_cluster",
    "vcov_white",
    "EVENT_STUDY_SCHEDULE",
    "EVENT_STUDY_SCHEME",
    "DEFAULT_SCHEDULE",
    "DEFAULT_SCHEME",
    "Panel",
    "PeriodScheme",
    "TreatmentSchedule",
    "load_panel",
    "SensitivityResult",
    "breakdown_scan",
    "max_pre_violation",
    "robust_ci",
    "DgpConfig",
    "GroundTruth",
    "generate_panel",
    "monte_carlo",
    "TopicDictionary",
    "binary_entropy",
    "normalize",
    "rank_by_entropy",
    "tag_topics",
]
