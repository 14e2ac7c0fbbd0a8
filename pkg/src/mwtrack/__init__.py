"""Online metric-weighted linear representations for visual tracking."""

from .features import BoundingBox, extract_patch, hog405, load_frame, raw_pixels
from .linalg import (
    RegressionCache,
    RegressionSolution,
    SingularUpdateError,
    apply_metric_perturbation,
    build_cache,
    decremental_inverse,
    incremental_inverse,
    rank_one_inverse_update,
    replace_column,
    solve_regression,
)
from .metric import (
    PAConfig,
    ScoredBox,
    StructuredConfig,
    Triplet,
    global_loss,
    mahalanobis,
    most_violated,
    pa_update,
    psd_project,
    solve_eta_vector,
    structured_update,
    triplet_loss,
    vor_overlap,
)
from .reservoir import (
    BACKGROUND,
    FOREGROUND,
    SampleBuffer,
    SamplerConfig,
    generate_triplets,
    weighted_empirical_loss,
)
from .tracker import (
    ObjectState,
    Particle,
    TrackerConfig,
    TrackerModel,
    estimate_map,
    init,
    propagate,
    score,
    state_to_box,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "BACKGROUND",
    "BoundingBox",
    "FOREGROUND",
    "ObjectState",
    "PAConfig",
    "Particle",
    "RegressionCache",
    "RegressionSolution",
    "SampleBuffer",
    "SamplerConfig",
    "ScoredBox",
    "SingularUpdateError",
    "StructuredConfig",
    "TrackerConfig",
    "TrackerModel",
    "Triplet",
    "apply_metric_perturbation",
    "build_cache",
    "decremental_inverse",
    "estimate_map",
    "extract_patch",
    "generate_triplets",
    "global_loss",
    "hog405",
    "incremental_inverse",
    "init",
    "load_frame",
    "mahalanobis",
    "most_violated",
    "pa_update",
    "propagate",
    "psd_project",
    "rank_one_inverse_update",
    "raw_pixels",
    "replace_column",
    "score",
    "solve_eta_vector",
    "solve_regression",
    "state_to_box",
    "step",
    "structured_update",
    "triplet_loss",
    "vor_overlap",
    "weighted_empirical_loss",
]
