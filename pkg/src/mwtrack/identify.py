"""Cumulative object identification over a tracked trajectory.

Each predefined class holds a static template basis; at every frame the
tracked feature's metric-weighted reconstruction residual against each
class is accumulated, weighted by the frame's tracking score:

    H_k = sum_i  w(y_i) * g(x_k*; M, P_k, y_i)

and the identity is the class with the smallest cumulative distance.
Residual spikes far above their running median flag occlusion-like
appearance changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg

OCCLUSION_FACTOR = 3.0
OCCLUSION_MIN_HISTORY = 10
OCCLUSION_WINDOW = 30


@dataclass
class TemplateClass:
    """A class identifier with its static template basis (d, n)."""

    class_id: str
    templates: np.ndarray

    def __post_init__(self):
        self.templates = np.asarray(self.templates, dtype=float)
        if self.templates.ndim != 2 or self.templates.shape[1] < 1:
            raise ValueError("templates must be a (d, n) array with n >= 1")


@dataclass
class IdentityLedger:
    """Running per-class cumulative residuals plus frame history."""

    class_ids: tuple[str, ...]
    cumulative: np.ndarray = None
    per_frame: list = field(default_factory=list)

    def __post_init__(self):
        if self.cumulative is None:
            self.cumulative = np.zeros(len(self.class_ids))


def class_residual(
    metric: np.ndarray, template_class: TemplateClass, y: np.ndarray
) -> float:
    """Reconstruction residual of y against one class's templates."""
    cache = linalg.build_cache(template_class.templates, metric)
    return linalg.solve_regression(cache, metric, y).residual


def accumulate(
    ledger: IdentityLedger, residuals: np.ndarray, frame_score: float
) -> IdentityLedger:
    """Fold one frame's residual vector into the ledger, score-weighted."""
    residuals = np.asarray(residuals, dtype=float)
    if residuals.shape != ledger.cumulative.shape:
        raise ValueError("residual vector length does not match class count")
    return IdentityLedger(
        class_ids=ledger.class_ids,
        cumulative=ledger.cumulative + frame_score * residuals,
        per_frame=ledger.per_frame + [(residuals, frame_score)],
    )


def classify(ledger: IdentityLedger) -> str:
    """Class with the minimum cumulative distance (lowest id on ties)."""
    best = min(
        range(len(ledger.class_ids)),
        key=lambda k: (ledger.cumulative[k], ledger.class_ids[k]),
    )
    return ledger.class_ids[best]


def detect_occlusion(
    residual: float,
    history,
    factor: float = OCCLUSION_FACTOR,
    min_history: int = OCCLUSION_MIN_HISTORY,
) -> bool:
    """Flag a residual spiking above ``factor`` times the history median."""
    if len(history) < min_history:
        return False
    return residual > factor * float(np.median(history))
