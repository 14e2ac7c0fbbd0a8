"""Particle-filter tracking loop over metric-weighted representations.

Per frame: particles diffuse under a Gaussian motion model over
(center x, center y, scale), each particle's patch is scored by the
discriminative criterion

    S(y) = sigmoid(exp(-theta_f / gamma_f) - rho exp(-theta_b / gamma_b))

where theta_f / theta_b are metric-weighted reconstruction residuals
against the foreground / background sample buffers. The heaviest
particle is the state estimate; fresh positives and negatives harvested
around it stream into the reservoir buffers (driving cache column
edits), proximity triplets drive passive-aggressive metric updates
(propagated to the caches as rank-one perturbations), and optionally a
structured metric round runs on overlap-scored candidate boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import linalg
from .features import (
    BoundingBox,
    HOG_DIM,
    RAW_DIM,
    extract_patch,
    hog405,
    raw_pixels,
)
from .metric import (
    PAConfig,
    ScoredBox,
    StructuredConfig,
    pa_update,
    sample_candidate_boxes,
    structured_update,
)
from .reservoir import (
    BACKGROUND,
    FOREGROUND,
    SampleBuffer,
    SamplerConfig,
    generate_triplets,
)

SCALE_MIN = 0.2
SCALE_MAX = 5.0

_FEATURE_FNS = {"hog405": (hog405, HOG_DIM), "raw_pixels": (raw_pixels, RAW_DIM)}


@dataclass
class ObjectState:
    """Box center and scale relative to the initial box size."""

    cx: float
    cy: float
    scale: float = 1.0


@dataclass
class Particle:
    state: ObjectState
    weight: float


@dataclass
class TrackerConfig:
    """Tracking parameters; defaults follow the reference constants."""

    n_particles: int = 200
    sigma: tuple[float, float, float] = (10.0, 10.0, 0.1)
    gamma_f: float = 1.0
    gamma_b: float = 1.0
    rho: float = 0.1
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    pa: PAConfig = field(default_factory=PAConfig)
    structured: StructuredConfig | None = None
    triplets_per_frame: int = 500
    feature_mode: str = "hog405"
    rng_seed: int = 0

    def feature_fn(self):
        try:
            return _FEATURE_FNS[self.feature_mode][0]
        except KeyError:
            raise ValueError(f"unknown feature_mode {self.feature_mode!r}")

    @property
    def feature_dim(self) -> int:
        return _FEATURE_FNS[self.feature_mode][1]


@dataclass
class TrackerModel:
    """Full mutable per-sequence tracking state."""

    metric: np.ndarray
    fg_buffer: SampleBuffer
    bg_buffer: SampleBuffer
    fg_cache: linalg.RegressionCache
    bg_cache: linalg.RegressionCache
    particles: list[Particle]
    init_box: BoundingBox
    frame_index: int
    rng: np.random.Generator
    diagnostics: list[dict] = field(default_factory=list)


def state_to_box(state: ObjectState, init_box: BoundingBox) -> BoundingBox:
    w = init_box.w * state.scale
    h = init_box.h * state.scale
    return BoundingBox(state.cx - 0.5 * w, state.cy - 0.5 * h, w, h)


def init(frame: np.ndarray, box: BoundingBox, cfg: TrackerConfig) -> TrackerModel:
    """Build a tracker from a manually initialized box on the first frame.

    Seeds the foreground buffer with the init patch plus four jittered
    copies (offsets within two pixels), the background buffer with eight
    annulus samples, and starts from the identity metric.
    """
    height, width = frame.shape
    if box.w <= 0 or box.h <= 0:
        raise ValueError("init box must have positive area")
    if box.x < 0 or box.y < 0 or box.x + box.w > width or box.y + box.h > height:
        raise ValueError("init box must lie inside the frame")

    rng = np.random.default_rng(cfg.rng_seed)
    featurize = cfg.feature_fn()
    metric = np.eye(cfg.feature_dim)

    fg_boxes = [box]
    for _ in range(4):
        dx, dy = rng.uniform(-2.0, 2.0, size=2)
        fg_boxes.append(BoundingBox(box.x + dx, box.y + dy, box.w, box.h))
    bg_boxes = _annulus_boxes(box, rng)

    fg_buffer = SampleBuffer(cfg.sampler.capacity, FOREGROUND)
    bg_buffer = SampleBuffer(cfg.sampler.capacity, BACKGROUND)
    fg_feats, fg_ids = [], []
    for b in fg_boxes:
        feat = featurize(extract_patch(frame, b))
        outcome = fg_buffer.insert(feat, 0, cfg.sampler, rng)
        fg_feats.append(feat)
        fg_ids.append(outcome.entry.entry_id)
    bg_feats, bg_ids = [], []
    for b in bg_boxes:
        feat = featurize(extract_patch(frame, b))
        outcome = bg_buffer.insert(feat, 0, cfg.sampler, rng)
        bg_feats.append(feat)
        bg_ids.append(outcome.entry.entry_id)

    fg_cache = linalg.build_cache(
        np.column_stack(fg_feats), metric, cfg.sampler.capacity, fg_ids
    )
    bg_cache = linalg.build_cache(
        np.column_stack(bg_feats), metric, cfg.sampler.capacity, bg_ids
    )

    state = ObjectState(cx=box.cx, cy=box.cy, scale=1.0)
    weight = 1.0 / cfg.n_particles
    particles = [
        Particle(dc_replace(state), weight) for _ in range(cfg.n_particles)
    ]
    return TrackerModel(
        metric=metric,
        fg_buffer=fg_buffer,
        bg_buffer=bg_buffer,
        fg_cache=fg_cache,
        bg_cache=bg_cache,
        particles=particles,
        init_box=box,
        frame_index=0,
        rng=rng,
    )


def propagate(particles: list[Particle], sigma, rng) -> list[Particle]:
    """Diffuse particle states under independent Gaussians, clamping scale."""
    n = len(particles)
    noise = rng.normal(0.0, 1.0, size=(n, 3)) * np.asarray(sigma)
    out = []
    for p, (dx, dy, ds) in zip(particles, noise):
        scale = min(SCALE_MAX, max(SCALE_MIN, p.state.scale + ds))
        out.append(
            Particle(
                ObjectState(p.state.cx + dx, p.state.cy + dy, scale), p.weight
            )
        )
    return out


def score(model: TrackerModel, feature: np.ndarray, cfg: TrackerConfig) -> float:
    """Discriminative foreground similarity of a feature vector."""
    if model.fg_cache.n_cols == 0 or model.bg_cache.n_cols == 0:
        return 0.5
    theta_f = linalg.solve_regression(model.fg_cache, model.metric, feature).residual
    theta_b = linalg.solve_regression(model.bg_cache, model.metric, feature).residual
    arg = math.exp(-theta_f / cfg.gamma_f) - cfg.rho * math.exp(
        -theta_b / cfg.gamma_b
    )
    return 1.0 / (1.0 + math.exp(-arg))


def estimate_map(particles: list[Particle]) -> ObjectState:
    """State of the heaviest particle (first one on ties)."""
    best = 0
    for i in range(1, len(particles)):
        if particles[i].weight > particles[best].weight:
            best = i
    return particles[best].state


def select_training_samples(
    frame: np.ndarray, box: BoundingBox, cfg: TrackerConfig, rng
) -> list[tuple[np.ndarray, str]]:
    """Spatially selected positives and negatives around the estimate.

    Five positives (the estimate's patch first, then four at radius
    0.1 max(w, h) at random angles) and eight negatives on an annulus
    with radius uniform in [1, 2] max(w, h) at evenly spaced angles.
    """
    featurize = cfg.feature_fn()
    reach = max(box.w, box.h)
    samples = [(featurize(extract_patch(frame, box)), FOREGROUND)]
    for _ in range(4):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        dx = 0.1 * reach * math.cos(angle)
        dy = 0.1 * reach * math.sin(angle)
        shifted = BoundingBox(box.x + dx, box.y + dy, box.w, box.h)
        samples.append((featurize(extract_patch(frame, shifted)), FOREGROUND))
    for k in range(8):
        angle = k * math.pi / 4.0
        radius = rng.uniform(1.0, 2.0) * reach
        dx = radius * math.cos(angle)
        dy = radius * math.sin(angle)
        shifted = BoundingBox(box.x + dx, box.y + dy, box.w, box.h)
        samples.append((featurize(extract_patch(frame, shifted)), BACKGROUND))
    return samples


def _annulus_boxes(box: BoundingBox, rng) -> list[BoundingBox]:
    reach = max(box.w, box.h)
    out = []
    for k in range(8):
        angle = k * math.pi / 4.0
        radius = rng.uniform(1.0, 2.0) * reach
        dx = radius * math.cos(angle)
        dy = radius * math.sin(angle)
        out.append(BoundingBox(box.x + dx, box.y + dy, box.w, box.h))
    return out


def _insert_sample(
    model: TrackerModel,
    feature: np.ndarray,
    label: str,
    frame_index: int,
    cfg: TrackerConfig,
) -> None:
    """Stream one sample into its buffer, mirroring the edit on the cache."""
    buffer = model.fg_buffer if label == FOREGROUND else model.bg_buffer
    outcome = buffer.insert(feature, frame_index, cfg.sampler, model.rng)
    if not outcome.inserted:
        return
    cache = model.fg_cache if label == FOREGROUND else model.bg_cache
    if outcome.evicted is None:
        cache = linalg.incremental_inverse(
            cache, model.metric, feature, column_id=outcome.entry.entry_id
        )
    else:
        col = cache.column_ids.index(outcome.evicted.entry_id)
        cache = linalg.replace_column(
            cache, model.metric, col, feature, column_id=outcome.entry.entry_id
        )
    if label == FOREGROUND:
        model.fg_cache = cache
    else:
        model.bg_cache = cache


def step(
    model: TrackerModel, frame: np.ndarray, cfg: TrackerConfig
) -> ObjectState:
    """Track one frame, updating the model in place.

    Returns the new state estimate; per-frame diagnostics are appended
    to ``model.diagnostics``.
    """
    frame_index = model.frame_index + 1
    featurize = cfg.feature_fn()
    particles = propagate(model.particles, cfg.sigma, model.rng)

    features = []
    scores = np.empty(len(particles))
    for i, p in enumerate(particles):
        patch = extract_patch(frame, state_to_box(p.state, model.init_box))
        feat = featurize(patch)
        features.append(feat)
        scores[i] = score(model, feat, cfg)

    degenerate = not np.all(np.isfinite(scores)) or scores.sum() <= 0.0
    if degenerate:
        weights = np.full(len(particles), 1.0 / len(particles))
    else:
        weights = scores / scores.sum()
    for p, w in zip(particles, weights):
        p.weight = float(w)
    model.particles = particles

    map_state = estimate_map(particles)
    map_box = state_to_box(map_state, model.init_box)

    samples = select_training_samples(frame, map_box, cfg, model.rng)
    anchor_feature, anchor_label = samples[0]
    for feat, label in samples[1:]:
        _insert_sample(model, feat, label, frame_index, cfg)

    triplets = generate_triplets(
        model.fg_buffer,
        model.bg_buffer,
        anchor_feature,
        anchor_label,
        cfg.triplets_per_frame,
        model.rng,
    )
    metric_updates = 0
    for t in triplets:
        updated, eta = pa_update(model.metric, t, cfg.pa)
        if eta > 0.0:
            a_minus = t.anchor - t.negative
            a_plus = t.anchor - t.positive
            model.fg_cache = linalg.apply_metric_perturbation(
                model.fg_cache, a_minus, a_plus, eta
            )
            model.bg_cache = linalg.apply_metric_perturbation(
                model.bg_cache, a_minus, a_plus, eta
            )
            model.metric = updated
            metric_updates += 1

    if cfg.structured is not None:
        boxes = sample_candidate_boxes(
            map_box, cfg.structured.n_candidate_boxes, model.rng
        )
        candidates = [
            ScoredBox(b, featurize(extract_patch(frame, b))) for b in boxes
        ]

        def _hook(a_minus, a_plus, eta):
            model.fg_cache = linalg.apply_metric_perturbation(
                model.fg_cache, a_minus, a_plus, eta
            )
            model.bg_cache = linalg.apply_metric_perturbation(
                model.bg_cache, a_minus, a_plus, eta
            )

        model.metric = structured_update(
            model.metric,
            ScoredBox(map_box, anchor_feature),
            candidates,
            cache_hooks=_hook,
            cfg=cfg.structured,
        )

    _insert_sample(model, anchor_feature, anchor_label, frame_index, cfg)

    model.frame_index = frame_index
    model.diagnostics.append(
        {
            "frame": frame_index,
            "map_score": float(scores.max()) if len(scores) else 0.0,
            "fg_buffer": len(model.fg_buffer),
            "bg_buffer": len(model.bg_buffer),
            "metric_updates": metric_updates,
            "degenerate_scores": bool(degenerate),
        }
    )
    return map_state


def model_consistency_error(model: TrackerModel) -> float:
    """Worst cache-vs-metric Frobenius error (invariant check helper)."""
    return max(
        linalg.cache_consistency_error(model.fg_cache, model.metric),
        linalg.cache_consistency_error(model.bg_cache, model.metric),
    )
