"""Online Mahalanobis metric learning.

Two learners share the same rank-one update family M <- M + eta U with
U built from triplet difference vectors:

* a passive-aggressive learner driven by proximity triplets
  (anchor, same-class, other-class) with a closed-form step length, and
* a structured learner driven by bounding-box overlap, which grows a
  most-violated constraint set cutting-plane style and solves a small
  L1 problem for the step-length vector.

Distances are quadratic forms D_M(p, q) = (p - q)^T M (p - q); M stays
symmetric but is deliberately not projected to the PSD cone (an optional
eigen-clipping hook is provided for callers that want it).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import BoundingBox

# Iteration budget and feasibility slack for the L1 step-length solver.
ETA_SOLVER_ITERATIONS = 500


@dataclass(frozen=True)
class Triplet:
    """Proximity constraint: anchor should sit nearer positive than negative."""

    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


@dataclass(frozen=True)
class PAConfig:
    """Passive-aggressive step cap C (trade-off aggressiveness bound)."""

    c_bound: float = 1.0


@dataclass(frozen=True)
class StructuredConfig:
    c_bound: float = 1.0
    max_iterations: int = 5
    n_candidate_boxes: int = 16


@dataclass(frozen=True)
class ScoredBox:
    """A candidate bounding box together with its extracted feature."""

    box: BoundingBox
    feature: np.ndarray


def identity_metric(dim: int) -> np.ndarray:
    return np.eye(dim)


def mahalanobis(metric: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    d = p - q
    return float(d @ metric @ d)


def triplet_loss(metric: np.ndarray, t: Triplet) -> float:
    """Soft-margin hinge max{0, 1 + D(p, p+) - D(p, p-)}."""
    margin = (
        1.0
        + mahalanobis(metric, t.anchor, t.positive)
        - mahalanobis(metric, t.anchor, t.negative)
    )
    return max(0.0, margin)


def global_loss(metric: np.ndarray, triplets) -> float:
    return sum(triplet_loss(metric, t) for t in triplets)


def pa_update(
    metric: np.ndarray, t: Triplet, cfg: PAConfig
) -> tuple[np.ndarray, float]:
    """One passive-aggressive metric step on a triplet.

    Satisfied triplets leave the metric untouched (eta = 0). Otherwise
    the step is

        eta = min{C, max{0, (1 + a+^T M a+ - a-^T M a-)
                             / (2 a-^T U a- - 2 a+^T U a+ - ||U||_F^2)}}

    with a+ = p - p+, a- = p - p-, U = a- a-^T - a+ a+^T, followed by
    M <- M + eta U. An exactly flat quadratic (zero denominator) takes
    eta = C: the active hinge makes the objective decrease linearly, so
    the cap is the constrained minimizer.
    """
    a_plus = t.anchor - t.positive
    a_minus = t.anchor - t.negative
    d_plus = float(a_plus @ metric @ a_plus)
    d_minus = float(a_minus @ metric @ a_minus)
    margin = 1.0 + d_plus - d_minus
    if margin <= 0.0:
        return metric, 0.0

    u_mat = np.outer(a_minus, a_minus) - np.outer(a_plus, a_plus)
    denom = (
        2.0 * float(a_minus @ u_mat @ a_minus)
        - 2.0 * float(a_plus @ u_mat @ a_plus)
        - float(np.sum(u_mat * u_mat))
    )
    if denom <= 0.0:
        eta = cfg.c_bound
    else:
        eta = min(cfg.c_bound, max(0.0, margin / denom))
    return metric + eta * u_mat, eta


def vor_overlap(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; zero-area boxes give 0."""
    if a.w <= 0 or a.h <= 0 or b.w <= 0 or b.h <= 0:
        return 0.0
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def most_violated(
    metric: np.ndarray, anchor: ScoredBox, candidates
) -> tuple[int, int, float]:
    """Exhaustively find the ordered pair maximizing the structured violation.

    The violation of (i, j) is
    Delta_ij + D_M(p, p_i) - D_M(p, p_j) with Delta_ij the overlap gap
    s(R, R_i) - s(R, R_j). Ties resolve to the lexicographically lowest
    (i, j).
    """
    n = len(candidates)
    if n < 2:
        raise ValueError("need at least two candidates")
    dist = np.array(
        [mahalanobis(metric, anchor.feature, c.feature) for c in candidates]
    )
    overlap = np.array([vor_overlap(anchor.box, c.box) for c in candidates])
    viol = (overlap[:, None] - overlap[None, :]) + (dist[:, None] - dist[None, :])
    np.fill_diagonal(viol, -np.inf)
    flat = int(np.argmax(viol))
    mu, nu = divmod(flat, n)
    return mu, nu, float(viol[mu, nu])


def _project_capped_simplex(x: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection onto {eta >= 0, sum(eta) <= cap}."""
    y = np.maximum(x, 0.0)
    if y.sum() <= cap:
        return y
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - cap
    j = np.arange(1, x.size + 1)
    rho = np.nonzero(u - css / j > 0.0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(x - tau, 0.0)


def solve_eta_vector(
    b_matrix: np.ndarray, f_vector: np.ndarray, c_bound: float
) -> np.ndarray:
    """Minimize ||B eta - f||_1 over {eta >= 0, 1^T eta <= C}.

    Projected subgradient descent with step 1/(k ||B||_F) and
    best-iterate tracking; the constraint sets stay tiny (a handful of
    cutting-plane rounds), so this converges well inside the iteration
    budget.
    """
    b_matrix = np.asarray(b_matrix, dtype=float)
    f_vector = np.asarray(f_vector, dtype=float)
    if b_matrix.ndim != 2 or b_matrix.shape[0] != b_matrix.shape[1]:
        raise ValueError("B must be square")
    m = b_matrix.shape[0]
    if m < 1 or f_vector.shape != (m,):
        raise ValueError("f must match B")
    if not (np.all(np.isfinite(b_matrix)) and np.all(np.isfinite(f_vector))):
        raise ValueError("non-finite entries in the step-length system")
    if c_bound <= 0:
        raise ValueError("c_bound must be positive")

    scale = float(np.linalg.norm(b_matrix))
    if scale == 0.0:
        return np.zeros(m)
    best = np.zeros(m)
    best_obj = float(np.abs(f_vector).sum())
    # Warm start from the projected least-squares solution; the
    # subgradient iterations then only have to polish it.
    lsq, *_ = np.linalg.lstsq(b_matrix, f_vector, rcond=None)
    eta = _project_capped_simplex(lsq, c_bound)
    obj = float(np.abs(b_matrix @ eta - f_vector).sum())
    if obj < best_obj:
        best, best_obj = eta, obj
    for k in range(1, ETA_SOLVER_ITERATIONS + 1):
        resid = b_matrix @ eta - f_vector
        grad = b_matrix.T @ np.sign(resid)
        eta = _project_capped_simplex(eta - grad / (k * scale), c_bound)
        obj = float(np.abs(b_matrix @ eta - f_vector).sum())
        if obj < best_obj:
            best, best_obj = eta, obj
    return best


def sample_candidate_boxes(box: BoundingBox, count: int, rng) -> list[BoundingBox]:
    """Uniformly jittered boxes around ``box`` for structured learning.

    Center offsets are uniform in +/-1.5x the box dimensions, scale in
    [0.8, 1.2]; the anchor box itself is not included.
    """
    out = []
    for _ in range(count):
        dx = rng.uniform(-1.5 * box.w, 1.5 * box.w)
        dy = rng.uniform(-1.5 * box.h, 1.5 * box.h)
        s = rng.uniform(0.8, 1.2)
        w, h = box.w * s, box.h * s
        out.append(
            BoundingBox(box.cx + dx - 0.5 * w, box.cy + dy - 0.5 * h, w, h)
        )
    return out


def _eta_system(constraints, metric0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Assemble the linear system B eta = f for the working constraint set.

    b_lm = <U_l, U_m>_F + a_mu_m^T U_m a_mu_m - a_nu_m^T U_m a_nu_m
                        + a_mu_m^T U_l a_mu_m - a_nu_m^T U_l a_nu_m,
    f_l  = -(Delta_l + a_mu_l^T M0 a_mu_l - a_nu_l^T M0 a_nu_l).
    """
    m = len(constraints)
    b_matrix = np.empty((m, m))
    f_vector = np.empty(m)
    for ell, (a_mu, a_nu, u_mat, delta) in enumerate(constraints):
        f_vector[ell] = -(
            delta
            + float(a_mu @ metric0 @ a_mu)
            - float(a_nu @ metric0 @ a_nu)
        )
        for mm, (b_mu, b_nu, w_mat, _) in enumerate(constraints):
            b_matrix[ell, mm] = (
                float(np.sum(u_mat * w_mat))
                + float(b_mu @ w_mat @ b_mu)
                - float(b_nu @ w_mat @ b_nu)
                + float(b_mu @ u_mat @ b_mu)
                - float(b_nu @ u_mat @ b_nu)
            )
    return b_matrix, f_vector


def structured_update(
    metric: np.ndarray,
    anchor: ScoredBox,
    candidates,
    cache_hooks=None,
    cfg: StructuredConfig = StructuredConfig(),
) -> np.ndarray:
    """Cutting-plane structured metric round anchored at the current M.

    Repeatedly adds the most violated overlap constraint, re-solves the
    step-length vector for the whole working set, and rebuilds
    M = M0 + sum_l eta_l U_l, stopping when no constraint is violated,
    a pair repeats, or the iteration cap is hit. Each accepted rank-one
    pair is reported through ``cache_hooks(a_minus, a_plus, eta)`` so
    regression caches can follow the metric.
    """
    if len(candidates) < 2:
        return metric
    metric0 = metric
    current = metric
    seen: set[tuple[int, int]] = set()
    constraints = []
    applied = np.zeros(0)
    for _ in range(cfg.max_iterations):
        mu, nu, violation = most_violated(current, anchor, candidates)
        if violation <= 0.0 or (mu, nu) in seen:
            break
        seen.add((mu, nu))
        a_mu = anchor.feature - candidates[mu].feature
        a_nu = anchor.feature - candidates[nu].feature
        u_mat = np.outer(a_nu, a_nu) - np.outer(a_mu, a_mu)
        delta = vor_overlap(anchor.box, candidates[mu].box) - vor_overlap(
            anchor.box, candidates[nu].box
        )
        constraints.append((a_mu, a_nu, u_mat, delta))
        b_matrix, f_vector = _eta_system(constraints, metric0)
        try:
            eta = solve_eta_vector(b_matrix, f_vector, cfg.c_bound)
        except ValueError:
            break  # abort the round, keep the last consistent metric
        applied = eta
        current = metric0.copy()
        for step, (_, _, u_l, _) in zip(eta, constraints):
            if step > 0.0:
                current = current + step * u_l

    if cache_hooks is not None and applied.size:
        for step, (a_mu, a_nu, _, _) in zip(applied, constraints):
            if step > 0.0:
                cache_hooks(a_nu, a_mu, float(step))
    return current


def psd_project(metric: np.ndarray) -> np.ndarray:
    """Eigen-clip negative eigenvalues (optional hook, off by default)."""
    sym = 0.5 * (metric + metric.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, 0.0)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)
