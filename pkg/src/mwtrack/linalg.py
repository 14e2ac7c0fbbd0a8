"""Metric-weighted least squares with online inverse maintenance.

The regression kernel reconstructs a test vector y from basis columns P
under a symmetric weighting matrix M, minimizing

    g(x) = (y - P x)^T M (y - P x),    x* = (P^T M P)^{-1} P^T M y.

Repeated solves against a slowly edited basis are served by a cache that
holds the Gram matrix G = P^T M P together with its maintained inverse H.
Three streaming edits are supported without a dense re-inversion:

* appending a column (block bordering of the inverse),
* removing a column (Schur complement of the retained block),
* a rank-one change of M itself (two Sherman-Morrison steps on H).

Every degenerate case falls back to an SVD pseudoinverse of the Gram
matrix, and caches are proactively rebuilt after a fixed number of edits
to bound floating-point drift.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

# Pseudoinverse cutoff, relative to the largest singular value.
PINV_RCOND = 1e-10
# Schur complements below this flag the incoming column as degenerate.
SCHUR_TOL = 1e-10
# Removal pivots |H[i, i]| below this force a dense recompute.
PIVOT_TOL = 1e-12
# Sherman-Morrison denominators below this raise SingularUpdateError.
SM_TOL = 1e-10
# Dense rebuild cadence; bounds drift of the maintained inverse.
REBUILD_INTERVAL = 500

_column_counter = itertools.count()


class SingularUpdateError(RuntimeError):
    """Raised when a rank-one inverse update has a vanishing denominator."""


@dataclass
class RegressionSolution:
    """Optimal coefficients and the (clamped, nonnegative) residual."""

    coeffs: np.ndarray
    residual: float


@dataclass
class RegressionCache:
    """Basis matrix with its maintained Gram inverse.

    Attributes:
        basis: (d, n) array of basis samples, one per column.
        gram: (n, n) array, basis^T M basis for the metric the cache was
            last synchronized against.
        inverse: (n, n) maintained inverse (pseudoinverse when the Gram
            matrix is singular).
        capacity: maximum number of columns the cache will accept.
        column_ids: per-column identifiers; consumers treat the columns
            as an unordered set keyed by these ids.
        edits: online edits since the last dense rebuild.
        rebuilds: dense fallback/rebuild count (diagnostic).
    """

    basis: np.ndarray
    gram: np.ndarray
    inverse: np.ndarray
    capacity: int
    column_ids: list = field(default_factory=list)
    edits: int = 0
    rebuilds: int = 0

    @property
    def n_cols(self) -> int:
        return self.basis.shape[1]


def robust_inverse(gram: np.ndarray) -> np.ndarray:
    """SVD pseudoinverse of a symmetric Gram matrix."""
    return np.linalg.pinv(gram, rcond=PINV_RCOND, hermitian=True)


def build_cache(
    basis: np.ndarray,
    metric: np.ndarray,
    capacity: int | None = None,
    column_ids: list | None = None,
) -> RegressionCache:
    """Densely construct a cache for ``basis`` under ``metric``."""
    basis = np.asarray(basis, dtype=float)
    if basis.ndim != 2 or basis.shape[1] < 1:
        raise ValueError("basis must be a (d, n) array with n >= 1")
    if metric.shape != (basis.shape[0], basis.shape[0]):
        raise ValueError("metric dimension does not match basis")
    if capacity is None:
        capacity = basis.shape[1]
    if capacity < basis.shape[1]:
        raise ValueError("capacity smaller than the number of columns")
    if column_ids is None:
        column_ids = [next(_column_counter) for _ in range(basis.shape[1])]
    elif len(column_ids) != basis.shape[1]:
        raise ValueError("column_ids length does not match basis")
    gram = basis.T @ metric @ basis
    gram = 0.5 * (gram + gram.T)
    return RegressionCache(
        basis=basis.copy(),
        gram=gram,
        inverse=robust_inverse(gram),
        capacity=capacity,
        column_ids=list(column_ids),
    )


def solve_regression(
    cache: RegressionCache, metric: np.ndarray, y: np.ndarray
) -> RegressionSolution:
    """Solve min_x (y - Px)^T M (y - Px) through the maintained inverse.

    The residual is clamped at zero: the online metric updates do not
    guarantee positive semidefiniteness, so tiny negative values can
    occur and are treated as exact reconstructions.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (cache.basis.shape[0],):
        raise ValueError(
            f"test sample has dimension {y.shape}, basis expects "
            f"({cache.basis.shape[0]},)"
        )
    my = metric @ y
    coeffs = cache.inverse @ (cache.basis.T @ my)
    err = y - cache.basis @ coeffs
    residual = float(err @ metric @ err)
    if residual < 0.0:
        residual = 0.0
    return RegressionSolution(coeffs=coeffs, residual=residual)


def solve_regression_dense(
    basis: np.ndarray, metric: np.ndarray, y: np.ndarray
) -> RegressionSolution:
    """One-shot solve without a maintained cache (pseudoinverse path)."""
    return solve_regression(build_cache(basis, metric), metric, y)


def incremental_inverse(
    cache: RegressionCache,
    metric: np.ndarray,
    new_col: np.ndarray,
    column_id=None,
) -> RegressionCache:
    """Append a basis column, updating the inverse by block bordering.

    With c = P^T M dp and r = dp^T M dp, the expanded Gram inverse is

        [ H + H c c^T H / s    -H c / s ]
        [    -c^T H / s          1 / s  ]      s = r - c^T H c.

    A near-zero Schur complement s marks the column as (numerically)
    dependent on the existing basis; the cache is then rebuilt densely.
    """
    if cache.n_cols >= cache.capacity:
        raise ValueError("cache is at capacity")
    new_col = np.asarray(new_col, dtype=float)
    if new_col.shape != (cache.basis.shape[0],):
        raise ValueError("new column dimension mismatch")
    if column_id is None:
        column_id = next(_column_counter)

    n = cache.n_cols
    mc = metric @ new_col
    c = cache.basis.T @ mc
    r = float(new_col @ mc)
    basis = np.concatenate([cache.basis, new_col[:, None]], axis=1)
    ids = cache.column_ids + [column_id]

    gram = np.empty((n + 1, n + 1))
    gram[:n, :n] = cache.gram
    gram[:n, n] = c
    gram[n, :n] = c
    gram[n, n] = r

    hc = cache.inverse @ c
    schur = r - float(c @ hc)
    if abs(schur) < SCHUR_TOL:
        fresh = build_cache(basis, metric, cache.capacity, ids)
        fresh.rebuilds = cache.rebuilds + 1
        return fresh

    inverse = np.empty((n + 1, n + 1))
    inverse[:n, :n] = cache.inverse + np.outer(hc, hc) / schur
    inverse[:n, n] = -hc / schur
    inverse[n, :n] = -hc / schur
    inverse[n, n] = 1.0 / schur

    out = replace(
        cache,
        basis=basis,
        gram=gram,
        inverse=inverse,
        column_ids=ids,
        edits=cache.edits + 1,
    )
    return _maybe_rebuild(out, metric)


def decremental_inverse(cache: RegressionCache, remove_index: int) -> RegressionCache:
    """Remove a basis column via the Schur complement of the kept block.

    H_new = H(I, I) - H(I, i) H(i, I) / H(i, i) with I the retained
    indices. A vanishing pivot H(i, i) forces a dense recompute on the
    reduced Gram matrix.
    """
    n = cache.n_cols
    if n < 2:
        raise ValueError("cannot remove a column from a single-column cache")
    if not 0 <= remove_index < n:
        raise ValueError(f"remove_index {remove_index} out of range [0, {n})")

    keep = [i for i in range(n) if i != remove_index]
    basis = cache.basis[:, keep]
    gram = cache.gram[np.ix_(keep, keep)]
    ids = [cache.column_ids[i] for i in keep]

    pivot = cache.inverse[remove_index, remove_index]
    if abs(pivot) < PIVOT_TOL:
        out = replace(
            cache,
            basis=basis,
            gram=gram,
            inverse=robust_inverse(gram),
            column_ids=ids,
            rebuilds=cache.rebuilds + 1,
            edits=0,
        )
        return out

    col = cache.inverse[keep, remove_index]
    inverse = cache.inverse[np.ix_(keep, keep)] - np.outer(col, col) / pivot
    out = replace(
        cache,
        basis=basis,
        gram=gram,
        inverse=inverse,
        column_ids=ids,
        edits=cache.edits + 1,
    )
    return _maybe_rebuild(out)


def replace_column(
    cache: RegressionCache,
    metric: np.ndarray,
    index: int,
    new_col: np.ndarray,
    column_id=None,
) -> RegressionCache:
    """Swap one basis column for a new sample (removal, then addition).

    The new column is appended at the end; downstream consumers key the
    columns by id, not position.
    """
    if cache.n_cols == 1:
        if not 0 <= index < 1:
            raise ValueError("index out of range")
        if column_id is None:
            column_id = next(_column_counter)
        fresh = build_cache(
            np.asarray(new_col, dtype=float)[:, None],
            metric,
            cache.capacity,
            [column_id],
        )
        fresh.rebuilds = cache.rebuilds
        return fresh
    reduced = decremental_inverse(cache, index)
    return incremental_inverse(reduced, metric, new_col, column_id=column_id)


def rank_one_inverse_update(
    j_inv: np.ndarray, u: np.ndarray, v: np.ndarray
) -> np.ndarray:
    """Sherman-Morrison: (J + u v^T)^{-1} from J^{-1}.

    Raises SingularUpdateError when |1 + v^T J^{-1} u| < 1e-10; the
    caller is expected to recompute densely.
    """
    ju = j_inv @ u
    vj = v @ j_inv
    denom = 1.0 + float(v @ ju)
    if abs(denom) < SM_TOL:
        raise SingularUpdateError(
            f"rank-one update denominator {denom:.3e} below threshold"
        )
    return j_inv - np.outer(ju, vj) / denom


def apply_metric_perturbation(
    cache: RegressionCache,
    a_minus: np.ndarray,
    a_plus: np.ndarray,
    eta: float,
) -> RegressionCache:
    """Propagate a metric step M -> M + eta (a- a-^T - a+ a+^T) to the cache.

    The Gram matrix picks up (eta P^T a-)(P^T a-)^T + (-eta P^T a+)(P^T a+)^T,
    so the inverse is updated by two Sherman-Morrison steps. If either
    step is singular the inverse is recomputed densely from the already
    perturbed Gram matrix.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    if eta == 0.0:
        return cache

    v_minus = cache.basis.T @ np.asarray(a_minus, dtype=float)
    v_plus = cache.basis.T @ np.asarray(a_plus, dtype=float)
    gram = cache.gram + eta * np.outer(v_minus, v_minus)
    gram -= eta * np.outer(v_plus, v_plus)

    rebuilds = cache.rebuilds
    try:
        inverse = rank_one_inverse_update(cache.inverse, eta * v_minus, v_minus)
        inverse = rank_one_inverse_update(inverse, -eta * v_plus, v_plus)
    except SingularUpdateError:
        inverse = robust_inverse(gram)
        rebuilds += 1

    out = replace(
        cache,
        basis=cache.basis,
        gram=gram,
        inverse=inverse,
        column_ids=list(cache.column_ids),
        edits=cache.edits + 1,
        rebuilds=rebuilds,
    )
    return _maybe_rebuild(out)


def cache_consistency_error(cache: RegressionCache, metric: np.ndarray) -> float:
    """Relative Frobenius error of H (P^T M P) against the identity."""
    gram = cache.basis.T @ metric @ cache.basis
    n = cache.n_cols
    resid = cache.inverse @ gram - np.eye(n)
    return float(np.linalg.norm(resid) / np.sqrt(n))


def _maybe_rebuild(cache: RegressionCache, metric: np.ndarray | None = None) -> RegressionCache:
    """Dense recompute once the edit counter reaches the rebuild cadence."""
    if cache.edits < REBUILD_INTERVAL:
        return cache
    if metric is not None:
        gram = cache.basis.T @ metric @ cache.basis
        gram = 0.5 * (gram + gram.T)
    else:
        gram = 0.5 * (cache.gram + cache.gram.T)
    return replace(
        cache,
        gram=gram,
        inverse=robust_inverse(gram),
        edits=0,
        rebuilds=cache.rebuilds + 1,
    )
