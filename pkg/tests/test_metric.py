import math

import numpy as np
import pytest

from mwtrack.features import BoundingBox
from mwtrack.linalg import build_cache, cache_consistency_error, apply_metric_perturbation
from mwtrack.metric import (
    PAConfig,
    ScoredBox,
    StructuredConfig,
    Triplet,
    global_loss,
    mahalanobis,
    most_violated,
    pa_update,
    psd_project,
    sample_candidate_boxes,
    solve_eta_vector,
    structured_update,
    triplet_loss,
    vor_overlap,
)

import oracles


class TestMahalanobis:
    def test_zero_for_identical_points(self):
        p = np.array([1.0, -2.0, 3.0])
        assert mahalanobis(np.eye(3), p, p.copy()) == 0.0

    def test_identity_is_squared_euclidean(self):
        p = np.array([1.0, 2.0])
        q = np.array([4.0, 6.0])
        assert mahalanobis(np.eye(2), p, q) == pytest.approx(25.0)

    def test_scaled_identity(self):
        p = np.array([1.0, 1.0])
        assert mahalanobis(2.0 * np.eye(2), p, np.zeros(2)) == pytest.approx(4.0)

    def test_symmetric_in_arguments(self):
        rng = np.random.default_rng(0)
        m = oracles.random_psd_metric(rng, 4)
        p, q = rng.standard_normal(4), rng.standard_normal(4)
        assert mahalanobis(m, p, q) == pytest.approx(mahalanobis(m, q, p))


class TestTripletLoss:
    def test_satisfied_margin_gives_zero(self):
        t = Triplet(np.zeros(2), np.array([1.0, 0.0]), np.array([3.0, 0.0]))
        assert triplet_loss(np.eye(2), t) == 0.0

    def test_equal_positive_negative_gives_one(self):
        p = np.array([0.5, -0.5])
        t = Triplet(np.zeros(2), p, p.copy())
        assert triplet_loss(np.eye(2), t) == pytest.approx(1.0)

    def test_analytic_value(self):
        t = Triplet(np.zeros(2), np.array([2.0, 0.0]), np.array([2.0, 1.0]))
        # 1 + 4 - 5 = 0 at the hinge boundary
        assert triplet_loss(np.eye(2), t) == pytest.approx(0.0)

    def test_global_loss_is_additive(self):
        rng = np.random.default_rng(1)
        m = oracles.random_psd_metric(rng, 3)
        ts = [
            Triplet(rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3))
            for _ in range(10)
        ]
        assert global_loss(m, []) == 0.0
        assert global_loss(m, ts + ts) == pytest.approx(2 * global_loss(m, ts))
        assert global_loss(m, ts) == pytest.approx(
            sum(triplet_loss(m, t) for t in ts)
        )


class TestPaUpdate:
    def test_passive_branch_returns_input(self):
        t = Triplet(np.zeros(2), np.array([0.1, 0.0]), np.array([5.0, 0.0]))
        m = np.eye(2)
        out, eta = pa_update(m, t, PAConfig(c_bound=10.0))
        assert eta == 0.0
        assert out is m

    def test_degenerate_direction_leaves_metric(self):
        # p+ = p- makes U = 0; the metric must not move.
        p = np.array([1.0, 1.0])
        t = Triplet(np.zeros(2), p, p.copy())
        out, eta = pa_update(np.eye(2), t, PAConfig(c_bound=3.0))
        assert np.allclose(out, np.eye(2))
        assert eta == pytest.approx(3.0)  # cap taken on the flat quadratic

    def test_matches_grid_search_oracle(self):
        rng = np.random.default_rng(2)
        checked = 0
        while checked < 30:
            m = oracles.random_psd_metric(rng, 4)
            t = Triplet(
                rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(4)
            )
            if triplet_loss(m, t) <= 0:
                continue
            for c_bound in (0.1, 1.0, 10.0):
                _, eta = pa_update(m, t, PAConfig(c_bound=c_bound))
                expected = oracles.grid_pa_eta(
                    m, t.anchor, t.positive, t.negative, c_bound
                )
                assert eta == pytest.approx(expected, abs=1e-4)
            checked += 1

    def test_symmetry_preserved_over_many_updates(self):
        rng = np.random.default_rng(3)
        m = np.eye(5)
        cfg = PAConfig(c_bound=1.0)
        for _ in range(200):
            t = Triplet(
                rng.standard_normal(5), rng.standard_normal(5), rng.standard_normal(5)
            )
            m, _ = pa_update(m, t, cfg)
        assert np.abs(m - m.T).max() <= 1e-10 * max(1.0, np.abs(m).max())

    def test_update_direction_scales_quadratically(self):
        rng = np.random.default_rng(4)
        m = np.eye(3)
        cfg = PAConfig(c_bound=50.0)
        base = Triplet(
            rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3)
        )
        if triplet_loss(m, base) <= 0:
            base = Triplet(base.anchor, base.negative, base.positive)
        s = 2.0
        scaled = Triplet(s * base.anchor, s * base.positive, s * base.negative)
        out1, eta1 = pa_update(m, base, cfg)
        out2, eta2 = pa_update(m, scaled, cfg)
        assert eta1 > 0 and eta2 > 0
        u1 = (out1 - m) / eta1
        u2 = (out2 - m) / eta2
        assert np.allclose(u2, s**2 * u1, rtol=1e-9)

    def test_margin_progress_for_interior_steps(self):
        # Convex orientation of the step-length quadratic: the returned
        # eta must not do worse than eta = 0.
        rng = np.random.default_rng(5)
        cfg = PAConfig(c_bound=100.0)
        found = 0
        while found < 20:
            m = oracles.random_psd_metric(rng, 4)
            t = Triplet(
                rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(4)
            )
            margin = 1.0 + mahalanobis(m, t.anchor, t.positive) - mahalanobis(
                m, t.anchor, t.negative
            )
            if margin <= 0:
                continue
            _, eta = pa_update(m, t, cfg)
            if not 0 < eta < cfg.c_bound:
                continue
            a_plus = t.anchor - t.positive
            a_minus = t.anchor - t.negative
            u = np.outer(a_minus, a_minus) - np.outer(a_plus, a_plus)
            quad = 0.5 * np.sum(u * u) * eta * eta - margin * eta
            assert quad <= 0.0
            found += 1


class TestVorOverlap:
    def test_identical_boxes(self):
        b = BoundingBox(1, 2, 3, 4)
        assert vor_overlap(b, b) == pytest.approx(1.0)

    def test_disjoint_boxes(self):
        assert vor_overlap(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 1, 1)) == 0.0

    def test_half_shifted_unit_squares(self):
        a = BoundingBox(0, 0, 1, 1)
        b = BoundingBox(0.5, 0, 1, 1)
        assert vor_overlap(a, b) == pytest.approx(1.0 / 3.0)

    def test_zero_area_convention(self):
        assert vor_overlap(BoundingBox(0, 0, 0, 1), BoundingBox(0, 0, 1, 1)) == 0.0

    def test_range(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            a = BoundingBox(*rng.uniform(0, 10, 2), *rng.uniform(0.1, 5, 2))
            b = BoundingBox(*rng.uniform(0, 10, 2), *rng.uniform(0.1, 5, 2))
            assert 0.0 <= vor_overlap(a, b) <= 1.0


def _random_scored_boxes(rng, n, dim=4):
    boxes = []
    for _ in range(n):
        box = BoundingBox(*rng.uniform(0, 8, 2), *rng.uniform(1, 4, 2))
        boxes.append(ScoredBox(box, rng.standard_normal(dim)))
    return boxes


class TestMostViolated:
    def test_two_candidates_ordering_follows_combined_term(self):
        anchor = ScoredBox(BoundingBox(0, 0, 2, 2), np.zeros(2))
        near = ScoredBox(BoundingBox(0, 0, 2, 2), np.zeros(2))  # ov 1, dist 0
        far = ScoredBox(BoundingBox(10, 10, 2, 2), np.array([0.5, 0.0]))
        mu, nu, viol = most_violated(np.eye(2), anchor, [near, far])
        # s_near = 1 + 0, s_far = 0 + 0.25: near wins the mu slot.
        assert (mu, nu) == (0, 1)
        assert viol == pytest.approx(0.75)
        far_heavy = ScoredBox(BoundingBox(10, 10, 2, 2), np.array([3.0, 0.0]))
        mu, nu, viol = most_violated(np.eye(2), anchor, [near, far_heavy])
        assert (mu, nu) == (1, 0)
        assert viol == pytest.approx(8.0)

    def test_identical_candidates_tie_break(self):
        b = ScoredBox(BoundingBox(0, 0, 1, 1), np.ones(2))
        mu, nu, viol = most_violated(np.eye(2), b, [b, b, b])
        assert (mu, nu) == (0, 1)
        assert viol == pytest.approx(0.0)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            m = oracles.random_psd_metric(rng, 4)
            anchor = _random_scored_boxes(rng, 1)[0]
            candidates = _random_scored_boxes(rng, 8)
            got = most_violated(m, anchor, candidates)
            exp = oracles.brute_most_violated(
                m,
                anchor.box,
                anchor.feature,
                [c.box for c in candidates],
                [c.feature for c in candidates],
            )
            assert got[:2] == exp[:2]
            assert got[2] == pytest.approx(exp[2], rel=1e-12)


class TestSolveEtaVector:
    def test_scalar_interior_solution(self):
        eta = solve_eta_vector(np.array([[2.0]]), np.array([1.0]), 10.0)
        assert eta[0] == pytest.approx(0.5, abs=1e-9)

    def test_scalar_cap_active(self):
        eta = solve_eta_vector(np.array([[1.0]]), np.array([5.0]), 2.0)
        assert eta[0] == pytest.approx(2.0, abs=1e-9)

    def test_three_dim_beats_grid(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            b = rng.standard_normal((3, 3))
            f = rng.standard_normal(3)
            eta = solve_eta_vector(b, f, 1.0)
            obj = np.abs(b @ eta - f).sum()
            grid = oracles.grid_eta_vector_objective(b, f, 1.0)
            assert obj <= grid + 1e-4

    def test_feasibility(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            m = int(rng.integers(1, 6))
            b = rng.standard_normal((m, m)) * 3
            f = rng.standard_normal(m) * 3
            c = float(rng.uniform(0.1, 5.0))
            eta = solve_eta_vector(b, f, c)
            assert eta.min() >= -1e-12
            assert eta.sum() <= c + 1e-9

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            solve_eta_vector(np.array([[np.nan]]), np.array([1.0]), 1.0)


def _violation_extent(metric, anchor, candidates):
    mu, nu, viol = most_violated(metric, anchor, candidates)
    return viol


class TestStructuredUpdate:
    def test_no_violation_returns_input(self):
        # The pairwise violation separates as (ov_i + D_i) - (ov_j + D_j),
        # so it is nonpositive for every ordered pair exactly when the
        # combined scores all tie; identical candidates realize that.
        anchor = ScoredBox(BoundingBox(0, 0, 4, 4), np.zeros(2))
        cand = ScoredBox(BoundingBox(1, 1, 4, 4), np.array([0.5, 0.0]))
        m = np.eye(2)
        out = structured_update(m, anchor, [cand, cand, cand], cfg=StructuredConfig())
        assert out is m

    def test_single_pair_one_iteration_manual_trace(self):
        rng = np.random.default_rng(10)
        m0 = oracles.random_psd_metric(rng, 3)
        anchor = ScoredBox(BoundingBox(0, 0, 4, 4), rng.standard_normal(3))
        candidates = _random_scored_boxes(rng, 2, dim=3)
        cfg = StructuredConfig(c_bound=2.0, max_iterations=1)
        out = structured_update(m0, anchor, candidates, cfg=cfg)

        mu, nu, viol = most_violated(m0, anchor, candidates)
        if viol <= 0:
            assert out is m0
            return
        a_mu = anchor.feature - candidates[mu].feature
        a_nu = anchor.feature - candidates[nu].feature
        u = np.outer(a_nu, a_nu) - np.outer(a_mu, a_mu)
        b11 = np.sum(u * u) + 2 * (a_mu @ u @ a_mu - a_nu @ u @ a_nu)
        f1 = -(
            vor_overlap(anchor.box, candidates[mu].box)
            - vor_overlap(anchor.box, candidates[nu].box)
            + a_mu @ m0 @ a_mu
            - a_nu @ m0 @ a_nu
        )
        eta = min(cfg.c_bound, max(0.0, f1 / b11))
        assert np.allclose(out, m0 + eta * u, atol=1e-8)

    def test_round_does_not_increase_max_violation(self):
        rng = np.random.default_rng(11)
        improved = 0
        total = 40
        for _ in range(total):
            m0 = oracles.random_psd_metric(rng, 4) * 0.1
            anchor = ScoredBox(BoundingBox(2, 2, 3, 3), rng.standard_normal(4))
            candidates = _random_scored_boxes(rng, 16)
            before = _violation_extent(m0, anchor, candidates)
            out = structured_update(
                m0, anchor, candidates, cfg=StructuredConfig(c_bound=1.0)
            )
            after = _violation_extent(out, anchor, candidates)
            if after <= before + 1e-9:
                improved += 1
        assert improved >= 0.9 * total

    def test_symmetry_preserved(self):
        rng = np.random.default_rng(12)
        m = np.eye(4)
        for _ in range(10):
            anchor = ScoredBox(BoundingBox(2, 2, 3, 3), rng.standard_normal(4))
            candidates = _random_scored_boxes(rng, 6)
            m = structured_update(m, anchor, candidates, cfg=StructuredConfig())
        assert np.abs(m - m.T).max() <= 1e-10 * max(1.0, np.abs(m).max())

    def test_cache_hooks_keep_caches_consistent(self):
        rng = np.random.default_rng(13)
        m = np.eye(4)
        basis = rng.standard_normal((4, 3))
        cache = build_cache(basis, m)
        anchor = ScoredBox(BoundingBox(2, 2, 3, 3), rng.standard_normal(4))
        candidates = _random_scored_boxes(rng, 8)

        holder = {"cache": cache}

        def hook(a_minus, a_plus, eta):
            holder["cache"] = apply_metric_perturbation(
                holder["cache"], a_minus, a_plus, eta
            )

        out = structured_update(
            m, anchor, candidates, cache_hooks=hook, cfg=StructuredConfig(c_bound=0.5)
        )
        assert cache_consistency_error(holder["cache"], out) <= 1e-6

    def test_duplicate_pair_terminates_early(self):
        # Two candidates only: after the first round the same pair would
        # repeat; the loop must stop instead of spinning.
        rng = np.random.default_rng(14)
        anchor = ScoredBox(BoundingBox(0, 0, 4, 4), rng.standard_normal(3))
        candidates = _random_scored_boxes(rng, 2, dim=3)
        out = structured_update(
            np.eye(3),
            anchor,
            candidates,
            cfg=StructuredConfig(c_bound=1e-6, max_iterations=50),
        )
        assert out.shape == (3, 3)


class TestCandidateSampling:
    def test_counts_and_ranges(self):
        rng = np.random.default_rng(15)
        box = BoundingBox(10, 20, 8, 6)
        boxes = sample_candidate_boxes(box, 16, rng)
        assert len(boxes) == 16
        for b in boxes:
            assert 0.8 * 8 - 1e-9 <= b.w <= 1.2 * 8 + 1e-9
            assert abs(b.cx - box.cx) <= 1.5 * box.w + 0.5 * b.w
            assert abs(b.cy - box.cy) <= 1.5 * box.h + 0.5 * b.h

    def test_seeded_reproducibility(self):
        box = BoundingBox(0, 0, 4, 4)
        a = sample_candidate_boxes(box, 5, np.random.default_rng(42))
        b = sample_candidate_boxes(box, 5, np.random.default_rng(42))
        assert all(
            (p.x, p.y, p.w, p.h) == (q.x, q.y, q.w, q.h) for p, q in zip(a, b)
        )


def test_psd_project_clips_negative_eigenvalues():
    m = np.diag([2.0, -1.0, 0.5])
    out = psd_project(m)
    vals = np.linalg.eigvalsh(out)
    assert vals.min() >= -1e-12
    assert np.allclose(out, np.diag([2.0, 0.0, 0.5]))
