import math
import warnings

import numpy as np
import pytest

from trajdiff import (
    BBox,
    GuidanceConfig,
    TokenSet,
    ValidationError,
    build_cross_masks,
    build_spatial_self_mask,
    build_temporal_self_mask,
    gaussian_weight,
    guided_cross_attention,
    guided_self_attention,
    redistribute_isolated_attention,
    should_edit,
)
from trajdiff.attention import (
    alpha_for_box,
    gaussian_weight_grid,
    temporal_masks_all_pixels,
    vanilla_attention,
)


def softmax_rows(m):
    out = np.empty_like(m, dtype=float)
    for i in range(m.shape[0]):
        hi = max(m[i])
        e = [math.exp(v - hi) for v in m[i]]
        s = sum(e)
        out[i] = [v / s for v in e]
    return out


def cross_oracle(q, k, v, boost_mask, keep_mask, alpha, gauss):
    """Scalar-loop evaluation of the guided cross-attention definition."""
    nq, d = q.shape
    nk = k.shape[0]
    logits = np.empty((nq, nk))
    for i in range(nq):
        for j in range(nk):
            s = sum(q[i, t] * k[j, t] for t in range(d))
            logits[i, j] = s / math.sqrt(d) if keep_mask[i, j] else -math.inf
    weights = softmax_rows(logits)
    for i in range(nq):
        for j in range(nk):
            if boost_mask[i, j]:
                weights[i, j] += alpha * gauss[i]
    return weights @ v, weights


def self_oracle(q, k, v, mask, beta):
    nq, d = q.shape
    logits = np.empty((nq, k.shape[0]))
    for i in range(nq):
        for j in range(k.shape[0]):
            s = sum(q[i, t] * k[j, t] for t in range(d))
            logits[i, j] = s / math.sqrt(d) * (1.0 if mask[i, j] else beta)
    weights = softmax_rows(logits)
    return weights @ v, weights


class TestCrossMasks:
    def test_all_background_pixels(self):
        tokens = TokenSet(np.array([True, False, True]))
        boost, keep = build_cross_masks(np.zeros(5), tokens)
        assert (boost == 0).all()
        # background pixels are cut off from foreground tokens only
        assert np.array_equal(keep, 1 - np.outer(np.ones(5), tokens.fg_flags))

    def test_all_foreground(self):
        tokens = TokenSet(np.ones(3, dtype=bool))
        boost, keep = build_cross_masks(np.ones(4), tokens)
        assert (boost == 1).all()
        assert (keep == 1).all()

    def test_mixed_case_against_formula(self):
        fg_pix = np.array([1, 0, 1, 1, 0, 0])
        fg_tok = np.array([0, 1, 1])
        boost, keep = build_cross_masks(fg_pix, TokenSet(fg_tok.astype(bool)))
        for i in range(6):
            for j in range(3):
                assert boost[i, j] == fg_pix[i] * fg_tok[j]
                assert keep[i, j] == 1 - (1 - fg_pix[i]) * fg_tok[j]


class TestSelfMasks:
    def test_uniform_mask_is_all_ones(self):
        assert (build_spatial_self_mask(np.ones(6)) == 1).all()
        assert (build_spatial_self_mask(np.zeros(6)) == 1).all()

    def test_cross_region_is_zero(self):
        m = build_spatial_self_mask(np.array([1, 0]))
        assert m[0, 1] == 0 and m[1, 0] == 0
        assert m[0, 0] == 1 and m[1, 1] == 1

    def test_random_mask_against_formula(self):
        rng = np.random.default_rng(0)
        fg = rng.integers(0, 2, 12)
        m = build_spatial_self_mask(fg)
        for i in range(12):
            for j in range(12):
                assert m[i, j] == fg[i] * fg[j] + (1 - fg[i]) * (1 - fg[j])
        assert np.array_equal(m, m.T)
        assert (np.diag(m) == 1).all()


class TestTemporalMasks:
    def test_static_box_all_ones(self):
        stack = np.tile(np.array([0, 1, 1, 0]), (5, 1))
        for pix in range(4):
            assert (build_temporal_self_mask(stack, pix) == 1).all()

    def test_pixel_in_box_single_frame(self):
        stack = np.zeros((4, 3), dtype=int)
        stack[0, 1] = 1
        m = build_temporal_self_mask(stack, 1)
        assert m[0].tolist() == [1, 0, 0, 0]
        assert np.array_equal(m, m.T)

    def test_moving_box_all_pixels_against_formula(self):
        rng = np.random.default_rng(1)
        stack = rng.integers(0, 2, (6, 10))
        batched = temporal_masks_all_pixels(stack)
        for pix in range(10):
            single = build_temporal_self_mask(stack, pix)
            assert np.array_equal(batched[pix], single)
            for f in range(6):
                for k in range(6):
                    fg_f, fg_k = stack[f, pix], stack[k, pix]
                    assert single[f, k] == fg_f * fg_k + (1 - fg_f) * (1 - fg_k)


class TestGaussianWeight:
    def test_peak_at_center(self):
        box = BBox(0.2, 0.3, 0.6, 0.9)
        cx, cy = box.center
        assert gaussian_weight(cx, cy, box) == pytest.approx(1.0)

    def test_one_sigma_along_x(self):
        box = BBox(0.2, 0.3, 0.6, 0.9)
        cx, cy = box.center
        sx = 0.5 * (0.5 * (box.x1 - box.x0))
        assert gaussian_weight(cx + sx, cy, box, 0.5) == pytest.approx(math.exp(-0.5))

    def test_grid_matches_scalar_formula(self):
        box = BBox(0.1, 0.2, 0.7, 0.8)
        grid = gaussian_weight_grid(box, 9, 13, sigma_scale=0.4)
        cx, cy = box.center
        sx = 0.4 * 0.5 * (box.x1 - box.x0)
        sy = 0.4 * 0.5 * (box.y1 - box.y0)
        for i in range(9):
            for j in range(13):
                x, y = (j + 0.5) / 13, (i + 0.5) / 9
                ref = math.exp(-((x - cx) ** 2 / (2 * sx**2) + (y - cy) ** 2 / (2 * sy**2)))
                assert abs(grid[i, j] - ref) < 1e-12

    def test_sigma_scale_validated(self):
        with pytest.raises(ValidationError):
            gaussian_weight(0.5, 0.5, BBox(0, 0, 1, 1), sigma_scale=0)


class TestGuidedCross:
    def test_neutral_settings_match_vanilla(self):
        rng = np.random.default_rng(2)
        q = rng.standard_normal((6, 8))
        k = rng.standard_normal((3, 8))
        v = rng.standard_normal((3, 8))
        ones = np.ones((6, 3), dtype=np.uint8)
        out = guided_cross_attention(q, k, v, ones * 0, ones, 0.0, np.zeros(6))
        ref = vanilla_attention(q, k, v)
        assert np.abs(out - ref).max() < 1e-6

    def test_default_alpha_formula(self):
        cfg = GuidanceConfig()  # alpha_scale 0.25
        box = BBox(0.25, 0.25, 0.75, 0.75)  # area 0.25
        assert alpha_for_box(cfg, 2, box) == pytest.approx(0.25 / (2 * 0.25))

    def test_small_instance_against_oracle(self):
        rng = np.random.default_rng(3)
        q = rng.standard_normal((4, 5))
        k = rng.standard_normal((3, 5))
        v = rng.standard_normal((3, 6))
        fg_pix = np.array([1, 0, 1, 0])
        tokens = TokenSet(np.array([True, False, True]))
        boost_mask, keep = build_cross_masks(fg_pix, tokens)
        gauss = rng.uniform(0.1, 1.0, 4)
        out = guided_cross_attention(q, k, v, boost_mask, keep, 0.7, gauss)
        ref, _ = cross_oracle(q, k, v, boost_mask, keep, 0.7, gauss)
        assert np.abs(out - ref).max() < 1e-6

    def test_row_weight_identity(self):
        rng = np.random.default_rng(4)
        q = rng.standard_normal((5, 4))
        k = rng.standard_normal((4, 4))
        fg_pix = np.array([1, 1, 0, 0, 1])
        tokens = TokenSet(np.array([True, True, False, False]))
        boost_mask, keep = build_cross_masks(fg_pix, tokens)
        gauss = rng.uniform(0.2, 1.0, 5)
        _, weights = cross_oracle(q, k, np.eye(4), boost_mask, keep, 0.9, gauss)
        sums = weights.sum(axis=1)
        for i in range(5):
            hits = boost_mask[i].sum()
            expected = 1.0 + 0.9 * gauss[i] * hits if hits else 1.0
            assert sums[i] == pytest.approx(expected, abs=1e-9)

    def test_fully_suppressed_row_raises(self):
        rng = np.random.default_rng(5)
        q = rng.standard_normal((2, 4))
        k = rng.standard_normal((2, 4))
        v = rng.standard_normal((2, 4))
        # background pixel, every token foreground: row fully cut
        fg_pix = np.array([0, 1])
        tokens = TokenSet(np.array([True, True]))
        boost_mask, keep = build_cross_masks(fg_pix, tokens)
        with pytest.raises(RuntimeError, match="suppressed"):
            guided_cross_attention(q, k, v, boost_mask, keep, 0.1, np.ones(2))

    def test_boost_monotone_in_alpha(self):
        rng = np.random.default_rng(6)
        q = rng.standard_normal((4, 5))
        k = rng.standard_normal((3, 5))
        v = rng.standard_normal((3, 5))
        fg_pix = np.array([1, 0, 1, 1])
        tokens = TokenSet(np.array([True, False, True]))
        boost_mask, keep = build_cross_masks(fg_pix, tokens)
        gauss = np.full(4, 0.8)
        fg_dir = v[tokens.fg_flags].sum(axis=0)
        prev = None
        for alpha in (0.0, 0.5, 1.0, 2.0):
            out = guided_cross_attention(q, k, v, boost_mask, keep, alpha, gauss)
            comp = out[fg_pix.astype(bool)] @ fg_dir
            if prev is not None:
                assert (comp > prev).all()
            prev = comp


class TestGuidedSelf:
    def test_beta_one_is_vanilla(self):
        rng = np.random.default_rng(7)
        q = rng.standard_normal((5, 4))
        k = rng.standard_normal((5, 4))
        v = rng.standard_normal((5, 4))
        mask = rng.integers(0, 2, (5, 5))
        out = guided_self_attention(q, k, v, mask, beta=1.0)
        assert np.abs(out - vanilla_attention(q, k, v)).max() < 1e-6

    def test_default_beta_is_hundredth(self):
        assert GuidanceConfig().beta == 0.01

    def test_random_instance_against_oracle(self):
        rng = np.random.default_rng(8)
        q = rng.standard_normal((5, 6))
        k = rng.standard_normal((5, 6))
        v = rng.standard_normal((5, 3))
        mask = rng.integers(0, 2, (5, 5))
        out = guided_self_attention(q, k, v, mask, beta=0.01)
        ref, weights = self_oracle(q, k, v, mask, 0.01)
        assert np.abs(out - ref).max() < 1e-6
        assert np.abs(weights.sum(axis=1) - 1.0).max() < 1e-12

    def test_beta_range_validated(self):
        q = np.zeros((2, 2))
        with pytest.raises(ValidationError):
            guided_self_attention(q, q, q, np.ones((2, 2)), beta=1.5)


class TestShouldEdit:
    def test_boundaries(self):
        assert should_edit(50, 50, 10) is True
        assert should_edit(40, 50, 10) is True  # inclusive lower end
        assert should_edit(39, 50, 10) is False
        assert should_edit(0, 50, 0) is False
        assert should_edit(50, 50, 0) is True

    def test_validation(self):
        with pytest.raises(ValidationError):
            should_edit(51, 50, 10)
        with pytest.raises(ValidationError):
            should_edit(10, 50, 60)


class TestRedistribute:
    def test_lambda_zero_identity(self):
        w = np.array([[0.5, 0.5], [0.25, 0.75]])
        out = redistribute_isolated_attention(w, np.array([0, 1]), 0.0)
        assert np.array_equal(out, w)

    def test_isolated_row_uniform_redistribution(self):
        w = np.array(
            [[1.0, 0, 0, 0], [0, 0.4, 0.3, 0.3], [0, 0.3, 0.4, 0.3], [0, 0.3, 0.3, 0.4]]
        )
        groups = np.array([0, 1, 1, 1])
        out = redistribute_isolated_attention(w, groups, 0.3)
        assert out[0].tolist() == pytest.approx([0.7, 0.1, 0.1, 0.1])

    def test_random_matrix_against_scalar_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            n = 6
            w = rng.random((n, n))
            w /= w.sum(axis=1, keepdims=True)
            groups = rng.integers(0, 3, n)
            lam, thr = 0.25, 0.6
            got = redistribute_isolated_attention(w, groups, lam, thr)
            ref = w.copy()
            for i in range(n):
                inside = [j for j in range(n) if groups[j] == groups[i]]
                outside = [j for j in range(n) if groups[j] != groups[i]]
                mass = sum(ref[i, j] for j in inside)
                if mass > thr and outside:
                    for j in inside:
                        ref[i, j] *= 1 - lam
                    for j in outside:
                        ref[i, j] += lam * mass / len(outside)
            assert np.abs(got - ref).max() < 1e-12
            assert np.abs(got.sum(axis=1) - 1.0).max() < 1e-9

    def test_single_group_warns_and_passes_through(self):
        w = np.array([[0.9, 0.1], [0.2, 0.8]])
        with pytest.warns(UserWarning):
            out = redistribute_isolated_attention(w, np.array([0, 0]), 0.4)
        assert np.array_equal(out, w)

    def test_rejects_non_stochastic(self):
        with pytest.raises(ValidationError):
            redistribute_isolated_attention(np.ones((2, 2)), np.array([0, 1]), 0.1)


class TestSuppressionNeverDegenerateUnderBuilder:
    def test_fg_rows_keep_every_token(self):
        # under the non-degenerate reading, foreground rows are never masked
        rng = np.random.default_rng(10)
        for _ in range(50):
            fg_pix = rng.integers(0, 2, 8)
            fg_tok = rng.integers(0, 2, 5).astype(bool)
            if fg_tok.all():
                fg_tok[rng.integers(0, 5)] = False
            _, keep = build_cross_masks(fg_pix, TokenSet(fg_tok))
            assert (keep.sum(axis=1) >= 1).all()
            assert (keep[fg_pix.astype(bool)] == 1).all()
