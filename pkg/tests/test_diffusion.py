import math

import numpy as np
import pytest

from trajdiff import (
    BBox,
    GuidanceConfig,
    SamplerConfig,
    ToyDenoiser,
    TrajectorySpec,
    ValidationError,
    build_schedule,
    cfg_combine,
    ddim_step,
    fuse_windows,
    generate,
    q_sample,
    window_layout,
)
from trajdiff.diffusion import (
    AttentionRecorder,
    GuidanceContext,
    MaskContext,
    NoiseConfig,
    make_token_embeddings,
)
from trajdiff.noise import SeedSet, sample_gaussian
from trajdiff.trajectory import interpolate_boxes

SMALL = dict(dims=(2, 3, 4, 8), steps=4, schedule_steps=40, model_channels=8, n_tokens=4)


def small_spec(frames=3):
    return TrajectorySpec(
        frames, ((0, BBox(0.05, 0.2, 0.45, 0.8)), (frames - 1, BBox(0.5, 0.2, 0.9, 0.8)))
    )


class TestSchedule:
    def test_single_step(self):
        s = build_schedule(1, 0.25, 0.25)
        assert s.alpha_bar(1) == pytest.approx(0.75)
        assert s.alpha_bar(0) == 1.0

    def test_monotone_decreasing(self):
        s = build_schedule(200)
        assert (np.diff(s.alpha_bars) < 0).all()

    def test_terminal_value_against_high_precision_product(self):
        import mpmath

        s = build_schedule(1000, 1e-4, 2e-2)
        mpmath.mp.dps = 50
        betas = [
            mpmath.mpf("1e-4") + (mpmath.mpf("2e-2") - mpmath.mpf("1e-4")) * i / 999
            for i in range(1000)
        ]
        ref = mpmath.mpf(1)
        for b in betas:
            ref *= 1 - b
        assert abs(s.alpha_bar(1000) - float(ref)) <= 1e-10 * float(ref)

    def test_ddim_subsequence(self):
        s = build_schedule(1000)
        taus = s.ddim_timesteps(50)
        assert len(taus) == 50
        assert taus[0] == 20 and taus[-1] == 1000
        assert len(set(np.diff(taus))) == 1  # uniform stride
        with pytest.raises(ValidationError):
            s.ddim_timesteps(1001)

    def test_invalid_range(self):
        with pytest.raises(ValidationError):
            build_schedule(10, 0.5, 0.2)
        with pytest.raises(ValidationError):
            build_schedule(10, 0.0, 0.2)


class TestQSample:
    def test_t_zero_identity(self):
        s = build_schedule(10)
        x0 = sample_gaussian((1, 2, 4, 4), 0)
        eps = sample_gaussian((1, 2, 4, 4), 1)
        assert np.array_equal(q_sample(x0, 0, eps, s), x0)

    def test_zero_noise(self):
        s = build_schedule(10)
        x0 = sample_gaussian((1, 2, 4, 4), 0)
        out = q_sample(x0, 7, np.zeros_like(x0), s)
        assert np.allclose(out, math.sqrt(s.alpha_bar(7)) * x0)

    def test_algebraic_inversion(self):
        s = build_schedule(100)
        x0 = sample_gaussian((2, 3, 4, 4), 2)
        eps = sample_gaussian((2, 3, 4, 4), 3)
        xt = q_sample(x0, 55, eps, s)
        ab = s.alpha_bar(55)
        rec = (xt - math.sqrt(1 - ab) * eps) / math.sqrt(ab)
        assert np.abs(rec - x0).max() < 1e-6

    def test_t_out_of_range(self):
        s = build_schedule(10)
        x = np.zeros((1, 1, 2, 2))
        with pytest.raises(ValidationError):
            q_sample(x, 11, x, s)


class TestDdimStep:
    def test_inverts_q_sample_with_oracle_noise(self):
        s = build_schedule(100)
        x0 = sample_gaussian((2, 2, 4, 4), 4)
        eps = sample_gaussian((2, 2, 4, 4), 5)
        xt = q_sample(x0, 80, eps, s)
        back = ddim_step(xt, eps, 80, 0, s, eta=0.0)
        assert np.abs(back - x0).max() < 1e-5

    def test_deterministic(self):
        s = build_schedule(100)
        xt = sample_gaussian((1, 2, 4, 4), 6)
        eps = sample_gaussian((1, 2, 4, 4), 7)
        a = ddim_step(xt, eps, 50, 30, s)
        b = ddim_step(xt, eps, 50, 30, s)
        assert np.array_equal(a, b)

    def test_scalar_closed_form(self):
        s = build_schedule(10, 0.05, 0.2)
        ab_t, ab_p = s.alpha_bar(8), s.alpha_bar(5)
        x_t, eps = 1.2, 0.3
        got = ddim_step(np.array([[[[x_t]]]]), np.array([[[[eps]]]]), 8, 5, s)
        x0 = (x_t - math.sqrt(1 - ab_t) * eps) / math.sqrt(ab_t)
        ref = math.sqrt(ab_p) * x0 + math.sqrt(1 - ab_p) * eps
        assert abs(got.item() - ref) < 1e-10

    def test_eta_term(self):
        s = build_schedule(100)
        xt = sample_gaussian((1, 1, 2, 2), 8)
        eps = sample_gaussian((1, 1, 2, 2), 9)
        z = sample_gaussian((1, 1, 2, 2), 10)
        ab_t, ab_p = s.alpha_bar(60), s.alpha_bar(40)
        sigma = 1.0 * math.sqrt((1 - ab_p) / (1 - ab_t)) * math.sqrt(1 - ab_t / ab_p)
        x0 = (xt - math.sqrt(1 - ab_t) * eps) / math.sqrt(ab_t)
        ref = math.sqrt(ab_p) * x0 + math.sqrt(1 - ab_p - sigma**2) * eps + sigma * z
        got = ddim_step(xt, eps, 60, 40, s, eta=1.0, noise=z)
        assert np.abs(got - ref).max() < 1e-12
        with pytest.raises(ValidationError):
            ddim_step(xt, eps, 60, 40, s, eta=1.0)  # noise required

    def test_time_ordering_enforced(self):
        s = build_schedule(10)
        x = np.zeros((1, 1, 2, 2))
        with pytest.raises(ValidationError):
            ddim_step(x, x, 5, 5, s)


class TestCfg:
    def test_endpoints(self):
        eu = sample_gaussian((1, 2, 4, 4), 11)
        ec = sample_gaussian((1, 2, 4, 4), 12)
        assert np.array_equal(cfg_combine(eu, ec, 1.0), ec)
        assert np.array_equal(cfg_combine(eu, ec, 0.0), eu)

    def test_scale_12_elementwise(self):
        eu = sample_gaussian((2, 2, 4, 4), 13)
        ec = sample_gaussian((2, 2, 4, 4), 14)
        got = cfg_combine(eu, ec, 12.0)
        for idx in np.ndindex(*eu.shape):
            assert got[idx] == pytest.approx(eu[idx] + 12.0 * (ec[idx] - eu[idx]))

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            cfg_combine(np.zeros((1, 2)), np.zeros((2, 1)), 1.0)


class TestWindows:
    def test_single_window_identity(self):
        out = sample_gaussian((5, 8, 3), 15)
        fused = fuse_windows([out], [0], 8, 8)
        assert np.abs(fused - out).max() < 1e-12

    def test_two_half_overlapping_windows_mean(self):
        a = sample_gaussian((2, 4, 3), 16)
        b = sample_gaussian((2, 4, 3), 17)
        fused = fuse_windows([a, b], [0, 2], 4, 6)
        assert np.allclose(fused[:, :2], a[:, :2])
        assert np.allclose(fused[:, 2:4], 0.5 * (a[:, 2:] + b[:, :2]))
        assert np.allclose(fused[:, 4:], b[:, 2:])

    def test_long_layout_against_accumulation_oracle(self):
        starts = window_layout(64, 16, 8)
        assert starts[0] == 0 and starts[-1] + 16 == 64
        outputs = [sample_gaussian((3, 16, 4), 20 + i) for i in range(len(starts))]
        fused = fuse_windows(outputs, starts, 16, 64)
        acc = np.zeros((3, 64, 4))
        cnt = np.zeros(64)
        for o, s in zip(outputs, starts):
            for i in range(16):
                acc[:, s + i] += o[:, i]
                cnt[s + i] += 1
        ref = acc / cnt[None, :, None]
        assert np.abs(fused - ref).max() < 1e-6

    def test_partition_of_unity(self):
        starts = window_layout(64, 16, 8)
        ones = [np.ones((1, 16, 1)) for _ in starts]
        fused = fuse_windows(ones, starts, 16, 64)
        assert np.abs(fused - 1.0).max() < 1e-9

    def test_uncovered_frame_rejected(self):
        with pytest.raises(ValidationError):
            fuse_windows([np.ones((1, 4, 1))], [2], 4, 8)

    def test_layout_adds_tail_window(self):
        assert window_layout(20, 16, 8) == [0, 4]
        assert window_layout(16, 16, 8) == [0]
        with pytest.raises(ValidationError):
            window_layout(8, 16, 8)


class TestDenoiser:
    def test_output_shape_and_determinism(self):
        model = ToyDenoiser(0, in_channels=2, channels=8)
        emb = make_token_embeddings(4, 8, 1)
        z = sample_gaussian((2, 3, 4, 8), 2)
        a = model.forward(z, 17, emb)
        b = model.forward(z, 17, emb)
        assert a.shape == z.shape
        assert np.array_equal(a, b)

    def test_neutral_hooks_match_no_hooks(self):
        model = ToyDenoiser(3, in_channels=2, channels=8)
        emb = make_token_embeddings(4, 8, 4)
        z = sample_gaussian((2, 3, 4, 8), 5)
        boxes = interpolate_boxes(small_spec())
        hooks = GuidanceContext(
            config=GuidanceConfig.neutral(),
            tokens=SamplerConfig(**SMALL).token_set(),
            masks=MaskContext(boxes, (4, 8)),
        )
        plain = model.forward(z, 17, emb)
        neutral = model.forward(z, 17, emb, hooks=hooks)
        assert np.abs(plain - neutral).max() < 1e-6 * max(1.0, np.abs(plain).max())

    def test_guided_forward_boosts_cross_mass(self):
        cfg = SamplerConfig(**SMALL)
        model = ToyDenoiser(6, in_channels=2, channels=8)
        emb = make_token_embeddings(4, 8, 7)
        z = sample_gaussian((2, 3, 4, 8), 8)
        boxes = interpolate_boxes(small_spec())
        tokens = cfg.token_set()
        guided_rec = AttentionRecorder(MaskContext(boxes, (4, 8)), tokens)
        plain_rec = AttentionRecorder(MaskContext(boxes, (4, 8)), tokens)
        hooks = GuidanceContext(
            config=GuidanceConfig(), tokens=tokens, masks=MaskContext(boxes, (4, 8))
        )
        model.forward(z, 17, emb, hooks=hooks, recorder=guided_rec)
        model.forward(z, 17, emb, recorder=plain_rec)
        assert guided_rec.cross_fg_mass > plain_rec.cross_fg_mass

    def test_input_validation(self):
        model = ToyDenoiser(0, in_channels=2, channels=8)
        emb = make_token_embeddings(4, 8, 1)
        with pytest.raises(ValidationError):
            model.forward(sample_gaussian((3, 2, 4, 8), 0), 1, emb)  # wrong channels
        with pytest.raises(ValidationError):
            model.forward(sample_gaussian((2, 2, 6, 8), 0), 1, emb)  # H not /4
        with pytest.raises(ValidationError):
            model.forward(sample_gaussian((2, 2, 4, 8), 0), 1, np.zeros((4, 5)))


class TestGenerate:
    def test_bit_identical_repeats(self):
        cfg = SamplerConfig(**SMALL)
        a = generate(cfg, seeds=1)
        b = generate(cfg, seeds=1)
        assert np.array_equal(a, b)
        assert a.shape == (2, 3, 4, 8)

    def test_different_seeds_differ(self):
        cfg = SamplerConfig(**SMALL)
        assert not np.array_equal(generate(cfg, seeds=1), generate(cfg, seeds=2))

    def test_guided_run_with_trajectory(self):
        cfg = SamplerConfig(
            **SMALL, guided=True, guidance=GuidanceConfig(edit_steps=2)
        )
        out = generate(cfg, small_spec(), seeds=3)
        assert out.shape == (2, 3, 4, 8)
        assert np.isfinite(out).all()

    def test_eta_positive_is_seeded(self):
        cfg = SamplerConfig(**SMALL, eta=0.5)
        a = generate(cfg, seeds=4)
        b = generate(cfg, seeds=4)
        assert np.array_equal(a, b)
        zero_eta = generate(SamplerConfig(**SMALL), seeds=4)
        assert not np.array_equal(a, zero_eta)

    def test_large_mode_doubles_height(self):
        cfg = SamplerConfig(**SMALL, mode="large")
        assert cfg.latent_shape == (2, 3, 8, 8)
        out = generate(cfg, seeds=5)
        assert out.shape == (2, 3, 8, 8)

    def test_long_mode_shape_and_trajectory_check(self):
        small = dict(SMALL)
        small["dims"] = (2, 4, 4, 8)
        cfg = SamplerConfig(
            **small, mode="long", total_frames=8, window_len=4, window_stride=2
        )
        out = generate(cfg, seeds=6)
        assert out.shape == (2, 8, 4, 8)
        with pytest.raises(ValidationError):
            guided = SamplerConfig(
                **small,
                mode="long",
                total_frames=8,
                window_len=4,
                window_stride=2,
                guided=True,
                guidance=GuidanceConfig(edit_steps=2),
            )
            generate(guided, small_spec(4), seeds=6)  # 4 frames, video has 8

    def test_all_foreground_tokens_rejected_when_guided(self):
        cfg = SamplerConfig(
            **{**SMALL, "n_tokens": 2},
            fg_tokens=(0, 1),
            guided=True,
            guidance=GuidanceConfig(edit_steps=2),
        )
        with pytest.raises(ValidationError, match="foreground"):
            generate(cfg, small_spec(), seeds=0)

    def test_seed_set_construction(self):
        s = SeedSet.from_master(10)
        assert s.noise == 10 and s.local == 11
        with pytest.raises(ValidationError):
            SeedSet.from_master(-1)
        with pytest.raises(ValidationError):
            SeedSet.from_master(2**64)
