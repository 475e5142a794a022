"""A small deterministic latent video diffusion pipeline.

The denoiser is an untrained two-level UNet whose weights come from a seeded
counter-based generator: residual convolution, temporal convolution, spatial
transformer (self + cross attention) and temporal transformer (two temporal
self-attention layers plus an MLP) per computation block. It exists to
exercise the guidance hooks with realistic shapes and data flow, not to
produce good videos. Everything downstream of a seed is bit-reproducible.

Guidance enters in three places during the early sampler steps: cross
attention (boost + suppression), spatial self attention and temporal self
attention (soft region masks), with masks rescaled to each block's lattice.
Long sequences run temporal attention in overlapping fused windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .attention import (
    GuidanceConfig,
    TokenSet,
    alpha_for_box,
    cross_guided_batched,
    gaussian_weight_grid,
    redistribute_isolated_attention,
    self_guided_batched,
    should_edit,
    temporal_masks_all_pixels,
)
from .errors import ValidationError
from .noise import SeedSet, build_initial_noise, rng_for, sample_gaussian
from .trajectory import BBox, TrajectorySpec, interpolate_boxes, rasterize_masks, rescale_mask

# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class DiffusionSchedule:
    """Variance schedule tables; alpha_bars[t] is the cumulative product,
    with alpha_bars[0] = 1 by convention."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def total_steps(self) -> int:
        return self.betas.shape[0]

    def alpha_bar(self, t: int) -> float:
        if not (0 <= t <= self.total_steps):
            raise ValidationError(f"t={t} outside [0, {self.total_steps}]")
        return float(self.alpha_bars[t])

    def ddim_timesteps(self, steps: int) -> np.ndarray:
        """Uniform-stride ascending subsequence of timesteps, length ``steps``."""
        if not (1 <= steps <= self.total_steps):
            raise ValidationError(
                f"steps must be in [1, {self.total_steps}], got {steps}"
            )
        stride = self.total_steps // steps
        return stride * np.arange(1, steps + 1)


def build_schedule(
    total_steps: int, beta_start: float = 1e-4, beta_end: float = 2e-2
) -> DiffusionSchedule:
    """Linear beta schedule with cumulative-product alpha_bar tables."""
    if total_steps < 1:
        raise ValidationError("total_steps must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )
    betas = np.linspace(beta_start, beta_end, total_steps)
    alphas = 1.0 - betas
    alpha_bars = np.concatenate(([1.0], np.cumprod(alphas)))
    return DiffusionSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def q_sample(
    x0: np.ndarray, t: int, eps: np.ndarray, schedule: DiffusionSchedule
) -> np.ndarray:
    """Forward-process sample: sqrt(a_bar) x0 + sqrt(1 - a_bar) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValidationError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def ddim_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    schedule: DiffusionSchedule,
    eta: float = 0.0,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One deterministic (eta=0) or stochastic DDIM update from t to t_prev."""
    if t_prev >= t:
        raise ValidationError(f"t_prev={t_prev} must be < t={t}")
    if eta < 0:
        raise ValidationError("eta must be >= 0")
    ab_t = schedule.alpha_bar(t)
    ab_p = schedule.alpha_bar(t_prev)
    x0_hat = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    sigma = eta * np.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_p)
    out = np.sqrt(ab_p) * x0_hat + np.sqrt(max(1.0 - ab_p - sigma**2, 0.0)) * eps_hat
    if sigma > 0:
        if noise is None:
            raise ValidationError("eta > 0 requires a noise tensor")
        out = out + sigma * noise
    return out


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, scale: float) -> np.ndarray:
    """Classifier-free guidance: extrapolate from unconditional toward conditional.

    Written as (1 - scale) * uncond + scale * cond so the endpoints scale=0
    and scale=1 reproduce their inputs exactly.
    """
    if eps_uncond.shape != eps_cond.shape:
        raise ValidationError(
            f"shape mismatch: {eps_uncond.shape} vs {eps_cond.shape}"
        )
    return (1.0 - scale) * eps_uncond + scale * eps_cond


# ---------------------------------------------------------------------------
# window fusion for long sequences


def window_layout(total_frames: int, window_len: int, stride: int) -> list[int]:
    """Start indices of overlapping windows covering [0, total_frames)."""
    if window_len < 1 or stride < 1:
        raise ValidationError("window_len and stride must be >= 1")
    if window_len > total_frames:
        raise ValidationError(
            f"window_len {window_len} exceeds total frames {total_frames}"
        )
    starts = list(range(0, total_frames - window_len + 1, stride))
    if starts[-1] + window_len < total_frames:
        starts.append(total_frames - window_len)
    return starts


def fuse_windows(
    outputs: list[np.ndarray],
    starts: list[int],
    window_len: int,
    total_frames: int,
    weights: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Blend per-window outputs into a full sequence.

    Each output covers frames [start, start + window_len) on its second-to-
    last axis. A frame's fused value is the weight-normalized average over
    every window covering it (uniform weights by default), so the effective
    per-frame weights always sum to 1. Every frame must be covered.
    """
    if len(outputs) != len(starts):
        raise ValidationError("one start per window output required")
    if weights is not None and len(weights) != len(outputs):
        raise ValidationError("one weight vector per window required")
    lead = outputs[0].shape[:-2]
    ch = outputs[0].shape[-1]
    acc = np.zeros(lead + (total_frames, ch))
    norm = np.zeros(total_frames)
    for idx, (out, start) in enumerate(zip(outputs, starts)):
        if out.shape != lead + (window_len, ch):
            raise ValidationError(f"window output {idx} has shape {out.shape}")
        if not (0 <= start and start + window_len <= total_frames):
            raise ValidationError(f"window [{start}, {start + window_len}) out of range")
        w = np.ones(window_len) if weights is None else np.asarray(weights[idx], dtype=np.float64)
        if w.shape != (window_len,) or (w <= 0).any():
            raise ValidationError(f"weights for window {idx} must be positive, length {window_len}")
        acc[..., start : start + window_len, :] += out * w[:, None]
        norm[start : start + window_len] += w
    if (norm == 0).any():
        missing = int(np.flatnonzero(norm == 0)[0])
        raise ValidationError(f"frame {missing} not covered by any window")
    return acc / norm[:, None]


# ---------------------------------------------------------------------------
# guidance context


class MaskContext:
    """Trajectory masks, Gaussian grids and boosts cached per lattice resolution.

    Masks are rasterized once at the latent resolution and rescaled (any-
    overlap) to whatever lattice an attention block runs at.
    """

    def __init__(self, boxes: list[BBox], latent_hw: tuple[int, int]):
        self.boxes = list(boxes)
        self.latent_hw = (int(latent_hw[0]), int(latent_hw[1]))
        self.base = rasterize_masks(self.boxes, *self.latent_hw)
        self._flat: dict[tuple[int, int], np.ndarray] = {}
        self._gauss: dict[tuple[int, int, float], np.ndarray] = {}
        self._temporal: dict[tuple, np.ndarray] = {}

    @property
    def frames(self) -> int:
        return len(self.boxes)

    def flat_masks(self, h: int, w: int) -> np.ndarray:
        """(F, h*w) flattened binary masks at resolution (h, w)."""
        key = (h, w)
        if key not in self._flat:
            if key == self.latent_hw:
                stack = self.base.masks
            else:
                stack = np.stack(
                    [rescale_mask(self.base.masks[f], h, w) for f in range(self.frames)]
                )
            self._flat[key] = stack.reshape(self.frames, h * w)
        return self._flat[key]

    def gauss_grids(self, h: int, w: int, sigma_scale: float) -> np.ndarray:
        """(F, h*w) per-frame Gaussian weights around each frame's box center."""
        key = (h, w, float(sigma_scale))
        if key not in self._gauss:
            self._gauss[key] = np.stack(
                [gaussian_weight_grid(b, h, w, sigma_scale).reshape(-1) for b in self.boxes]
            )
        return self._gauss[key]

    def alphas(self, config: GuidanceConfig, fg_tokens: int) -> np.ndarray:
        """Per-frame cross boost scalars."""
        return np.array([alpha_for_box(config, fg_tokens, b) for b in self.boxes])

    def temporal_masks(self, h: int, w: int, start: int = 0, length: int | None = None) -> np.ndarray:
        """(pixels, L, L) same-region masks for a frame window."""
        length = self.frames if length is None else length
        key = (h, w, start, length)
        if key not in self._temporal:
            stack = self.flat_masks(h, w)[start : start + length]
            self._temporal[key] = temporal_masks_all_pixels(stack)
        return self._temporal[key]


@dataclass
class GuidanceContext:
    """Everything the denoiser needs to apply attention edits.

    masks is None when no trajectory is given (only the temporal isolation
    repair can then act, driven by frame_groups from repeated noise spans).
    """

    config: GuidanceConfig
    tokens: TokenSet
    masks: MaskContext | None = None
    frame_groups: np.ndarray | None = None


class AttentionRecorder:
    """Collects attention diagnostics during a forward pass.

    cross_fg_mass accumulates the total attention weight flowing from in-box
    query pixels to foreground tokens; temporal_mask_spans logs the frame
    window each guided temporal mask was built from.
    """

    def __init__(self, masks: MaskContext, tokens: TokenSet):
        self.masks = masks
        self.tokens = tokens
        self.cross_fg_mass = 0.0
        self.temporal_mask_spans: list[tuple[int, int, tuple[int, ...]]] = []

    def record_cross(self, weights: np.ndarray, h: int, w: int) -> None:
        fg_pix = self.masks.flat_masks(h, w).astype(bool)
        fg_tok = self.tokens.fg_flags
        if not fg_tok.any():
            return
        sel = weights[:, :, fg_tok]
        self.cross_fg_mass += float(sel[fg_pix].sum())

    def record_temporal_mask(self, start: int, length: int, shape: tuple[int, ...]) -> None:
        self.temporal_mask_spans.append((start, length, shape))


def _cross_weights(
    q: np.ndarray,
    k: np.ndarray,
    keep: np.ndarray | None,
    boost: np.ndarray | None,
) -> np.ndarray:
    """Post-softmax cross-attention weights, for recording only."""
    logits = np.matmul(q, k.T) / np.sqrt(q.shape[-1])
    if keep is not None:
        logits = np.where(keep != 0, logits, -np.inf)
    logits -= logits.max(axis=-1, keepdims=True)
    wts = np.exp(logits)
    wts /= wts.sum(axis=-1, keepdims=True)
    if boost is not None:
        wts = wts + boost
    return wts


# ---------------------------------------------------------------------------
# toy denoiser


def _silu(x: np.ndarray) -> np.ndarray:
    # x * sigmoid(x), written via tanh so it is overflow-safe in one pass
    return x * 0.5 * (1.0 + np.tanh(0.5 * x))


def _group_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, groups: int = 4) -> np.ndarray:
    c, f, h, w = x.shape
    xg = x.reshape(groups, c // groups, f, h, w)
    mean = xg.mean(axis=(1, 3, 4), keepdims=True)
    var = xg.var(axis=(1, 3, 4), keepdims=True)
    xn = ((xg - mean) / np.sqrt(var + 1e-5)).reshape(c, f, h, w)
    return xn * gamma[:, None, None, None] + beta[:, None, None, None]


def _layer_norm(tok: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    mean = tok.mean(axis=-1, keepdims=True)
    var = tok.var(axis=-1, keepdims=True)
    return (tok - mean) / np.sqrt(var + 1e-5) * gamma + beta


def _timestep_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def make_token_embeddings(n_tokens: int, dim: int, seed: int) -> np.ndarray:
    """Seeded stand-in for text embeddings."""
    if n_tokens < 1:
        raise ValidationError("n_tokens must be >= 1")
    return rng_for(seed).standard_normal((n_tokens, dim))


class ToyDenoiser:
    """Untrained noise-prediction UNet with seeded weights.

    Convolutional stages (residual + temporal conv) run at the latent
    lattice; the two transformer-bearing computation blocks (residual conv,
    temporal conv, spatial transformer, temporal transformer) run at the /2
    and /4 lattices, as video UNets place attention below full resolution.
    The up path applies residual convs after each upsample + skip. Output
    shape always equals input shape.
    """

    GROUPS = 4

    def __init__(self, seed: int, in_channels: int = 4, channels: int = 16):
        if channels % self.GROUPS != 0 or channels % 2 != 0:
            raise ValidationError(f"channels must be divisible by {self.GROUPS}")
        self.in_channels = in_channels
        self.channels = channels
        rng = rng_for(seed)
        m = channels

        def linear(nin, nout, scale=1.0):
            return {
                "w": rng.standard_normal((nin, nout)) * (scale / math.sqrt(nin)),
                "b": rng.standard_normal(nout) * 0.02,
            }

        def conv(nin, nout, taps, scale=1.0):
            fan = nin * np.prod(taps)
            return {
                "w": rng.standard_normal((nout, nin, *taps)) * (scale / math.sqrt(fan)),
                "b": rng.standard_normal(nout) * 0.02,
            }

        def norm(n):
            return {
                "g": 1.0 + 0.1 * rng.standard_normal(n),
                "b": 0.1 * rng.standard_normal(n),
            }

        def attn(kv_dim):
            return {
                "q": linear(m, m),
                "k": linear(kv_dim, m),
                "v": linear(kv_dim, m),
                "o": linear(m, m),
            }

        def transformer(kind):
            p = {
                "gn": norm(m),
                "proj_in": linear(m, m),
                "ln1": norm(m),
                "ln2": norm(m),
                "ln3": norm(m),
                "mlp1": linear(m, 2 * m),
                "mlp2": linear(2 * m, m),
                "proj_out": linear(m, m),
            }
            if kind == "spatial":
                p["self"] = attn(m)
                p["cross"] = attn(m)
            else:
                p["attn1"] = attn(m)
                p["attn2"] = attn(m)
            return p

        def res_block():
            return {
                "gn1": norm(m),
                "conv1": conv(m, m, (3, 3)),
                "time": linear(m, m),
                "gn2": norm(m),
                "conv2": conv(m, m, (3, 3)),
            }

        def block():
            return {
                "res": res_block(),
                "tgn": norm(m),
                "tconv": conv(m, m, (3,)),
                "st": transformer("spatial"),
                "tt": transformer("temporal"),
            }

        self.params = {
            "time1": linear(m, m),
            "time2": linear(m, m),
            "conv_in": conv(in_channels, m, (3, 3)),
            "res0": res_block(),
            "tgn0": norm(m),
            "tconv0": conv(m, m, (3,)),
            "block1": block(),
            "block2": block(),
            "res_up1": res_block(),
            "res_up0": res_block(),
            "gn_out": norm(m),
            "conv_out": conv(m, in_channels, (3, 3), scale=0.5),
        }

    # -- small pieces ------------------------------------------------------

    @staticmethod
    def _lin(tok: np.ndarray, p: dict) -> np.ndarray:
        return tok @ p["w"] + p["b"]

    def _res(self, x: np.ndarray, p: dict, time_vec: np.ndarray) -> np.ndarray:
        h = kernels.conv3x3(
            np.ascontiguousarray(_silu(_group_norm(x, p["gn1"]["g"], p["gn1"]["b"]))),
            p["conv1"]["w"],
            p["conv1"]["b"],
        )
        h = h + self._lin(time_vec, p["time"])[:, None, None, None]
        h = kernels.conv3x3(
            np.ascontiguousarray(_silu(_group_norm(h, p["gn2"]["g"], p["gn2"]["b"]))),
            p["conv2"]["w"],
            p["conv2"]["b"],
        )
        return x + h

    def _tconv(self, x: np.ndarray, gn: dict, cv: dict) -> np.ndarray:
        h = kernels.tconv3(
            np.ascontiguousarray(_silu(_group_norm(x, gn["g"], gn["b"]))),
            cv["w"],
            cv["b"],
        )
        return x + h

    def _mlp(self, tok: np.ndarray, p: dict) -> np.ndarray:
        return self._lin(_silu(self._lin(tok, p["mlp1"])), p["mlp2"])

    def _spatial_transformer(self, x, p, ctx_emb, hooks, recorder):
        c, f, h, w = x.shape
        n = h * w
        tok0 = _group_norm(x, p["gn"]["g"], p["gn"]["b"])
        tok = self._lin(tok0.transpose(1, 2, 3, 0).reshape(f, n, c), p["proj_in"])

        guided = hooks is not None and hooks.masks is not None
        if guided:
            flat = hooks.masks.flat_masks(h, w)  # (F, n)
            fg = flat.astype(bool)

        # spatial self attention, one instance per frame
        t1 = _layer_norm(tok, p["ln1"]["g"], p["ln1"]["b"])
        q = self._lin(t1, p["self"]["q"])
        k = self._lin(t1, p["self"]["k"])
        v = self._lin(t1, p["self"]["v"])
        if guided and hooks.config.beta != 1.0:
            same = (fg[:, :, None] == fg[:, None, :]).astype(np.uint8)
            attn_out = self_guided_batched(q, k, v, same, hooks.config.beta)
        else:
            attn_out = kernels.attention(
                np.ascontiguousarray(q), np.ascontiguousarray(k), np.ascontiguousarray(v)
            )
        tok = tok + self._lin(attn_out, p["self"]["o"])

        # cross attention against the token embeddings, shared across frames
        t2 = _layer_norm(tok, p["ln2"]["g"], p["ln2"]["b"])
        q = self._lin(t2, p["cross"]["q"])
        kc = self._lin(ctx_emb, p["cross"]["k"])
        vc = self._lin(ctx_emb, p["cross"]["v"])
        keep = boost = None
        if guided:
            fg_tok = hooks.tokens.fg_flags
            if fg_tok.any():
                m_ca = (fg[:, :, None] & fg_tok[None, None, :]).astype(np.uint8)
                alphas = hooks.masks.alphas(hooks.config, int(fg_tok.sum()))
                gauss = hooks.masks.gauss_grids(h, w, hooks.config.sigma_scale)
                boost = alphas[:, None, None] * gauss[:, :, None] * m_ca
                if hooks.config.suppress:
                    keep = 1 - ((~fg)[:, :, None] & fg_tok[None, None, :]).astype(np.uint8)
        if keep is not None or boost is not None:
            keepm = keep if keep is not None else np.ones_like(boost, dtype=np.uint8)
            boostm = boost if boost is not None else np.zeros_like(keepm, dtype=np.float64)
            attn_out = cross_guided_batched(q, kc, vc, keepm, boostm)
        else:
            kb = np.ascontiguousarray(np.broadcast_to(kc, (f,) + kc.shape))
            vb = np.ascontiguousarray(np.broadcast_to(vc, (f,) + vc.shape))
            attn_out = kernels.attention(np.ascontiguousarray(q), kb, vb)
        if recorder is not None:
            recorder.record_cross(_cross_weights(q, kc, keep, boost), h, w)
        tok = tok + self._lin(attn_out, p["cross"]["o"])

        tok = tok + self._mlp(_layer_norm(tok, p["ln3"]["g"], p["ln3"]["b"]), p)
        out = self._lin(tok, p["proj_out"]).reshape(f, h, w, c).transpose(3, 0, 1, 2)
        return x + out

    def _temporal_attention(self, tok, p_attn, ln, hooks, recorder, h, w, windows):
        """One temporal self-attention sublayer over (pixels, frames, dim)."""
        n_pix, f, _ = tok.shape
        tn = _layer_norm(tok, ln["g"], ln["b"])
        q = self._lin(tn, p_attn["q"])
        k = self._lin(tn, p_attn["k"])
        v = self._lin(tn, p_attn["v"])

        def attend(qs, ks, vs, start, length):
            guided_masks = hooks is not None and hooks.masks is not None and hooks.config.beta != 1.0
            groups = hooks.frame_groups if hooks is not None else None
            lam = hooks.config.isolation_lambda if hooks is not None else 0.0
            redistribute = (
                groups is not None
                and lam > 0.0
                and np.unique(groups[start : start + length]).size > 1
            )
            if guided_masks:
                masks = hooks.masks.temporal_masks(h, w, start, length)
                if recorder is not None:
                    recorder.record_temporal_mask(start, length, masks.shape[1:])
                if not redistribute:
                    return self_guided_batched(qs, ks, vs, masks, hooks.config.beta)
                wsoft = np.where(masks != 0, 1.0, hooks.config.beta)
            elif redistribute:
                wsoft = np.ones((n_pix, length, length))
            else:
                return kernels.attention(
                    np.ascontiguousarray(qs), np.ascontiguousarray(ks), np.ascontiguousarray(vs)
                )
            # isolation repair needs the weights, so this path stays in numpy
            logits = np.matmul(qs, np.swapaxes(ks, -1, -2)) / np.sqrt(qs.shape[-1]) * wsoft
            logits -= logits.max(axis=-1, keepdims=True)
            wts = np.exp(logits)
            wts /= wts.sum(axis=-1, keepdims=True)
            labels = groups[start : start + length]
            for pix in range(n_pix):
                wts[pix] = redistribute_isolated_attention(
                    wts[pix], labels, lam, hooks.config.isolation_threshold
                )
            return np.matmul(wts, vs)

        if windows is None:
            out = attend(q, k, v, 0, f)
        else:
            starts, wlen = windows
            pieces = [
                attend(
                    np.ascontiguousarray(q[:, s : s + wlen]),
                    np.ascontiguousarray(k[:, s : s + wlen]),
                    np.ascontiguousarray(v[:, s : s + wlen]),
                    s,
                    wlen,
                )
                for s in starts
            ]
            out = fuse_windows(pieces, starts, wlen, f)
        return tok + self._lin(out, p_attn["o"])

    def _temporal_transformer(self, x, p, hooks, recorder, windows):
        c, f, h, w = x.shape
        n = h * w
        tok0 = _group_norm(x, p["gn"]["g"], p["gn"]["b"])
        tok = self._lin(tok0.transpose(2, 3, 1, 0).reshape(n, f, c), p["proj_in"])
        tok = self._temporal_attention(tok, p["attn1"], p["ln1"], hooks, recorder, h, w, windows)
        tok = self._temporal_attention(tok, p["attn2"], p["ln2"], hooks, recorder, h, w, windows)
        tok = tok + self._mlp(_layer_norm(tok, p["ln3"]["g"], p["ln3"]["b"]), p)
        out = self._lin(tok, p["proj_out"]).reshape(h, w, f, c).transpose(3, 2, 0, 1)
        return x + out

    def _block(self, x, p, time_vec, ctx_emb, hooks, recorder, windows):
        x = self._res(x, p["res"], time_vec)
        x = self._tconv(x, p["tgn"], p["tconv"])
        x = self._spatial_transformer(x, p["st"], ctx_emb, hooks, recorder)
        x = self._temporal_transformer(x, p["tt"], hooks, recorder, windows)
        return x

    # -- public ------------------------------------------------------------

    def forward(
        self,
        z_t: np.ndarray,
        t: int,
        token_emb: np.ndarray,
        hooks: GuidanceContext | None = None,
        recorder: AttentionRecorder | None = None,
        windows: tuple[list[int], int] | None = None,
    ) -> np.ndarray:
        """Predict the noise component of z_t.

        hooks switches the attention layers into their guided variants;
        windows = (starts, window_len) runs temporal attention in fused
        overlapping windows (long mode).
        """
        z_t = np.asarray(z_t, dtype=np.float64)
        if z_t.ndim != 4 or z_t.shape[0] != self.in_channels:
            raise ValidationError(
                f"expected ({self.in_channels}, F, H, W), got {z_t.shape}"
            )
        _, f, h, w = z_t.shape
        if h % 4 or w % 4:
            raise ValidationError("spatial dims must be divisible by 4")
        if token_emb.ndim != 2 or token_emb.shape[1] != self.channels:
            raise ValidationError(
                f"token embeddings must be (n, {self.channels}), got {token_emb.shape}"
            )

        def down(y):
            c_, f_, h_, w_ = y.shape
            return y.reshape(c_, f_, h_ // 2, 2, w_ // 2, 2).mean(axis=(3, 5))

        def up(y):
            return np.repeat(np.repeat(y, 2, axis=2), 2, axis=3)

        p = self.params
        tv = self._lin(_silu(self._lin(_timestep_embedding(t, self.channels), p["time1"])), p["time2"])
        x = kernels.conv3x3(np.ascontiguousarray(z_t), p["conv_in"]["w"], p["conv_in"]["b"])
        x = self._res(x, p["res0"], tv)
        x = self._tconv(x, p["tgn0"], p["tconv0"])
        skip0 = x
        x = down(x)
        x = self._block(x, p["block1"], tv, token_emb, hooks, recorder, windows)
        skip1 = x
        x = down(x)
        x = self._block(x, p["block2"], tv, token_emb, hooks, recorder, windows)
        x = up(x) + skip1
        x = self._res(x, p["res_up1"], tv)
        x = up(x) + skip0
        x = self._res(x, p["res_up0"], tv)
        x = _silu(_group_norm(x, p["gn_out"]["g"], p["gn_out"]["b"]))
        return kernels.conv3x3(np.ascontiguousarray(x), p["conv_out"]["w"], p["conv_out"]["b"])


def denoiser_forward(
    model: ToyDenoiser,
    z_t: np.ndarray,
    t: int,
    token_emb: np.ndarray,
    hooks: GuidanceContext | None = None,
    recorder: AttentionRecorder | None = None,
    windows: tuple[list[int], int] | None = None,
) -> np.ndarray:
    return model.forward(z_t, t, token_emb, hooks, recorder, windows)


# ---------------------------------------------------------------------------
# sampler configuration and the end-to-end pipeline


@dataclass(frozen=True)
class NoiseConfig:
    """Initial-noise construction knobs."""

    inject: bool = True
    keep_fraction: float = 0.25
    lpf_kind: str = "ideal"
    repeat_spans: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        if not (0.0 <= self.keep_fraction <= 1.0):
            raise ValidationError("keep_fraction must be in [0, 1]")
        if self.lpf_kind not in ("ideal", "gaussian"):
            raise ValidationError(f"unknown filter kind {self.lpf_kind!r}")


@dataclass(frozen=True)
class SamplerConfig:
    """Everything that shapes one sampling run."""

    steps: int = 50
    eta: float = 0.0
    cfg_scale: float = 12.0
    dims: tuple[int, int, int, int] = (4, 16, 16, 24)
    mode: str = "normal"
    total_frames: int = 64
    schedule_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    window_len: int = 16
    window_stride: int = 8
    model_channels: int = 16
    n_tokens: int = 8
    fg_tokens: tuple[int, ...] = (1,)
    guided: bool = False
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        if self.mode not in ("normal", "long", "large"):
            raise ValidationError(f"mode must be normal|long|large, got {self.mode!r}")
        if len(self.dims) != 4 or any(d < 1 for d in self.dims):
            raise ValidationError(f"dims must be 4 positive ints, got {self.dims}")
        if self.dims[2] % 4 or self.dims[3] % 4:
            raise ValidationError("spatial dims must be divisible by 4")
        if not (1 <= self.steps <= self.schedule_steps):
            raise ValidationError(
                f"steps must be in [1, {self.schedule_steps}], got {self.steps}"
            )
        if self.eta < 0:
            raise ValidationError("eta must be >= 0")
        if self.guided and self.guidance.edit_steps > self.steps:
            raise ValidationError("edit_steps cannot exceed sampler steps")
        if self.mode == "long":
            if self.total_frames < self.dims[1]:
                raise ValidationError("total_frames must be >= base frame count")
            if self.window_len > self.total_frames:
                raise ValidationError("window_len exceeds total_frames")
        if self.n_tokens < 1:
            raise ValidationError("n_tokens must be >= 1")
        if any(not (0 <= i < self.n_tokens) for i in self.fg_tokens):
            raise ValidationError("fg token index out of range")

    @property
    def latent_shape(self) -> tuple[int, int, int, int]:
        c, f, h, w = self.dims
        if self.mode == "long":
            f = self.total_frames
        elif self.mode == "large":
            h = 2 * h
        return (c, f, h, w)

    def token_set(self) -> TokenSet:
        flags = np.zeros(self.n_tokens, dtype=bool)
        flags[list(self.fg_tokens)] = True
        return TokenSet(flags)


def initial_noise_for(
    config: SamplerConfig,
    trajectory: TrajectorySpec | None,
    seeds: SeedSet,
) -> np.ndarray:
    """Initial latent noise for a run: plain when unguided, else the guided
    pipeline (reschedule in long mode, then inject, then resample)."""
    c, f, h, w = config.latent_shape
    if not config.guided:
        return sample_gaussian((c, f, h, w), seeds.noise)
    boxes = None
    if trajectory is not None:
        if trajectory.total_frames != f:
            raise ValidationError(
                f"trajectory covers {trajectory.total_frames} frames, video has {f}"
            )
        boxes = interpolate_boxes(trajectory)
    base_f = config.dims[1] if config.mode == "long" else f
    return build_initial_noise(
        (c, base_f, h, w),
        seeds,
        boxes=boxes,
        inject=config.noise.inject,
        keep_fraction=config.noise.keep_fraction,
        lpf_kind=config.noise.lpf_kind,
        total_frames=f if config.mode == "long" else None,
        repeat_spans=list(config.noise.repeat_spans),
    )


def _frame_groups(total_frames: int, spans: tuple[tuple[int, int, int], ...]) -> np.ndarray | None:
    """Partition labels from repeated-noise spans; frames outside spans are
    singleton groups."""
    if not spans:
        return None
    labels = np.arange(total_frames)
    for gid, (start, length, _) in enumerate(spans):
        labels[start : start + length] = total_frames + gid
    return labels


def generate(
    config: SamplerConfig,
    trajectory: TrajectorySpec | None = None,
    seeds: SeedSet | int = 0,
    recorder: AttentionRecorder | None = None,
) -> np.ndarray:
    """Run the full DDIM loop with CFG and optional guidance hooks.

    Fully deterministic for a given (config, trajectory, seeds): the initial
    noise, the model weights, the token embeddings and any stochastic DDIM
    noise all derive from named seeds.
    """
    if isinstance(seeds, int):
        seeds = SeedSet.from_master(seeds)
    c, f, h, w = config.latent_shape
    schedule = build_schedule(config.schedule_steps, config.beta_start, config.beta_end)
    taus = schedule.ddim_timesteps(config.steps)

    model = ToyDenoiser(seeds.model, in_channels=c, channels=config.model_channels)
    tokens = config.token_set()
    cond_emb = make_token_embeddings(config.n_tokens, config.model_channels, seeds.model + 1)
    uncond_emb = np.zeros_like(cond_emb)

    hooks = None
    if config.guided:
        if tokens.fg_count == tokens.n_tokens and config.guidance.suppress:
            raise ValidationError(
                "all tokens are foreground: background rows would be fully suppressed"
            )
        mask_ctx = None
        if trajectory is not None:
            mask_ctx = MaskContext(interpolate_boxes(trajectory), (h, w))
        hooks = GuidanceContext(
            config=config.guidance,
            tokens=tokens,
            masks=mask_ctx,
            frame_groups=_frame_groups(f, config.noise.repeat_spans),
        )

    windows = None
    if config.mode == "long":
        windows = (window_layout(f, config.window_len, config.window_stride), config.window_len)

    x = initial_noise_for(config, trajectory, seeds)
    step_rng = rng_for(seeds.step_noise)
    n_steps = len(taus)
    for idx in range(n_steps - 1, -1, -1):
        t = int(taus[idx])
        t_prev = int(taus[idx - 1]) if idx > 0 else 0
        position = idx + 1
        active = hooks if (hooks is not None and should_edit(position, n_steps, config.guidance.edit_steps)) else None
        eps_c = model.forward(x, t, cond_emb, active, recorder, windows)
        eps_u = model.forward(x, t, uncond_emb, None, None, windows)
        eps = cfg_combine(eps_u, eps_c, config.cfg_scale)
        noise = step_rng.standard_normal(x.shape) if config.eta > 0 else None
        x = ddim_step(x, eps, t, t_prev, schedule, config.eta, noise)
    return x


def box_energy_ratio(latent: np.ndarray, boxes: list[BBox]) -> np.ndarray:
    """Per-frame mean |latent| inside the box over mean |latent| outside."""
    latent = np.asarray(latent)
    _, f, h, w = latent.shape
    if len(boxes) != f:
        raise ValidationError(f"{len(boxes)} boxes for {f} frames")
    masks = rasterize_masks(boxes, h, w)
    ratios = np.empty(f)
    for i in range(f):
        m = masks.masks[i].astype(bool)
        if not m.any() or m.all():
            raise ValidationError(f"frame {i} box covers none or all of the lattice")
        mag = np.abs(latent[:, i])
        ratios[i] = mag[:, m].mean() / mag[:, ~m].mean()
    return ratios
