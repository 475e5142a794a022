"""Soft attention guidance: region masks and reweighted attention kernels.

Cross attention gets a post-softmax boost toward foreground tokens inside
the box plus hard suppression of foreground tokens for background queries.
Self attention (spatial and temporal) keeps cross-region logits but scales
them by a small factor instead of masking them out, which avoids regions
drifting off-distribution with no corrective signal from their surroundings
(isolated regions turn into blocky artifacts otherwise). A separate repair
redistributes attention away from frames that became temporally isolated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import ValidationError
from .trajectory import BBox


@dataclass(frozen=True)
class TokenSet:
    """Prompt tokens with a foreground flag per token."""

    fg_flags: np.ndarray

    def __post_init__(self):
        flags = np.asarray(self.fg_flags, dtype=bool)
        if flags.ndim != 1 or flags.size < 1:
            raise ValidationError("token set needs at least one token")
        object.__setattr__(self, "fg_flags", flags)
        flags.setflags(write=False)

    @property
    def n_tokens(self) -> int:
        return self.fg_flags.size

    @property
    def fg_count(self) -> int:
        return int(self.fg_flags.sum())


@dataclass(frozen=True)
class GuidanceConfig:
    """Scalars controlling the attention edits.

    alpha_scale is the numerator of the cross boost; the effective boost for
    a frame is alpha_scale / (fg token count * box area fraction). beta
    multiplies cross-region self-attention logits (1 leaves them alone).
    Edits run only during the first edit_steps sampler steps.
    """

    alpha_scale: float = 0.25
    beta: float = 0.01
    edit_steps: int = 10
    sigma_scale: float = 0.5
    isolation_lambda: float = 0.2
    isolation_threshold: float = 0.9
    suppress: bool = True

    def __post_init__(self):
        if self.alpha_scale < 0:
            raise ValidationError("alpha_scale must be >= 0")
        if not (0.0 <= self.beta <= 1.0):
            raise ValidationError("beta must be in [0, 1]")
        if self.edit_steps < 0:
            raise ValidationError("edit_steps must be >= 0")
        if self.sigma_scale <= 0:
            raise ValidationError("sigma_scale must be > 0")
        if not (0.0 <= self.isolation_lambda < 1.0):
            raise ValidationError("isolation_lambda must be in [0, 1)")
        if not (0.0 < self.isolation_threshold <= 1.0):
            raise ValidationError("isolation_threshold must be in (0, 1]")

    @classmethod
    def neutral(cls) -> "GuidanceConfig":
        """Settings under which every edit is a no-op."""
        return cls(alpha_scale=0.0, beta=1.0, isolation_lambda=0.0, suppress=False)

    def neutralized(self) -> "GuidanceConfig":
        return replace(self, alpha_scale=0.0, beta=1.0, isolation_lambda=0.0, suppress=False)


def alpha_for_box(config: GuidanceConfig, n_fg_tokens: int, box: BBox) -> float:
    """Per-frame cross boost: alpha_scale / (fg token count * box area)."""
    if n_fg_tokens < 1:
        raise ValidationError("alpha undefined without foreground tokens")
    return config.alpha_scale / (n_fg_tokens * box.area)


def build_cross_masks(mask_flat: np.ndarray, tokens: TokenSet) -> tuple[np.ndarray, np.ndarray]:
    """Boost and keep masks for cross attention, shapes (pixels, tokens).

    boost[i, j] = fg(i) * fg(j). keep[i, j] = 0 only for background pixels
    attending to foreground tokens; taking the literal complement product
    instead would zero every entry of every foreground row and make softmax
    degenerate there.
    """
    fg_pix = np.asarray(mask_flat).astype(bool).reshape(-1)
    fg_tok = tokens.fg_flags
    m_ca = np.outer(fg_pix, fg_tok).astype(np.uint8)
    keep = 1 - np.outer(~fg_pix, fg_tok).astype(np.uint8)
    return m_ca, keep


def build_spatial_self_mask(mask_flat: np.ndarray) -> np.ndarray:
    """Same-region indicator over pixel pairs: fg-fg or bg-bg."""
    fg = np.asarray(mask_flat).astype(bool).reshape(-1)
    return (fg[:, None] == fg[None, :]).astype(np.uint8)


def build_temporal_self_mask(mask_stack_flat: np.ndarray, pixel: int) -> np.ndarray:
    """Same-region indicator over frame pairs for one pixel, shape (F, F).

    mask_stack_flat holds the flattened per-frame masks, shape (F, pixels).
    """
    stack = np.asarray(mask_stack_flat)
    if not (0 <= pixel < stack.shape[1]):
        raise ValidationError(f"pixel {pixel} outside [0, {stack.shape[1]})")
    fg = stack[:, pixel].astype(bool)
    return (fg[:, None] == fg[None, :]).astype(np.uint8)


def temporal_masks_all_pixels(mask_stack_flat: np.ndarray) -> np.ndarray:
    """All per-pixel temporal masks at once, shape (pixels, F, F)."""
    fg = np.asarray(mask_stack_flat).astype(bool).T  # (pixels, F)
    return (fg[:, :, None] == fg[:, None, :]).astype(np.uint8)


def gaussian_weight(x: float, y: float, box: BBox, sigma_scale: float = 0.5) -> float:
    """Gaussian falloff from the box center, 1 at the center.

    Widths follow the box: sigma is sigma_scale times the half-extent along
    each axis.
    """
    if sigma_scale <= 0:
        raise ValidationError("sigma_scale must be > 0")
    hw = 0.5 * (box.x1 - box.x0)
    hh = 0.5 * (box.y1 - box.y0)
    if hw <= 0 or hh <= 0:
        raise ValidationError("degenerate box extent")
    cx, cy = box.center
    sx = sigma_scale * hw
    sy = sigma_scale * hh
    return float(np.exp(-((x - cx) ** 2 / (2 * sx**2) + (y - cy) ** 2 / (2 * sy**2))))


def gaussian_weight_grid(box: BBox, h: int, w: int, sigma_scale: float = 0.5) -> np.ndarray:
    """gaussian_weight evaluated at every cell center of an (h, w) lattice."""
    if sigma_scale <= 0:
        raise ValidationError("sigma_scale must be > 0")
    hw = 0.5 * (box.x1 - box.x0)
    hh = 0.5 * (box.y1 - box.y0)
    if hw <= 0 or hh <= 0:
        raise ValidationError("degenerate box extent")
    cx, cy = box.center
    x = (np.arange(w) + 0.5) / w
    y = (np.arange(h) + 0.5) / h
    ex = (x - cx) ** 2 / (2 * (sigma_scale * hw) ** 2)
    ey = (y - cy) ** 2 / (2 * (sigma_scale * hh) ** 2)
    return np.exp(-(ey[:, None] + ex[None, :]))


def _as_batched(*arrays: np.ndarray) -> tuple[list[np.ndarray], bool]:
    single = arrays[0].ndim == 2
    return [a[None] if single else a for a in arrays], single


def cross_guided_batched(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    keep: np.ndarray,
    boost: np.ndarray,
) -> np.ndarray:
    """Batched guided cross attention; raises if any row is fully suppressed."""
    if (keep.sum(axis=-1) == 0).any():
        raise RuntimeError(
            "cross-attention row fully suppressed; every token is foreground "
            "for a background pixel"
        )
    return kernels.cross_guided(
        np.ascontiguousarray(q, dtype=np.float64),
        np.ascontiguousarray(k, dtype=np.float64),
        np.ascontiguousarray(v, dtype=np.float64),
        np.ascontiguousarray(keep, dtype=np.uint8),
        np.ascontiguousarray(boost, dtype=np.float64),
    )


def guided_cross_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    boost_mask: np.ndarray,
    keep_mask: np.ndarray,
    alpha: float,
    gauss: np.ndarray,
) -> np.ndarray:
    """Cross attention with suppression and a Gaussian-weighted boost.

    Logits for suppressed pairs (keep_mask == 0) go to -inf before softmax;
    afterwards alpha * gauss[i] is added to the weight of every boosted pair
    (boost_mask == 1) and the reweighted rows multiply V. gauss is per query
    pixel; boosted rows therefore sum to 1 + alpha * gauss[i] * row_hits.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if alpha < 0:
        raise ValidationError("alpha must be >= 0")
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValidationError("q, k, v must be 2-D")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ValidationError(
            f"dimension mismatch: q {q.shape}, k {k.shape}, v {v.shape}"
        )
    boost_mask = np.asarray(boost_mask)
    keep_mask = np.asarray(keep_mask)
    gauss = np.asarray(gauss, dtype=np.float64).reshape(-1)
    if boost_mask.shape != (q.shape[0], k.shape[0]) or keep_mask.shape != boost_mask.shape:
        raise ValidationError("mask shapes must be (n_queries, n_keys)")
    if gauss.size != q.shape[0]:
        raise ValidationError("gauss must have one value per query")
    boost = alpha * gauss[:, None] * (boost_mask != 0)
    return cross_guided_batched(q[None], k, v, keep_mask[None], boost[None])[0]


def self_guided_batched(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: np.ndarray, beta: float
) -> np.ndarray:
    w = np.where(np.asarray(mask) != 0, 1.0, float(beta))
    return kernels.self_guided(
        np.ascontiguousarray(q, dtype=np.float64),
        np.ascontiguousarray(k, dtype=np.float64),
        np.ascontiguousarray(v, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
    )


def guided_self_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: np.ndarray, beta: float
) -> np.ndarray:
    """Self attention with cross-region logits multiplied by beta.

    Rows still sum to 1; beta = 1 reproduces vanilla attention exactly.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (0.0 <= beta <= 1.0):
        raise ValidationError("beta must be in [0, 1]")
    if q.ndim != 2:
        raise ValidationError("q must be 2-D")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ValidationError(
            f"dimension mismatch: q {q.shape}, k {k.shape}, v {v.shape}"
        )
    mask = np.asarray(mask)
    if mask.shape != (q.shape[0], k.shape[0]):
        raise ValidationError("mask shape must be (n_queries, n_keys)")
    return self_guided_batched(q[None], k[None], v[None], mask[None], beta)[0]


def vanilla_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Plain scaled-dot-product attention (batched or single instance)."""
    arrays, single = _as_batched(
        np.ascontiguousarray(q, dtype=np.float64),
        np.ascontiguousarray(k, dtype=np.float64),
        np.ascontiguousarray(v, dtype=np.float64),
    )
    out = kernels.attention(*arrays)
    return out[0] if single else out


def should_edit(t: int, total: int, n_edit: int) -> bool:
    """True during the early sampler steps t in {total, ..., total - n_edit}."""
    if not (0 <= t <= total):
        raise ValidationError(f"step {t} outside [0, {total}]")
    if n_edit > total:
        raise ValidationError(f"edit steps {n_edit} exceed total {total}")
    return total - n_edit <= t <= total


def redistribute_isolated_attention(
    weights: np.ndarray,
    groups: np.ndarray,
    split_fraction: float,
    threshold: float = 0.9,
) -> np.ndarray:
    """Move a slice of attention mass off temporally isolated frames.

    groups labels each frame; a row whose mass inside its own group exceeds
    the threshold has that mass scaled by (1 - split_fraction) and the
    removed amount spread uniformly over the other groups' columns. Row sums
    are preserved.
    """
    w = np.array(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValidationError(f"weights must be square, got shape {w.shape}")
    labels = np.asarray(groups).reshape(-1)
    if labels.size != w.shape[0]:
        raise ValidationError("one group label per frame required")
    if not (0.0 <= split_fraction < 1.0):
        raise ValidationError("split_fraction must be in [0, 1)")
    if not np.allclose(w.sum(axis=1), 1.0, atol=1e-6):
        raise ValidationError("rows must sum to 1")
    if split_fraction == 0.0:
        return w
    if np.unique(labels).size < 2:
        warnings.warn("single-group partition: no frames to receive mass", stacklevel=2)
        return w
    for i in range(w.shape[0]):
        in_group = labels == labels[i]
        mass = w[i, in_group].sum()
        if mass > threshold:
            removed = split_fraction * mass
            w[i, in_group] *= 1.0 - split_fraction
            w[i, ~in_group] += removed / (~in_group).sum()
    return w
