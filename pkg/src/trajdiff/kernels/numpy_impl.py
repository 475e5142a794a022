"""Pure-numpy reference implementations of the hot kernels.

Shapes: batched attention is (B, n, d) against (B, m, d); convolutions take
(C, F, H, W) video tensors. All math in float64. Softmax is max-stabilized,
so -inf logits turn into exact zero weights.
"""

from __future__ import annotations

import numpy as np


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=-1, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    scale = 1.0 / np.sqrt(q.shape[-1])
    logits = np.matmul(q, np.swapaxes(k, -1, -2)) * scale
    return np.matmul(_softmax(logits), v)


def cross_guided(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, keep: np.ndarray, boost: np.ndarray
) -> np.ndarray:
    """Cross attention with -inf suppression where keep==0 and a post-softmax boost."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    logits = np.matmul(q, k.T) * scale
    logits = np.where(keep != 0, logits, -np.inf)
    weights = _softmax(logits) + boost
    return np.matmul(weights, v)


def self_guided(q: np.ndarray, k: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Self attention with the logit matrix multiplied elementwise by w."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    logits = np.matmul(q, np.swapaxes(k, -1, -2)) * scale * w
    return np.matmul(_softmax(logits), v)


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 spatial convolution with zero padding, applied per frame."""
    ci, f, h, wd = x.shape
    xp = np.zeros((ci, f, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : wd + 1] = x
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    out = np.tensordot(w, windows, axes=([1, 2, 3], [0, 4, 5]))
    return out + b[:, None, None, None]


def tconv3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3-tap temporal convolution with zero padding over frames."""
    ci, f, h, wd = x.shape
    xp = np.zeros((ci, f + 2, h, wd), dtype=x.dtype)
    xp[:, 1 : f + 1] = x
    windows = np.lib.stride_tricks.sliding_window_view(xp, 3, axis=1)
    out = np.tensordot(w, windows, axes=([1, 2], [0, 4]))
    return out + b[:, None, None, None]
