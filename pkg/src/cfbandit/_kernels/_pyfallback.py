"""Pure-numpy kernel implementations.

Operates on a flat batch layout: candidates of segment t occupy rows
offsets[t]:offsets[t+1] of the flat arrays.  When every segment has the
same length the heavy ops run fully vectorized on (B, K) views; otherwise
they fall back to a per-segment loop.
"""

from __future__ import annotations

import numpy as np


def _uniform_width(offsets: np.ndarray) -> int:
    """Segment width if all segments are equally sized, else 0."""
    widths = np.diff(offsets)
    if widths.size and np.all(widths == widths[0]):
        return int(widths[0])
    return 0


def _topk_mask_rows(z: np.ndarray, cap: int) -> np.ndarray:
    """Row-wise mask keeping the cap highest entries, ties to lower index."""
    order = np.argsort(-z, axis=-1, kind="stable")
    mask = np.zeros(z.shape, dtype=bool)
    np.put_along_axis(mask, order[..., :cap], True, axis=-1)
    return mask


def _softmax_row(z: np.ndarray, cap: int) -> np.ndarray:
    k = z.shape[0]
    if 0 < cap < k:
        mask = _topk_mask_rows(z, cap)
        zm = np.where(mask, z, -np.inf)
    else:
        mask = None
        zm = z
    p = np.exp(zm - zm.max())
    if mask is not None:
        p[~mask] = 0.0
    return p / p.sum()


def batch_gibbs(scores: np.ndarray, offsets: np.ndarray, alpha: float, cap: int) -> np.ndarray:
    """Per-segment softmax of alpha*scores with optional top-cap masking.

    cap <= 0 disables masking.  Masked-out entries get probability exactly 0.
    """
    width = _uniform_width(offsets)
    z_flat = alpha * scores
    if width:
        z = z_flat.reshape(-1, width)
        if 0 < cap < width:
            mask = _topk_mask_rows(z, cap)
            z = np.where(mask, z, -np.inf)
        else:
            mask = None
        p = np.exp(z - z.max(axis=1, keepdims=True))
        if mask is not None:
            p[~mask] = 0.0
        p /= p.sum(axis=1, keepdims=True)
        return p.reshape(-1)
    out = np.empty_like(scores)
    for t in range(len(offsets) - 1):
        lo, hi = offsets[t], offsets[t + 1]
        out[lo:hi] = _softmax_row(z_flat[lo:hi], cap)
    return out


def segment_argmax(scores: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Index (local to its segment) of the max score; ties to lower index."""
    width = _uniform_width(offsets)
    if width:
        return np.argmax(scores.reshape(-1, width), axis=1).astype(np.int64)
    out = np.empty(len(offsets) - 1, dtype=np.int64)
    for t in range(len(offsets) - 1):
        lo, hi = offsets[t], offsets[t + 1]
        out[t] = int(np.argmax(scores[lo:hi]))
    return out


def chosen_stats(
    probs: np.ndarray,
    offsets: np.ndarray,
    chosen: np.ndarray,
    features: np.ndarray,
    alpha: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per segment: probability of the chosen row and the log-probability
    gradient alpha*(features[chosen] - E[features]) under probs."""
    n_seg = len(offsets) - 1
    d = features.shape[1]
    width = _uniform_width(offsets)
    if width:
        p = probs.reshape(n_seg, width)
        f = features.reshape(n_seg, width, d)
        rows = np.arange(n_seg)
        chosen_prob = p[rows, chosen]
        expected = np.einsum("bk,bkd->bd", p, f)
        grad = alpha * (f[rows, chosen] - expected)
        return chosen_prob, grad
    chosen_prob = np.empty(n_seg)
    grad = np.empty((n_seg, d))
    for t in range(n_seg):
        lo, hi = offsets[t], offsets[t + 1]
        p = probs[lo:hi]
        f = features[lo:hi]
        chosen_prob[t] = p[chosen[t]]
        grad[t] = alpha * (f[chosen[t]] - p @ f)
    return chosen_prob, grad


def direct_stats(
    probs: np.ndarray,
    offsets: np.ndarray,
    values: np.ndarray,
    features: np.ndarray,
    alpha: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per segment: V = sum_y values*probs and its weight gradient
    alpha*(sum_y values*probs*features - V * E[features])."""
    n_seg = len(offsets) - 1
    d = features.shape[1]
    width = _uniform_width(offsets)
    if width:
        p = probs.reshape(n_seg, width)
        v = values.reshape(n_seg, width)
        f = features.reshape(n_seg, width, d)
        value = np.einsum("bk,bk->b", p, v)
        expected = np.einsum("bk,bkd->bd", p, f)
        weighted = np.einsum("bk,bkd->bd", p * v, f)
        grad = alpha * (weighted - value[:, None] * expected)
        return value, grad
    value = np.empty(n_seg)
    grad = np.empty((n_seg, d))
    for t in range(n_seg):
        lo, hi = offsets[t], offsets[t + 1]
        p = probs[lo:hi]
        v = values[lo:hi]
        f = features[lo:hi]
        value[t] = p @ v
        grad[t] = alpha * ((p * v) @ f - value[t] * (p @ f))
    return value, grad
