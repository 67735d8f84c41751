"""Layers and losses composed from autodiff primitives.

All functions are pure: parameters come in as Tensors, outputs are new graph
nodes.  Numerical stabilization (max subtraction in softmax/logsumexp) uses
detached statistics so it never perturbs gradients.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, embedding, gather_last, tensor, where


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))
    return shifted - shifted.exp().sum(axis=axis, keepdims=True).log()


def gelu(x: Tensor) -> Tensor:
    # tanh approximation
    c = math.sqrt(2.0 / math.pi)
    inner = (x + 0.044715 * (x * x * x)) * c
    return 0.5 * (x * (1.0 + inner.tanh()))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered / (var + eps).sqrt()
    return normed * gamma + beta


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out


def mse(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    diff = pred - target
    return (diff * diff).mean()


def softmax_cross_entropy(logits: Tensor, target_ids: np.ndarray,
                          weights: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood over (optionally weighted) positions.

    `weights` selects/weights positions; the mean is over the weight total so a
    boolean mask yields the mean loss on selected positions only.
    """
    target_ids = np.asarray(target_ids)
    k = logits.shape[-1]
    if k < 2:
        raise ValueError("need at least 2 classes")
    if target_ids.size and target_ids.max() >= k:
        raise IndexError(f"target id >= number of classes ({k})")
    logp = log_softmax(logits, axis=-1)
    nll = -gather_last(logp, target_ids)
    if weights is None:
        return nll.mean()
    weights = np.asarray(weights, dtype=logits.dtype)
    total = float(weights.sum())
    if total == 0.0:
        return tensor(0.0, dtype=logits.dtype)
    return (nll * Tensor(weights)).sum() / total


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         causal: bool = False) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis.

    Inputs are (..., L, D) post-projection tensors; D must divide by `heads`.
    The causal mask is additive with a constant large enough that softmax
    underflows exactly to zero at f32.
    """
    *lead, length, dim = q.shape
    if dim % heads != 0:
        raise ValueError(f"model dim {dim} not divisible by heads {heads}")
    if k.shape != q.shape or v.shape != q.shape:
        raise ValueError("q, k, v shapes must match")
    hd = dim // heads

    def split(x):
        x = x.reshape(*lead, length, heads, hd)
        order = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return x.transpose(order)  # (..., heads, L, hd)

    qh, kh, vh = split(q), split(k), split(v)
    scores = (qh @ kh.transpose(tuple(range(qh.ndim - 2)) + (qh.ndim - 1, qh.ndim - 2)))
    scores = scores * (1.0 / math.sqrt(hd))
    if causal:
        mask = np.triu(np.ones((length, length), dtype=bool), k=1)
        scores = scores + Tensor(np.where(mask, np.float32(-1e9), np.float32(0.0)).astype(scores.dtype))
    attn = softmax(scores, axis=-1)
    out = attn @ vh  # (..., heads, L, hd)
    order = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    out = out.transpose(order)  # (..., L, heads, hd)
    return out.reshape(*lead, length, dim)


def patchify(frames: Tensor, patch: int) -> Tensor:
    """(B, T, H, W, C) -> (B, T, N, patch*patch*C), row-major patch order."""
    b, t, h, w, c = frames.shape
    if h % patch or w % patch:
        raise ValueError(f"geometry {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = frames.reshape(b, t, gh, patch, gw, patch, c)
    x = x.transpose((0, 1, 2, 4, 3, 5, 6))
    return x.reshape(b, t, gh * gw, patch * patch * c)


def unpatchify(patches: Tensor, patch: int, height: int, width: int, channels: int = 3) -> Tensor:
    b, t, n, d = patches.shape
    gh, gw = height // patch, width // patch
    if n != gh * gw or d != patch * patch * channels:
        raise ValueError("patch grid does not match target geometry")
    x = patches.reshape(b, t, gh, gw, patch, patch, channels)
    x = x.transpose((0, 1, 2, 4, 3, 5, 6))
    return x.reshape(b, t, height, width, channels)


def sinusoidal_embedding(values: np.ndarray, dim: int) -> np.ndarray:
    """Classic sin/cos embedding of scalars in [0, 1]; returns (..., dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float32) / max(half - 1, 1))
    angles = np.asarray(values, dtype=np.float32)[..., None] * freqs * 1000.0
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros(emb.shape[:-1] + (1,), dtype=np.float32)], axis=-1)
    return emb


__all__ = [
    "softmax", "log_softmax", "gelu", "layer_norm", "linear", "mse",
    "softmax_cross_entropy", "multi_head_attention", "patchify", "unpatchify",
    "sinusoidal_embedding", "embedding", "where", "tensor",
]
