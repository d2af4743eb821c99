"""Context-aware path scoring model: forward pass and analytic gradients.

A path of relation embeddings is projected to the model width, combined with
a learned positional table, run through pre-norm transformer encoder layers
(GELU feed-forward, multi-head self-attention, no linear biases), enriched
with the projected question through a single-key cross-attention whose value
map is learned, pooled with learned attention weights over hops, and finally
scored by an MLP head on [pooled path || projected question].

All tensors are float64. ``backward`` differentiates the mean pairwise
ranking loss of a triplet batch exactly; it is validated against central
finite differences in the test suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5


class NumericError(ArithmeticError):
    """A non-finite value appeared during scoring or differentiation."""


@dataclass(frozen=True)
class ScorerConfig:
    """Shape hyperparameters of the path scorer."""

    embed_dim: int = 1024
    model_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    ff_dim: int | None = None
    max_path_len: int = 8

    def __post_init__(self) -> None:
        if self.ff_dim is None:
            object.__setattr__(self, "ff_dim", 4 * self.model_dim)
        if self.model_dim % self.num_heads != 0:
            raise ValueError("model_dim must be divisible by num_heads")
        if min(self.embed_dim, self.model_dim, self.num_layers, self.num_heads) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.max_path_len < 1:
            raise ValueError("max_path_len must be >= 1")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "model_dim": self.model_dim,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "ff_dim": self.ff_dim,
            "max_path_len": self.max_path_len,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScorerConfig":
        return cls(**{k: data[k] for k in (
            "embed_dim", "model_dim", "num_layers", "num_heads", "ff_dim", "max_path_len")})


def tensor_shapes(config: ScorerConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor inventory; iteration order fixes init and checkpoint layout."""
    d, f = config.model_dim, config.ff_dim
    shapes: dict[str, tuple[int, ...]] = {
        "input_proj": (config.embed_dim, d),
        "pos_table": (config.max_path_len, d),
    }
    for i in range(config.num_layers):
        shapes[f"layer{i}.ln1_gain"] = (d,)
        shapes[f"layer{i}.ln1_bias"] = (d,)
        shapes[f"layer{i}.attn_q"] = (d, d)
        shapes[f"layer{i}.attn_k"] = (d, d)
        shapes[f"layer{i}.attn_v"] = (d, d)
        shapes[f"layer{i}.attn_out"] = (d, d)
        shapes[f"layer{i}.ln2_gain"] = (d,)
        shapes[f"layer{i}.ln2_bias"] = (d,)
        shapes[f"layer{i}.ff_w1"] = (d, f)
        shapes[f"layer{i}.ff_w2"] = (f, d)
    shapes["cross_value"] = (d, d)
    shapes["pool_w1"] = (d, f)
    shapes["pool_w2"] = (f, 1)
    shapes["head_w1"] = (2 * d, f)
    shapes["head_w2"] = (f, 1)
    return shapes


@dataclass
class ScorerParams:
    """Every tensor of the path scorer, keyed by the canonical names."""

    config: ScorerConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(t) for name, t in self.tensors.items()}

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())


def init_params(config: ScorerConfig, seed: int = 0) -> ScorerParams:
    """Glorot-uniform matrices, unit layer-norm gains, zero biases.

    Each weight is drawn uniform in +-sqrt(6 / (fan_in + fan_out)); drawing
    order follows the canonical tensor inventory, so a seed fixes every bit.
    """
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(config).items():
        if name.endswith("_gain"):
            tensors[name] = np.ones(shape)
        elif name.endswith("_bias"):
            tensors[name] = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[-1]))
            tensors[name] = rng.uniform(-bound, bound, shape)
    return ScorerParams(config, tensors)


# -- activations -------------------------------------------------------------

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _masked_softmax(logits: np.ndarray, neg_mask: np.ndarray | None) -> np.ndarray:
    """Softmax over the last axis with -inf applied where ``neg_mask`` is True."""
    if neg_mask is not None:
        logits = np.where(neg_mask, -np.inf, logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = centered * inv
    return gain * xhat + bias, (xhat, inv)


def _layer_norm_backward(dy: np.ndarray, cache, gain: np.ndarray):
    xhat, inv = cache
    dxhat = dy * gain
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    dgain = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dbias = dy.sum(axis=tuple(range(dy.ndim - 1)))
    return dx, dgain, dbias


# -- forward ------------------------------------------------------------------


@dataclass
class PathEncoding:
    """All intermediates of scoring one path against one question."""

    states: np.ndarray  # (hops, model_dim) post-transformer relation states
    attended: np.ndarray  # (hops, model_dim) states after question injection
    pool_weights: np.ndarray  # (hops,) non-negative, sums to 1
    pooled: np.ndarray  # (model_dim,) attention-pooled path vector
    score: float


def _stack_batch(config: ScorerConfig, question_vecs, paths):
    """Zero-pad ragged paths into (B, L, embed_dim) plus a validity mask."""
    batch = len(paths)
    lengths = np.array([len(p) for p in paths], dtype=np.intp)
    if batch and lengths.min() < 1:
        raise ValueError("every path must contain at least one relation")
    if batch and lengths.max() > config.max_path_len:
        raise ValueError(
            f"path length {int(lengths.max())} exceeds max_path_len {config.max_path_len}"
        )
    width = int(lengths.max()) if batch else 0
    x = np.zeros((batch, width, config.embed_dim))
    for i, path in enumerate(paths):
        for j, vec in enumerate(path):
            v = np.asarray(vec, dtype=np.float64)
            if v.shape != (config.embed_dim,):
                raise ValueError(
                    f"relation embedding has dimension {v.shape}, expected ({config.embed_dim},)"
                )
            x[i, j] = v
    q = np.asarray(question_vecs, dtype=np.float64)
    if q.ndim == 1:
        q = np.broadcast_to(q, (batch, config.embed_dim)).copy() if batch else q.reshape(0, -1)
    if q.shape != (batch, config.embed_dim):
        raise ValueError(f"question embeddings have shape {q.shape}, expected ({batch}, {config.embed_dim})")
    if not (np.isfinite(x).all() and np.isfinite(q).all()):
        raise ValueError("non-finite values in input embeddings")
    mask = np.arange(width)[None, :] < lengths[:, None]
    return x, q, mask, lengths


def _forward(params: ScorerParams, x_in, q_in, mask):
    """Batched forward pass; returns scores plus a cache for backward.

    ``x_in``: (B, L, embed_dim) zero-padded relation embeddings,
    ``q_in``: (B, embed_dim) per-row question embeddings,
    ``mask``: (B, L) validity of each hop position.
    """
    cfg = params.config
    t = params.tensors
    batch, width, _ = x_in.shape
    heads = cfg.num_heads
    dk = cfg.model_dim // heads
    pad = ~mask  # True at padding positions

    x = x_in @ t["input_proj"] + t["pos_table"][:width][None, :, :]
    q_proj = q_in @ t["input_proj"]

    layer_caches = []
    for i in range(cfg.num_layers):
        p = f"layer{i}."
        y, ln1_cache = _layer_norm(x, t[p + "ln1_gain"], t[p + "ln1_bias"])
        qh = (y @ t[p + "attn_q"]).reshape(batch, width, heads, dk).transpose(0, 2, 1, 3)
        kh = (y @ t[p + "attn_k"]).reshape(batch, width, heads, dk).transpose(0, 2, 1, 3)
        vh = (y @ t[p + "attn_v"]).reshape(batch, width, heads, dk).transpose(0, 2, 1, 3)
        logits = qh @ kh.transpose(0, 1, 3, 2) / math.sqrt(dk)
        attn = _masked_softmax(logits, pad[:, None, None, :])
        ctx = (attn @ vh).transpose(0, 2, 1, 3).reshape(batch, width, cfg.model_dim)
        attn_out = ctx @ t[p + "attn_out"]
        x1 = x + attn_out
        y2, ln2_cache = _layer_norm(x1, t[p + "ln2_gain"], t[p + "ln2_bias"])
        ff_pre = y2 @ t[p + "ff_w1"]
        ff_act = gelu(ff_pre)
        x = x1 + ff_act @ t[p + "ff_w2"]
        layer_caches.append((y, ln1_cache, qh, kh, vh, attn, ctx, x1, y2, ln2_cache, ff_pre, ff_act))

    states = x  # (B, L, d)

    # Question injection: one key per query position, so the softmax weight is
    # exactly 1 and the addition is a learned transform of the question.
    cross_logits = (states @ q_proj[:, :, None]) / math.sqrt(cfg.model_dim)
    cross_attn = _masked_softmax(cross_logits, None)  # (B, L, 1), identically 1
    cross_val = q_proj @ t["cross_value"]  # (B, d)
    attended = states + cross_attn * cross_val[:, None, :]

    pool_pre = attended @ t["pool_w1"]
    pool_act = gelu(pool_pre)
    pool_logits = (pool_act @ t["pool_w2"])[..., 0]  # (B, L)
    alpha = _masked_softmax(pool_logits, pad)
    pooled = np.einsum("bl,bld->bd", alpha, attended)

    joint = np.concatenate([pooled, q_proj], axis=-1)
    head_pre = joint @ t["head_w1"]
    head_act = gelu(head_pre)
    scores = (head_act @ t["head_w2"])[..., 0]  # (B,)

    cache = {
        "x_in": x_in,
        "q_in": q_in,
        "mask": mask,
        "q_proj": q_proj,
        "layers": layer_caches,
        "states": states,
        "cross_val": cross_val,
        "attended": attended,
        "pool_pre": pool_pre,
        "pool_act": pool_act,
        "alpha": alpha,
        "pooled": pooled,
        "joint": joint,
        "head_pre": head_pre,
        "head_act": head_act,
    }
    return scores, cache


def _backward(params: ScorerParams, cache, d_scores) -> dict[str, np.ndarray]:
    """Exact reverse pass of ``_forward`` for the given score gradients."""
    cfg = params.config
    t = params.tensors
    grads = params.zeros_like()
    batch, width, _ = cache["x_in"].shape
    heads = cfg.num_heads
    dk = cfg.model_dim // heads

    # Head MLP.
    d_head_act = np.outer(d_scores, t["head_w2"][:, 0])
    grads["head_w2"] += (cache["head_act"].T @ d_scores)[:, None]
    d_head_pre = d_head_act * gelu_grad(cache["head_pre"])
    grads["head_w1"] += cache["joint"].T @ d_head_pre
    d_joint = d_head_pre @ t["head_w1"].T
    d_pooled = d_joint[:, : cfg.model_dim]
    d_q_proj = d_joint[:, cfg.model_dim :].copy()

    # Attention pooling.
    alpha, attended = cache["alpha"], cache["attended"]
    d_alpha = np.einsum("bd,bld->bl", d_pooled, attended)
    d_attended = alpha[:, :, None] * d_pooled[:, None, :]
    d_pool_logits = alpha * (d_alpha - (alpha * d_alpha).sum(axis=-1, keepdims=True))
    d_pool_act = d_pool_logits[..., None] * t["pool_w2"][:, 0][None, None, :]
    grads["pool_w2"] += (
        cache["pool_act"].reshape(-1, cfg.ff_dim).T @ d_pool_logits.reshape(-1, 1)
    )
    d_pool_pre = d_pool_act * gelu_grad(cache["pool_pre"])
    grads["pool_w1"] += attended.reshape(-1, cfg.model_dim).T @ d_pool_pre.reshape(-1, cfg.ff_dim)
    d_attended += d_pool_pre @ t["pool_w1"].T

    # Question injection (attention weight is constant 1, so no gradient
    # flows through the cross logits).
    d_states = d_attended
    d_cross_val = d_attended.sum(axis=1)
    grads["cross_value"] += cache["q_proj"].T @ d_cross_val
    d_q_proj += d_cross_val @ t["cross_value"].T

    # Transformer layers, reversed.
    dx = d_states
    for i in reversed(range(cfg.num_layers)):
        p = f"layer{i}."
        y, ln1_cache, qh, kh, vh, attn, ctx, x1, y2, ln2_cache, ff_pre, ff_act = cache["layers"][i]
        d_x1 = dx.copy()
        grads[p + "ff_w2"] += ff_act.reshape(-1, cfg.ff_dim).T @ dx.reshape(-1, cfg.model_dim)
        d_ff_act = dx @ t[p + "ff_w2"].T
        d_ff_pre = d_ff_act * gelu_grad(ff_pre)
        grads[p + "ff_w1"] += y2.reshape(-1, cfg.model_dim).T @ d_ff_pre.reshape(-1, cfg.ff_dim)
        d_y2 = d_ff_pre @ t[p + "ff_w1"].T
        d_from_ln2, dg2, db2 = _layer_norm_backward(d_y2, ln2_cache, t[p + "ln2_gain"])
        grads[p + "ln2_gain"] += dg2
        grads[p + "ln2_bias"] += db2
        d_x1 += d_from_ln2

        d_attn_out = d_x1
        grads[p + "attn_out"] += ctx.reshape(-1, cfg.model_dim).T @ d_attn_out.reshape(
            -1, cfg.model_dim
        )
        d_ctx = (d_attn_out @ t[p + "attn_out"].T).reshape(batch, width, heads, dk).transpose(
            0, 2, 1, 3
        )
        d_attn = d_ctx @ vh.transpose(0, 1, 3, 2)
        d_vh = attn.transpose(0, 1, 3, 2) @ d_ctx
        d_logits = attn * (d_attn - (attn * d_attn).sum(axis=-1, keepdims=True))
        d_qh = d_logits @ kh / math.sqrt(dk)
        d_kh = d_logits.transpose(0, 1, 3, 2) @ qh / math.sqrt(dk)

        def _merge(h: np.ndarray) -> np.ndarray:
            return h.transpose(0, 2, 1, 3).reshape(batch, width, cfg.model_dim)

        dq_flat, dk_flat, dv_flat = _merge(d_qh), _merge(d_kh), _merge(d_vh)
        y_flat = y.reshape(-1, cfg.model_dim)
        grads[p + "attn_q"] += y_flat.T @ dq_flat.reshape(-1, cfg.model_dim)
        grads[p + "attn_k"] += y_flat.T @ dk_flat.reshape(-1, cfg.model_dim)
        grads[p + "attn_v"] += y_flat.T @ dv_flat.reshape(-1, cfg.model_dim)
        d_y = dq_flat @ t[p + "attn_q"].T + dk_flat @ t[p + "attn_k"].T + dv_flat @ t[p + "attn_v"].T
        d_from_ln1, dg1, db1 = _layer_norm_backward(d_y, ln1_cache, t[p + "ln1_gain"])
        grads[p + "ln1_gain"] += dg1
        grads[p + "ln1_bias"] += db1
        dx = d_x1 + d_from_ln1

    # Input projection and positional table.
    grads["pos_table"][:width] += dx.sum(axis=0)
    grads["input_proj"] += (
        cache["x_in"].reshape(-1, cfg.embed_dim).T @ dx.reshape(-1, cfg.model_dim)
    )
    grads["input_proj"] += cache["q_in"].T @ d_q_proj
    return grads


# -- public scoring api --------------------------------------------------------


def score(params: ScorerParams, question_vec: np.ndarray, path: Sequence[np.ndarray]) -> PathEncoding:
    """Score one relation path against one question, returning all intermediates."""
    if len(path) == 0:
        raise ValueError("path must contain at least one relation")
    x, q, mask, _ = _stack_batch(params.config, question_vec, [path])
    scores, cache = _forward(params, x, q, mask)
    value = float(scores[0])
    if not math.isfinite(value):
        raise NumericError("path score is non-finite")
    return PathEncoding(
        states=cache["states"][0],
        attended=cache["attended"][0],
        pool_weights=cache["alpha"][0],
        pooled=cache["pooled"][0],
        score=value,
    )


def score_batch(
    params: ScorerParams, question_vec: np.ndarray, paths: Sequence[Sequence[np.ndarray]]
) -> np.ndarray:
    """Scores of many paths against one question; padding cannot leak between rows."""
    if not paths:
        return np.zeros(0)
    x, q, mask, _ = _stack_batch(params.config, question_vec, paths)
    scores, _ = _forward(params, x, q, mask)
    if not np.isfinite(scores).all():
        raise NumericError("batch scores contain non-finite values")
    return scores


def bpr_loss(s_pos, s_neg) -> float:
    """Mean pairwise ranking loss -log sigmoid(s_pos - s_neg)."""
    margin = np.asarray(s_pos, dtype=np.float64) - np.asarray(s_neg, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, -margin)))


def backward(params: ScorerParams, triplets: Sequence) -> tuple[float, dict[str, np.ndarray]]:
    """Mean ranking loss over a triplet batch and its exact parameter gradients.

    Each triplet carries a question embedding plus a positive and a negative
    relation-embedding sequence. Parameters untouched by the batch (for
    example positional rows beyond every path length) get zero gradient.
    """
    if not triplets:
        raise ValueError("triplet batch must be non-empty")
    count = len(triplets)
    paths = [tr.pos_seq for tr in triplets] + [tr.neg_seq for tr in triplets]
    questions = np.stack([tr.question_vec for tr in triplets] * 2)
    x, q, mask, _ = _stack_batch(params.config, questions, paths)
    scores, cache = _forward(params, x, q, mask)
    margin = scores[:count] - scores[count:]
    loss = float(np.mean(np.logaddexp(0.0, -margin)))
    if not math.isfinite(loss):
        raise NumericError("ranking loss is non-finite")
    # d loss / d margin = -sigmoid(-margin) / count
    slope = -_sigmoid(-margin) / count
    d_scores = np.concatenate([slope, -slope])
    grads = _backward(params, cache, d_scores)
    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise NumericError(f"non-finite gradient in tensor {name!r}")
    return loss, grads


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
