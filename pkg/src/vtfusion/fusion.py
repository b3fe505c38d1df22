"""Fusion heads combining the vision embedding with the two finger embeddings.

Three strategies share one call signature (z_v, h_l, h_r) -> fused vector:

* naive  - concatenation [vision, left, right], width 3D
* gated  - sigmoid gates from the joint embedding weight a per-modality sum, width D
* cmt    - tactile self-attention, then cross-attention with the vision token
           as query over the attended tactile tokens; output is the
           cross-attended vision code concatenated with the pooled tactile
           code, width 2D
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module

STRATEGIES = ("naive", "gated", "cmt")


class MultiHeadAttention(Module):
    """Scaled dot-product attention with input projections and output projection."""

    def __init__(self, dim: int, rng: np.random.Generator, heads: int = 1, out_proj: bool = True):
        if dim % heads != 0:
            raise ValueError(f"attention dim {dim} not divisible by head count {heads}")
        self.w_q = Linear(dim, dim, rng, bias=False)
        self.w_k = Linear(dim, dim, rng, bias=False)
        self.w_v = Linear(dim, dim, rng, bias=False)
        self.w_o = Linear(dim, dim, rng, bias=False) if out_proj else None
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads

    def forward(self, query, key, value):
        return attention(query, key, value, self)


def attention(query, key, value, params: MultiHeadAttention) -> T.Tensor:
    """softmax(QK^T / sqrt(d_head)) V per head, heads merged then projected.

    query is (B, Tq, D); key and value are (B, Tk, D); output is (B, Tq, D).
    """
    if query.shape[-1] != params.dim or key.shape[-1] != params.dim:
        raise ValueError(
            f"attention dim mismatch: query {query.shape}, key {key.shape}, params dim {params.dim}"
        )
    b, tq, _ = query.shape
    tk = key.shape[1]
    h, dh = params.heads, params.head_dim

    def split(x, t):
        return T.swapaxes(T.reshape(x, (b, t, h, dh)), 1, 2)  # (B, H, T, dh)

    q = split(params.w_q(query), tq)
    k = split(params.w_k(key), tk)
    v = split(params.w_v(value), tk)
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
    weights = T.softmax(scores, axis=-1)
    mixed = T.matmul(weights, v)  # (B, H, Tq, dh)
    merged = T.reshape(T.swapaxes(mixed, 1, 2), (b, tq, params.dim))
    return params.w_o(merged) if params.w_o is not None else merged


def fuse_naive(z_v, h_l, h_r) -> T.Tensor:
    """Concatenate [vision, left, right]; slices recover the inputs exactly."""
    return T.concat([z_v, h_l, h_r], axis=1)


class NaiveFusion(Module):
    def __init__(self, dim: int):
        self.dim = dim
        self.out_dim = 3 * dim

    def forward(self, z_v, h_l, h_r):
        return fuse_naive(z_v, h_l, h_r)


class GatedFusion(Module):
    """Per-modality sigmoid gates over the concatenated embedding."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.gate = Linear(3 * dim, 3 * dim, rng)
        self.dim = dim
        self.out_dim = dim

    def forward(self, z_v, h_l, h_r):
        joint = T.concat([z_v, h_l, h_r], axis=1)
        gates = T.sigmoid(self.gate(joint))
        d = self.dim
        return (
            gates[:, :d] * z_v
            + gates[:, d : 2 * d] * h_l
            + gates[:, 2 * d :] * h_r
        )


class CrossModalTransformer(Module):
    """Tactile self-attention followed by vision-query cross-attention.

    Token-type embeddings start at zero so a freshly built head treats the two
    fingers symmetrically; residual + layer-norm wrapping is a toggle.
    """

    def __init__(self, dim: int, rng: np.random.Generator, heads: int = 1,
                 self_layers: int = 1, cross_layers: int = 1, norm: bool = True):
        self.token_type = T.Tensor(np.zeros((2, dim), np.float32), requires_grad=True)
        self.self_attn = [MultiHeadAttention(dim, rng, heads) for _ in range(self_layers)]
        self.self_norms = [LayerNorm(dim) for _ in range(self_layers)] if norm else []
        self.cross_attn = [MultiHeadAttention(dim, rng, heads) for _ in range(cross_layers)]
        self.cross_norms = [LayerNorm(dim) for _ in range(cross_layers)] if norm else []
        self.dim = dim
        self.norm = norm
        self.out_dim = 2 * dim

    def forward(self, z_v, h_l, h_r):
        tokens = T.stack([h_l, h_r], axis=1) + self.token_type  # (B, 2, D)
        for i, attn in enumerate(self.self_attn):
            att = attn(tokens, tokens, tokens)
            tokens = self.self_norms[i](tokens + att) if self.norm else att
        pooled = T.mean(tokens, axis=1)  # order-invariant tactile code

        vis = T.reshape(z_v, (z_v.shape[0], 1, self.dim))
        for i, attn in enumerate(self.cross_attn):
            att = attn(vis, tokens, tokens)
            vis = self.cross_norms[i](vis + att) if self.norm else att
        crossed = T.reshape(vis, (z_v.shape[0], self.dim))
        return T.concat([crossed, pooled], axis=1)


def make_fusion(strategy: str, dim: int, rng: np.random.Generator, heads: int = 1,
                self_layers: int = 1, cross_layers: int = 1, norm: bool = True) -> Module:
    if strategy == "naive":
        return NaiveFusion(dim)
    if strategy == "gated":
        return GatedFusion(dim, rng)
    if strategy == "cmt":
        return CrossModalTransformer(dim, rng, heads=heads, self_layers=self_layers,
                                     cross_layers=cross_layers, norm=norm)
    raise ValueError(f"unknown fusion strategy {strategy!r}, expected one of {STRATEGIES}")
