"""Single-layer, single-head graph attention over fully connected node graphs.

Node features ``e`` are [B, N, D].  Attention is computed from the
element-wise product of node pairs projected by a learned map, aggregated
per target node, projected to D' features with a residual path, batch
normalized over the folded (batch x node) axis and read out as the node
mean of a scalar projection.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .layers import BatchNorm, Module, he_uniform


def _batched(e):
    e = e if isinstance(e, Tensor) else Tensor(e)
    if e.ndim == 2:
        return ad.reshape(e, (1,) + e.shape), True
    if e.ndim != 3:
        raise ContractError(f"node features must be [N, D] or [B, N, D], got {e.shape}")
    return e, False


def attention_logits(e, w_map):
    """logits[b, n, v] = sum_d w_map[d] * e[b, n, d] * e[b, v, d]."""
    return ad.matmul(e * w_map, ad.transpose(e, (0, 2, 1)))


def attention(e, w_map):
    """Attention matrix indexed ``alpha[b, v, n]`` (source v, target n).

    Each column sums to one: the softmax runs over sources for every
    target, with the per-target max subtracted before exponentiation.
    Accepts [N, D] or [B, N, D]; returns [N, N] or [B, N, N] accordingly.
    """
    e, single = _batched(e)
    if not np.all(np.isfinite(e.data)):
        raise ContractError("node features contain NaN or inf")
    w_map = w_map if isinstance(w_map, Tensor) else Tensor(w_map)
    rows = ad.softmax(attention_logits(e, w_map), axis=2)  # [b, n, v]
    alpha = ad.transpose(rows, (0, 2, 1))
    return ad.reshape(alpha, alpha.shape[1:]) if single else alpha


def aggregate(e, alpha):
    """m[b, n] = sum_v alpha[b, v, n] * e[b, v]."""
    e, single = _batched(e)
    alpha = alpha if isinstance(alpha, Tensor) else Tensor(alpha)
    if alpha.ndim == 2:
        alpha = ad.reshape(alpha, (1,) + alpha.shape)
    m = ad.matmul(ad.transpose(alpha, (0, 2, 1)), e)
    return ad.reshape(m, m.shape[1:]) if single else m


def propagate(e, m, w_att, w_res, bn):
    """o = BN(m W_att + e W_res); BN statistics pooled over batch and nodes."""
    e, single = _batched(e)
    m, _ = _batched(m)
    B, N, _ = e.shape
    h = ad.matmul(m, w_att) + ad.matmul(e, w_res)
    d_out = h.shape[-1]
    if bn.training and B * N < 2:
        raise ContractError("GAT batch norm in train mode needs at least 2 (batch x node) samples")
    o = ad.reshape(bn(ad.reshape(h, (B * N, d_out))), (B, N, d_out))
    return ad.reshape(o, (N, d_out)) if single else o


def readout(o, w_out, bias=None):
    """Mean over nodes of <o_n, W_out> (+ bias): one logit per graph."""
    o, single = _batched(o)
    w_out = w_out if isinstance(w_out, Tensor) else Tensor(w_out)
    per_node = ad.matmul(o, ad.reshape(w_out, (w_out.size, 1)))  # [B, N, 1]
    score = ad.mean_axis(ad.reshape(per_node, per_node.shape[:2]), axis=1)
    if bias is not None:
        score = score + bias
    return ad.reshape(score, ()) if single else score


class GatLayer(Module):
    """Learnable parameters of one GAT layer plus its scalar readout."""

    def __init__(self, rng, dim=512, out_dim=128, dtype=np.float32):
        self.w_map = Tensor(rng.uniform(-1, 1, size=dim).astype(dtype) / np.sqrt(dim), requires_grad=True)
        self.w_att = Tensor(he_uniform(rng, (dim, out_dim), dim, dtype), requires_grad=True)
        self.w_res = Tensor(he_uniform(rng, (dim, out_dim), dim, dtype), requires_grad=True)
        self.bn = BatchNorm(out_dim, dtype=dtype)
        self.w_out = Tensor(he_uniform(rng, (out_dim,), out_dim, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros((), dtype=dtype), requires_grad=True)

    def node_outputs(self, e):
        alpha = attention(e, self.w_map)
        m = aggregate(e, alpha)
        return propagate(e, m, self.w_att, self.w_res, self.bn)

    def forward(self, e):
        return gat_forward(e, self)


def gat_forward(e, p):
    """Graph batch [B, N, D] -> scores [B]."""
    e, single = _batched(e)
    score = readout(p.node_outputs(e), p.w_out, p.bias)
    return ad.reshape(score, ()) if single else score
