"""Countermeasure systems: the ResNet-18 encoder with a GAT or pooling head."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .encoder import (
    AttentivePooling,
    ClassifyHead,
    EncoderConfig,
    ResNetEncoder,
    pool_asp,
    pool_sap,
    pool_sp,
    to_spectral_nodes,
    to_temporal_nodes,
)
from .gat import GatLayer
from .layers import Module

SYSTEMS = ("gat_t", "gat_s", "resnet_sp", "resnet_sap", "resnet_asp")


class CMSystem(Module):
    """Maps a feature batch [B, 1, F, T] to one bona fide logit per item."""

    def __init__(self, system="gat_t", encoder_cfg=EncoderConfig(), gat_dim=128, att_dim=128,
                 seed=0, dtype=np.float32):
        if system not in SYSTEMS:
            raise ValueError(f"unknown system {system!r}; choose from {SYSTEMS}")
        rng = np.random.default_rng(seed)
        self.system = system
        self.encoder = ResNetEncoder(encoder_cfg, rng, dtype)
        d = encoder_cfg.node_dim
        if system in ("gat_t", "gat_s"):
            self.gat = GatLayer(rng, d, gat_dim, dtype)
        elif system == "resnet_sp":
            self.head = ClassifyHead(rng, 2 * d, dtype)
        else:
            self.attn = AttentivePooling(rng, d, att_dim, dtype)
            self.head = ClassifyHead(rng, (2 if system == "resnet_asp" else 1) * d, dtype)

    def forward(self, x):
        fmap = self.encoder(x)
        if self.system == "gat_t":
            return self.gat(to_temporal_nodes(fmap))
        if self.system == "gat_s":
            return self.gat(to_spectral_nodes(fmap))
        # pooling baselines aggregate the frequency-averaged time frames
        frames = ad.mean_axis(fmap, axis=2)  # [B, D, T]
        if self.system == "resnet_sp":
            return self.head(pool_sp(frames))
        if self.system == "resnet_sap":
            return self.head(pool_sap(frames, self.attn))
        return self.head(pool_asp(frames, self.attn))


def score_batches(model, features, batch_size=16):
    """Eval-mode scores for a feature array [N, 1, F, T], in input order."""
    model.eval()
    out = []
    with ad.no_grad():
        for i in range(0, len(features), batch_size):
            x = ad.Tensor(np.asarray(features[i:i + batch_size], dtype=model_dtype(model)))
            out.append(np.atleast_1d(model(x).data).astype(np.float64))
    return np.concatenate(out) if out else np.zeros(0)


def model_dtype(model):
    return model.parameters()[0].dtype
