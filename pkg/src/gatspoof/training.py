"""BCE loss, Adam, and the seeded mini-batch training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError
from .encoder import shape_chain
from .features import mask_batch, sample_freq_mask
from .metrics import ScoreSet, TdcfCosts, eer, min_tdcf
from .systems import SYSTEMS, CMSystem, score_batches

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 300
    seed: int = 0
    system: str = "gat_t"
    decoupled_weight_decay: bool = False
    max_steps: int = 0  # 0 = no limit
    mask_max_width: int = 12
    mask_fill: str = "mean"
    eval_batch_size: int = 16

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        if self.lr < 0 or self.weight_decay < 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("lr, weight_decay must be >= 0; batch_size, epochs >= 1")


@dataclass
class FeatureSet:
    """Features [N, 1, F, T] with labels (1 = bona fide) and trial metadata."""

    features: np.ndarray
    labels: np.ndarray
    utt_ids: list
    attack_ids: list

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 4 or self.features.shape[1] != 1:
            raise ValueError(f"features must be [N, 1, F, T], got {self.features.shape}")
        if not (len(self.features) == len(self.labels) == len(self.utt_ids) == len(self.attack_ids)):
            raise ValueError("feature set columns have different lengths")

    def __len__(self):
        return len(self.labels)

    def class_counts(self):
        return int((self.labels == 1).sum()), int((self.labels == 0).sum())

    def score_set(self, scores):
        return ScoreSet(self.utt_ids, scores, self.labels == 1, self.attack_ids)


def bce_loss(logits, labels):
    """Mean BCE of sigmoid(logits); label 1 = bona fide, 0 = spoof."""
    y = np.asarray(labels)
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("labels must be 0 or 1")
    return ad.bce_with_logits(logits, y)


class Adam:
    """Adam with L2 weight decay added to the gradient (or decoupled, if asked)."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0, decoupled=False):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay and not self.decoupled:
                g = g + self.weight_decay * p.data
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and self.decoupled:
                update = update + self.lr * self.weight_decay * p.data
            p.data = (p.data - update).astype(p.dtype, copy=False)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_eer: float
    dev_min_tdcf: float

    def line(self):
        return f"{self.epoch},{self.train_loss!r},{self.dev_eer!r},{self.dev_min_tdcf!r}"


@dataclass
class TrainResult:
    model: CMSystem
    best_state: dict
    best_epoch: int
    history: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    steps: int = 0

    def log_text(self):
        return "".join(h.line() + "\n" for h in self.history)


def evaluate(model, data, costs=TdcfCosts(), batch_size=16):
    """(scores, eer, min t-DCF) on ``data`` in eval mode; no masking."""
    scores = score_batches(model, data.features, batch_size)
    s = data.score_set(scores)
    return scores, eer(s), min_tdcf(s, costs)


def _check_shapes(train_set, dev_set, model):
    shape = train_set.features.shape[1:]
    if dev_set is not None and dev_set.features.shape[1:] != shape:
        raise ValueError(f"train features {shape} and dev features {dev_set.features.shape[1:]} differ")
    if set(np.unique(train_set.labels)) - {0, 1}:
        raise ValueError("training labels must be 0/1")
    shape_chain(model.encoder.cfg, shape[1:])


def train(cfg, train_set, dev_set=None, model=None, costs=TdcfCosts(), dtype=np.float32,
          encoder_cfg=None, mask_hook=None, on_epoch=None):
    """Train one system; returns the model, best-dev state and per-epoch log.

    ``mask_hook(step, mask, before, after)`` sees every frequency mask as it
    is applied (``before``/``after`` are the batch arrays).  ``on_epoch(stats,
    model)`` may return True to stop early.  Without a dev set, model
    selection falls back to the lowest training loss.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if model is None:
        kwargs = {} if encoder_cfg is None else {"encoder_cfg": encoder_cfg}
        model = CMSystem(cfg.system, seed=cfg.seed, dtype=dtype, **kwargs)
    _check_shapes(train_set, dev_set, model)
    n_bona, n_spoof = train_set.class_counts()
    log.info("training %s on %d trials (%d bona fide / %d spoof)", cfg.system, len(train_set), n_bona, n_spoof)

    params = model.named_parameters()
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay, decoupled=cfg.decoupled_weight_decay)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(model, model.state_dict(), 0)
    best_key = np.inf
    n_bands = train_set.features.shape[2]
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(len(train_set))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            if cfg.max_steps and step >= cfg.max_steps:
                break
            idx = order[i:i + cfg.batch_size]
            x = ad.Tensor(train_set.features[idx].astype(dtype, copy=False))
            mask = sample_freq_mask(rng, n_bands, cfg.mask_max_width)
            xm = mask_batch(x, mask, cfg.mask_fill)
            if mask_hook is not None:
                mask_hook(step, mask, x.data, xm.data)
            loss = bce_loss(model(xm), train_set.labels[idx])
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            step += 1
            losses.append(loss.item())
        if not losses:
            break
        result.step_losses.extend(losses)
        train_loss = float(np.mean(losses))
        if dev_set is not None:
            _, dev_eer, dev_tdcf = evaluate(model, dev_set, costs, cfg.eval_batch_size)
            key = dev_eer
        else:
            dev_eer = dev_tdcf = float("nan")
            key = train_loss
        stats = EpochStats(epoch, train_loss, dev_eer, dev_tdcf)
        result.history.append(stats)
        log.info("epoch %d loss %.5f dev_eer %.4f dev_min_tdcf %.4f", epoch, train_loss, dev_eer, dev_tdcf)
        if key < best_key:
            best_key = key
            result.best_state = model.state_dict()
            result.best_epoch = epoch
        if on_epoch is not None and on_epoch(stats, model):
            break
    result.steps = step
    return result
