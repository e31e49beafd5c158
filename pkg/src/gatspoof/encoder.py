"""ResNet-18 front-end, graph-node extraction and the pooling baseline heads."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor, conv_output_size
from .layers import BatchNorm, Conv2d, Linear, Module


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "maxpool" | "res"
    kernel: tuple[int, int] = (3, 3)
    filters: int = 0
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (1, 1)

    def describe(self):
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        filters = str(self.filters) if self.kind != "maxpool" else "-"
        return f"{self.kind}:{kh}x{kw}:{filters}:{sh}x{sw}:{ph}x{pw}"


# Stem padding (3, 3) reproduces the 64x64x103 row for a 60x202 input.
DEFAULT_LAYERS = (
    LayerSpec("conv", (3, 3), 64, (1, 2), (3, 3)),
    LayerSpec("maxpool", (3, 3), 0, (2, 2), (1, 1)),
    LayerSpec("res", (3, 3), 64, (1, 1), (1, 1)),
    LayerSpec("res", (3, 3), 128, (2, 2), (1, 1)),
    LayerSpec("res", (3, 3), 256, (2, 2), (1, 1)),
    LayerSpec("res", (3, 3), 512, (2, 2), (1, 1)),
)


def _dims(token):
    a, b = token.lower().split("x")
    return int(a), int(b)


def parse_layers(text):
    """Parse ``kind:KxK:filters:SxS:PxP`` entries separated by ``;``."""
    layers = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 5 or parts[0] not in ("conv", "maxpool", "res"):
            raise ValueError(f"bad layer entry {chunk!r}; expected kind:KxK:filters:SxS:PxP")
        filters = 0 if parts[2] == "-" else int(parts[2])
        layers.append(LayerSpec(parts[0], _dims(parts[1]), filters, _dims(parts[3]), _dims(parts[4])))
    return tuple(layers)


def format_layers(layers):
    return "; ".join(layer.describe() for layer in layers)


@dataclass(frozen=True)
class EncoderConfig:
    layers: tuple[LayerSpec, ...] = DEFAULT_LAYERS
    final_grid: tuple[int, int] = (3, 5)
    blocks_per_stage: int = 2
    in_channels: int = 1

    @property
    def node_dim(self):
        return [l for l in self.layers if l.kind != "maxpool"][-1].filters


def shape_chain(cfg, in_hw):
    """Output (channels, H, W) after every layer for an input of size ``in_hw``.

    Raises ContractError naming the first layer whose output would be empty
    or smaller than the final averaging grid.
    """
    h, w = in_hw
    c = cfg.in_channels
    rows = []
    for i, layer in enumerate(cfg.layers):
        kh, kw = layer.kernel
        sh, sw = layer.stride
        ph, pw = layer.padding
        name = f"{layer.kind}[{i}]"
        if layer.kind == "res":
            # first conv carries the stride; the remaining convs keep the size
            nh, nw = conv_output_size(h, kh, sh, ph), conv_output_size(w, kw, sw, pw)
            c = layer.filters
        else:
            if kh > h + 2 * ph or kw > w + 2 * pw:
                raise ContractError(f"input too short: {name} window {kh}x{kw} exceeds {h}x{w} (+padding)")
            nh, nw = conv_output_size(h, kh, sh, ph), conv_output_size(w, kw, sw, pw)
            if layer.kind == "conv":
                c = layer.filters
        if nh < 1 or nw < 1:
            raise ContractError(f"input too short: {name} would produce {nh}x{nw}")
        h, w = nh, nw
        rows.append((name, (c, h, w)))
    gh, gw = cfg.final_grid
    if h < gh or w < gw:
        raise ContractError(f"input too short: {rows[-1][0]} output {h}x{w} is smaller than the {gh}x{gw} grid")
    rows.append(("avgpool", (c, gh, gw)))
    return rows


def min_frames(cfg, n_bands=60, limit=4096):
    for t in range(1, limit):
        try:
            shape_chain(cfg, (n_bands, t))
            return t
        except ContractError:
            continue
    raise ValueError("no admissible input length below limit")


class ConvBlock(Module):
    """conv -> BN -> selu"""

    def __init__(self, rng, in_ch, spec, dtype):
        self.conv = Conv2d(rng, in_ch, spec.filters, spec.kernel, spec.stride, spec.padding, dtype)
        self.bn = BatchNorm(spec.filters, dtype=dtype)

    def forward(self, x):
        return ad.selu(self.bn(self.conv(x)))


class ResidualBlock(Module):
    """Two 3x3 conv+BN layers; selu after the first and after the sum."""

    def __init__(self, rng, in_ch, out_ch, kernel, stride, padding, dtype):
        self.conv1 = Conv2d(rng, in_ch, out_ch, kernel, stride, padding, dtype)
        self.bn1 = BatchNorm(out_ch, dtype=dtype)
        self.conv2 = Conv2d(rng, out_ch, out_ch, kernel, (1, 1), padding, dtype)
        self.bn2 = BatchNorm(out_ch, dtype=dtype)
        if in_ch != out_ch or tuple(stride) != (1, 1):
            self.down = Conv2d(rng, in_ch, out_ch, (1, 1), stride, (0, 0), dtype)
            self.down_bn = BatchNorm(out_ch, dtype=dtype)
        else:
            self.down = None
            self.down_bn = None

    def forward(self, x):
        y = ad.selu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        skip = self.down_bn(self.down(x)) if self.down is not None else x
        if skip.shape != y.shape:
            raise ContractError(f"residual shapes differ: {y.shape} vs {skip.shape}")
        return ad.selu(y + skip)


class MaxPool(Module):
    def __init__(self, spec):
        self.kernel, self.stride, self.padding = spec.kernel, spec.stride, spec.padding

    def forward(self, x):
        return ad.maxpool2d(x, self.kernel, self.stride, self.padding)


class ResNetEncoder(Module):
    """Feature map batch [B, 1, F, T] -> [B, D, 3, 5]."""

    def __init__(self, cfg=EncoderConfig(), rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.layers = []
        self.layer_names = []
        ch = cfg.in_channels
        for i, spec in enumerate(cfg.layers):
            if spec.kind == "conv":
                self.layers.append(ConvBlock(rng, ch, spec, dtype))
                ch = spec.filters
            elif spec.kind == "maxpool":
                self.layers.append(MaxPool(spec))
            else:
                stage = [ResidualBlock(rng, ch, spec.filters, spec.kernel, spec.stride, spec.padding, dtype)]
                for _ in range(cfg.blocks_per_stage - 1):
                    stage.append(ResidualBlock(rng, spec.filters, spec.filters, spec.kernel, (1, 1), spec.padding, dtype))
                self.layers.append(Stage(stage))
                ch = spec.filters
            self.layer_names.append(f"{spec.kind}[{i}]")

    def forward(self, x, trace=None):
        if x.ndim != 4:
            raise ContractError(f"encode expects [B, C, F, T], got {x.shape}")
        shape_chain(self.cfg, x.shape[2:])
        for name, layer in zip(self.layer_names, self.layers):
            x = layer(x)
            if trace is not None:
                trace.append((name, x.shape[1:]))
        x = ad.adaptive_avg_pool2d(x, self.cfg.final_grid)
        if trace is not None:
            trace.append(("avgpool", x.shape[1:]))
        return x


class Stage(Module):
    def __init__(self, blocks):
        self.blocks = blocks

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x


def encode(model, features, trace=None):
    return model(features if isinstance(features, Tensor) else Tensor(features), trace)


# ---------------------------------------------------------------------------
# graph node extraction

def to_temporal_nodes(x):
    """[B, D, F, T] -> [B, T, D]: average over frequency, one node per time column."""
    return ad.transpose(ad.mean_axis(x, axis=2), (0, 2, 1))


def to_spectral_nodes(x):
    """[B, D, F, T] -> [B, F, D]: average over time, one node per sub-band."""
    return ad.transpose(ad.mean_axis(x, axis=3), (0, 2, 1))


# ---------------------------------------------------------------------------
# pooling baselines over frames [B, D, T]

STD_EPS = 1e-8


def pool_sp(frames, eps=STD_EPS):
    """Statistics pooling: concat(mean, std) over time."""
    mu = ad.mean_axis(frames, axis=2, keepdims=True)
    diff = frames - mu
    var = ad.mean_axis(diff * diff, axis=2)
    return ad.concat([ad.reshape(mu, mu.shape[:2]), ad.sqrt(var + eps)], axis=1)


class AttentivePooling(Module):
    """Frame weights softmax_t(v . tanh(W h_t + b)) shared by SAP and ASP."""

    def __init__(self, rng, dim, att_dim=128, dtype=np.float32):
        self.proj = Linear(rng, dim, att_dim, bias=True, dtype=dtype)
        self.v = Tensor(rng.uniform(-1, 1, size=(att_dim, 1)).astype(dtype) / np.sqrt(att_dim), requires_grad=True)

    def weights(self, frames):
        h = ad.transpose(frames, (0, 2, 1))  # [B, T, D]
        s = ad.matmul(ad.tanh(self.proj(h)), self.v)  # [B, T, 1]
        return ad.softmax(ad.reshape(s, s.shape[:2]), axis=1)  # [B, T]

    def forward(self, frames):
        return self.weights(frames)


def pool_sap(frames, attn):
    w = attn.weights(frames)
    return ad.sum_axis(frames * ad.reshape(w, (w.shape[0], 1, w.shape[1])), axis=2)


def pool_asp(frames, attn, eps=STD_EPS):
    w = attn.weights(frames)
    w3 = ad.reshape(w, (w.shape[0], 1, w.shape[1]))
    mu = ad.sum_axis(frames * w3, axis=2)
    second = ad.sum_axis(frames * frames * w3, axis=2)
    var = ad.clamp_min(second - mu * mu, 0.0)
    return ad.concat([mu, ad.sqrt(var + eps)], axis=1)


class ClassifyHead(Module):
    """Affine map to a single logit per item."""

    def __init__(self, rng, in_features, dtype=np.float32):
        self.fc = Linear(rng, in_features, 1, bias=True, dtype=dtype)

    def forward(self, pooled):
        out = self.fc(pooled)
        return ad.reshape(out, (out.shape[0],))
