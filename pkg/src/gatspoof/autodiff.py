"""Tape-based reverse-mode differentiation over dense numpy arrays.

Every op that touches a tensor with ``requires_grad`` appends one record to
the thread-local tape; :func:`backward` replays the tape in reverse.  Only
the operations needed by the encoder, the graph attention head and the
losses are provided.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


class ContractError(ValueError):
    """Raised when an op is called outside its documented preconditions."""


class DimensionError(ContractError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_axis(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_axis(self, axis, keepdims)


# ---------------------------------------------------------------------------
# tape

class _TapeState(threading.local):
    def __init__(self):
        self.records = []
        self.enabled = True


_state = _TapeState()


def tape_length():
    return len(_state.records)


def clear_tape():
    _state.records = []


@contextmanager
def no_grad():
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def is_grad_enabled():
    return _state.enabled


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _operands(a, b):
    # plain numbers take the dtype of the tensor operand (no float32 -> 64 upcast)
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _make(data, inputs, backward_fn):
    out = Tensor(data)
    if _state.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _state.records.append((out, backward_fn))
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = np.broadcast_to(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss):
    """Populate ``.grad`` on every tensor reachable from the scalar ``loss``.

    Gradients accumulate into existing ``.grad`` arrays; the tape is
    consumed and cleared.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("backward() needs a scalar tensor")
    if not loss.requires_grad:
        raise ContractError("loss was not produced on the tape")
    records = _state.records
    _state.records = []
    seed = np.ones_like(loss.data)
    if loss.grad is None:
        loss.grad = seed
    else:
        loss.grad = loss.grad + seed
    for out, fn in reversed(records):
        if out.grad is not None:
            fn(out.grad)


# ---------------------------------------------------------------------------
# elementwise and shape ops

def add(a, b):
    a, b = _operands(a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _operands(a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = _operands(a, b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = _operands(a, b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: _accum(x, g * out))


def log(x):
    return _make(np.log(x.data), (x,), lambda g: _accum(x, g / x.data))


def sqrt(x):
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: _accum(x, g * 0.5 / out))


def tanh(x):
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: _accum(x, g * (1.0 - out * out)))


def sigmoid(x):
    z = x.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), lambda g: _accum(x, g * out * (1.0 - out)))


def clamp_min(x, lo):
    keep = x.data > lo
    out = np.where(keep, x.data, lo).astype(x.dtype, copy=False)
    return _make(out, (x,), lambda g: _accum(x, g * keep))


def selu(x):
    z = x.data
    pos = z > 0
    ex = np.exp(np.minimum(z, 0.0))
    out = SELU_SCALE * np.where(pos, z, SELU_ALPHA * (ex - 1.0))
    deriv = SELU_SCALE * np.where(pos, 1.0, SELU_ALPHA * ex)
    return _make(out.astype(z.dtype, copy=False), (x,), lambda g: _accum(x, g * deriv))


def reshape(x, shape):
    def bw(g):
        _accum(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), bw)


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: _accum(x, g.transpose(inv)))


def sum_axis(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))

    return _make(out, (x,), bw)


def mean_axis(x, axis=None, keepdims=False):
    out = x.data.mean(axis=axis, keepdims=keepdims)
    n = x.size // max(out.size, 1)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g / n, x.shape))

    return _make(out, (x,), bw)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, bounds, axis=axis)):
            _accum(t, part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(x, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (x,), bw)


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes.

    Both operands must be at least 2-D.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), bw)


# ---------------------------------------------------------------------------
# convolution and pooling

def _pair(v):
    if isinstance(v, int):
        return (v, v)
    return tuple(v)


def conv_output_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def _nhwc_padded(x, ph, pw, value=0.0):
    # the NCHW view of an NHWC buffer transposes back without a copy
    xl = x.transpose(0, 2, 3, 1)
    if not (ph or pw):
        return xl
    B, H, W, C = xl.shape
    xp = np.full((B, H + 2 * ph, W + 2 * pw, C), value, dtype=xl.dtype)
    xp[:, ph:ph + H, pw:pw + W, :] = xl
    return xp


def conv2d(x, k, stride=(1, 1), padding=(0, 0)):
    """Cross-correlation of ``x`` [B,C,H,W] with kernels ``k`` [F,C,kh,kw].

    Zero padding.  Internally channels-last; the result is an NCHW view of
    an NHWC buffer, which keeps elementwise ops and the next conv copy-free.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and kernel")
    B, C, H, W = x.shape
    F, Ck, kh, kw = k.shape
    if C != Ck:
        raise DimensionError(f"conv2d channel mismatch: input {C}, kernel {Ck}")
    if kh > H + 2 * ph or kw > W + 2 * pw:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {H + 2 * ph}x{W + 2 * pw}")
    Ho = conv_output_size(H, kh, sh, ph)
    Wo = conv_output_size(W, kw, sw, pw)
    xp = _nhwc_padded(x.data, ph, pw)
    # im2col with columns ordered (i, j, c)
    cols = np.empty((B, Ho, Wo, kh, kw, C), dtype=np.result_type(x.dtype, k.dtype))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw, :]
    cols = cols.reshape(B * Ho * Wo, kh * kw * C)
    kmat = k.data.transpose(0, 2, 3, 1).reshape(F, kh * kw * C)
    out = (cols @ kmat.T).reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        if k.requires_grad:
            _accum(k, (gmat.T @ cols).reshape(F, kh, kw, C).transpose(0, 3, 1, 2))
        if x.requires_grad:
            dcols = (gmat @ kmat).reshape(B, Ho, Wo, kh, kw, C)
            dxp = np.zeros(xp.shape, dtype=dcols.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw, :] += dcols[:, :, :, i, j, :]
            _accum(x, dxp[:, ph:ph + H, pw:pw + W, :].transpose(0, 3, 1, 2))

    return _make(out, (x, k), bw)


def maxpool2d(x, kernel=(3, 3), stride=(2, 2), padding=(0, 0)):
    """Window max; ties route the gradient to the first row-major index."""
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4:
        raise DimensionError("maxpool2d expects [B, C, H, W]")
    B, C, H, W = x.shape
    if kh > H + 2 * ph or kw > W + 2 * pw:
        raise DimensionError(f"pool window {kh}x{kw} larger than padded input {H + 2 * ph}x{W + 2 * pw}")
    Ho = conv_output_size(H, kh, sh, ph)
    Wo = conv_output_size(W, kw, sw, pw)
    xp = _nhwc_padded(x.data, ph, pw, value=-np.inf)

    def window(i, j):
        return (slice(None), slice(i, i + sh * (Ho - 1) + 1, sh), slice(j, j + sw * (Wo - 1) + 1, sw), slice(None))

    best = xp[window(0, 0)].copy()
    idx = np.zeros(best.shape, dtype=np.int8 if kh * kw < 128 else np.int32)
    for i in range(kh):
        for j in range(kw):
            if i == 0 and j == 0:
                continue
            cand = xp[window(i, j)]
            better = cand > best  # strict: earlier index wins ties
            np.copyto(best, cand, where=better)
            idx[better] = i * kw + j
    out = best.transpose(0, 3, 1, 2)

    def bw(g):
        gl = g.transpose(0, 2, 3, 1)
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[window(i, j)] += np.where(idx == i * kw + j, gl, 0.0)
        _accum(x, dxp[:, ph:ph + H, pw:pw + W, :].transpose(0, 3, 1, 2))

    return _make(out, (x,), bw)


def adaptive_bins(size, out):
    return [(i * size // out, -(-(i + 1) * size // out)) for i in range(out)]


def adaptive_avg_pool2d(x, out_hw):
    """Average over the adaptive (floor/ceil) bins used by common frameworks."""
    B, C, H, W = x.shape
    oh, ow = out_hw
    rows, cols = adaptive_bins(H, oh), adaptive_bins(W, ow)
    out = np.empty((B, C, oh, ow), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def bw(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                dx[:, :, r0:r1, c0:c1] += (g[:, :, i, j] / ((r1 - r0) * (c1 - c0)))[:, :, None, None]
        _accum(x, dx)

    return _make(out, (x,), bw)


# ---------------------------------------------------------------------------
# normalization and losses

def batchnorm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    ``x`` is [M, C] or [B, C, H, W]; for 4-D input the B, H, W axes are the
    sample axis.  ``running_mean``/``running_var`` are updated in place in
    training mode (unbiased variance, PyTorch convention).
    """
    if x.ndim == 4:
        axes = (0, 2, 3)
        bshape = (1, -1, 1, 1)
    elif x.ndim == 2:
        axes = (0,)
        bshape = (1, -1)
    else:
        raise DimensionError("batchnorm expects [M,C] or [B,C,H,W]")
    m = x.size // x.shape[1]
    g_ = gamma.data.reshape(bshape)
    if training:
        if m < 2:
            raise ContractError("batchnorm in train mode needs at least 2 samples per feature")
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(-1) * (m / (m - 1))
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).reshape(bshape)
        xhat = (x.data - running_mean.reshape(bshape)) * inv
    out = xhat * g_ + beta.data.reshape(bshape)

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * g_
            if training:
                s1 = dxhat.sum(axis=axes, keepdims=True)
                s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                _accum(x, inv * (dxhat - s1 / m - xhat * s2 / m))
            else:
                _accum(x, dxhat * inv)

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), bw)


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 labels."""
    z = logits.data
    y = np.asarray(labels, dtype=z.dtype).reshape(z.shape)
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    e = np.exp(-np.abs(z))
    sig = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw(g):
        _accum(logits, g * (sig - y) / n)

    return _make(np.asarray(per.mean(), dtype=z.dtype), (logits,), bw)


def mask_rows(x, start, width, fill):
    """Replace rows ``[start, start+width)`` of axis -2 with ``fill``.

    ``fill`` is broadcast against ``x[..., :1, :1]`` (one value per item
    works) and is treated as a constant: masked entries get zero gradient.
    """
    out = x.data.copy()
    if width:
        out[..., start:start + width, :] = np.asarray(fill, dtype=x.dtype)

    def bw(g):
        g = g.copy()
        if width:
            g[..., start:start + width, :] = 0.0
        _accum(x, g)

    return _make(out, (x,), bw)
