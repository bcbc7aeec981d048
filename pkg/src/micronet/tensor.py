"""Dense tensor kernels with reverse-mode automatic differentiation.

Feature maps use NCHW layout. Every operator is a pure function from
input tensors to a fresh output tensor; gradients are accumulated by
walking the recorded graph backwards from a scalar loss.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """An n-d array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        """Seed d(self)/d(self) = 1 and push gradients to all ancestors."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def _result(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# convolution

@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a grouped 2-d convolution.

    stride and padding may be scalars or (vertical, horizontal) pairs;
    padding is symmetric zero padding. groups must divide both channel
    counts and each group convolves a contiguous channel slice.
    """

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ValueError("channel counts must be positive")
        if any(s <= 0 for s in self.stride) or any(k <= 0 for k in self.kernel):
            raise ValueError("kernel and stride must be positive")
        if any(p < 0 for p in self.padding):
            raise ValueError("padding must be non-negative")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"groups={self.groups} must divide in={self.in_channels} "
                f"and out={self.out_channels}"
            )

    @property
    def weight_shape(self):
        kh, kw = self.kernel
        return (self.out_channels, self.in_channels // self.groups, kh, kw)

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        oh = (h + 2 * ph - kh) // sh + 1
        ow = (w + 2 * pw - kw) // sw + 1
        if oh <= 0 or ow <= 0:
            raise ValueError(f"kernel {self.kernel} does not fit input {h}x{w}")
        return oh, ow

    def fan_in(self) -> int:
        kh, kw = self.kernel
        return (self.in_channels // self.groups) * kh * kw

    def madds(self, h: int, w: int) -> int:
        oh, ow = self.out_size(h, w)
        return oh * ow * self.out_channels * self.fan_in()


def _pair(v):
    if isinstance(v, (tuple, list)):
        a, b = v
        return (int(a), int(b))
    return (int(v), int(v))


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int):
    # windows laid out as (N, C, OH, OW, kh, kw)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Grouped 2-d convolution (cross-correlation) of x with w.

    x: (N, C_in, H, W); w: (C_out, C_in/groups, kh, kw); bias: (C_out,) or None.
    """
    n, c, h, wd = x.shape
    if c != spec.in_channels:
        raise ValueError(f"expected {spec.in_channels} input channels, got {c}")
    if w.shape != spec.weight_shape:
        raise ValueError(f"weight shape {w.shape} != {spec.weight_shape}")
    kh, kw = spec.kernel
    sh, sw = spec.stride
    ph, pw = spec.padding
    g = spec.groups
    cg = spec.in_channels // g
    og = spec.out_channels // g
    oh, ow = spec.out_size(h, wd)

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = _im2col(xp, kh, kw, sh, sw)                      # (N,C,OH,OW,kh,kw)
    cols = win.reshape(n, g, cg, oh, ow, kh, kw)
    cols = cols.transpose(1, 0, 3, 4, 2, 5, 6).reshape(g, n * oh * ow, cg * kh * kw)
    wmat = w.data.reshape(g, og, cg * kh * kw)
    out = np.matmul(cols, wmat.transpose(0, 2, 1))         # (g, N*OH*OW, og)
    out = out.reshape(g, n, oh, ow, og).transpose(1, 0, 4, 2, 3)
    out = np.ascontiguousarray(out.reshape(n, spec.out_channels, oh, ow))
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    parents = [x, w] if bias is None else [x, w, bias]

    def backward(gout):
        gmat = gout.reshape(n, g, og, oh, ow)
        gmat = gmat.transpose(1, 0, 3, 4, 2).reshape(g, n * oh * ow, og)
        if w.requires_grad:
            gw = np.matmul(cols.transpose(0, 2, 1), gmat)  # (g, cg*kh*kw, og)
            gw = gw.transpose(0, 2, 1).reshape(spec.weight_shape)
            _accumulate(w, gw)
        if x.requires_grad:
            gcols = np.matmul(gmat, wmat)                  # (g, N*OH*OW, cg*kh*kw)
            gcols = gcols.reshape(g, n, oh, ow, cg, kh, kw)
            gcols = gcols.transpose(1, 0, 4, 2, 3, 5, 6).reshape(n, c, oh, ow, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += gcols[:, :, :, :, i, j]
            gx = gxp[:, :, ph:ph + h, pw:pw + wd]
            _accumulate(x, gx)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, gout.sum(axis=(0, 2, 3)))

    return _result(out, parents, backward)


# ---------------------------------------------------------------------------
# dense / pooling / elementwise

def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ w.T + bias, with x (N, D_in) and w (D_out, D_in)."""
    out = x.data @ w.data.T
    if bias is not None:
        out = out + bias.data
    parents = [x, w] if bias is None else [x, w, bias]

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g @ w.data)
        if w.requires_grad:
            _accumulate(w, g.T @ x.data)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))

    return _result(out, parents, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean: (N, C, H, W) -> (N, C)."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        if x.requires_grad:
            _accumulate(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy())

    return _result(out, [x], backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * (x.data > 0))

    return _result(out, [x], backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                   np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * out * (1.0 - out))

    return _result(out, [x], backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    out = a.data + b.data

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(out, [a, b], backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, g * a.data)

    return _result(out, [a, b], backward)


def scale(x: Tensor, k: float) -> Tensor:
    out = x.data * k

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * k)

    return _result(out, [x], backward)


def add_scalar(x: Tensor, k) -> Tensor:
    out = x.data + k

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g)

    return _result(out, [x], backward)


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply feature map x (N,C,H,W) by per-sample channel weights s (N,C)."""
    if x.shape[:2] != s.shape:
        raise ValueError(f"channel weights {s.shape} do not match {x.shape}")
    out = x.data * s.data[:, :, None, None]

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * s.data[:, :, None, None])
        if s.requires_grad:
            _accumulate(s, (g * x.data).sum(axis=(2, 3)))

    return _result(out, [x, s], backward)


def roll_channels(x: Tensor, shift: int) -> Tensor:
    """Circularly shift the channel axis so output channel i reads input i+shift."""
    c = x.shape[1]
    out = np.roll(x.data, -shift % c, axis=1)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, np.roll(g, shift % c, axis=1))

    return _result(out, [x], backward)


def permute_channels(x: Tensor, perm: np.ndarray) -> Tensor:
    """Reorder channels: output channel i is input channel perm[i]."""
    out = x.data[:, perm]
    inv = np.argsort(perm)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g[:, inv])

    return _result(out, [x], backward)


def stack_max(parts: list[Tensor]) -> Tensor:
    """Elementwise max over a list of same-shape tensors.

    Ties route the gradient to the earliest winner, which keeps the
    backward pass deterministic.
    """
    stacked = np.stack([p.data for p in parts], axis=0)
    idx = np.argmax(stacked, axis=0)
    out = np.take_along_axis(stacked, idx[None], axis=0)[0]

    def backward(g):
        for k, p in enumerate(parts):
            if p.requires_grad:
                _accumulate(p, g * (idx == k))

    return _result(out, list(parts), backward)


def take_index(x: Tensor, index) -> Tensor:
    """Static fancy-index read; gradient scatters back into the source."""
    out = x.data[index]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, index, g)
            _accumulate(x, gx)

    return _result(out, [x], backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    orig = x.shape

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g.reshape(orig))

    return _result(out, [x], backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only on the training path."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * mask)

    return _result(x.data * mask, [x], backward)


# ---------------------------------------------------------------------------
# normalization and loss

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W) using batch statistics."""
    n, c, h, w = x.shape
    m = n * h * w
    mean = x.data.mean(axis=(0, 2, 3))
    var = x.data.var(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxh = g * gamma.data[None, :, None, None]
            s1 = gxh.sum(axis=(0, 2, 3))
            s2 = (gxh * xhat).sum(axis=(0, 2, 3))
            gx = (gxh - (s1[None, :, None, None] + xhat * s2[None, :, None, None]) / m)
            gx *= inv[None, :, None, None]
            _accumulate(x, gx)

    return _result(out, [x, gamma, beta], backward)


def batch_norm_inference(x: Tensor, gamma: Tensor, beta: Tensor,
                         running_mean: np.ndarray, running_var: np.ndarray,
                         eps: float = 1e-5) -> Tensor:
    inv = 1.0 / np.sqrt(running_var + eps)
    a = gamma.data * inv
    b = beta.data - running_mean * a
    out = x.data * a[None, :, None, None] + b[None, :, None, None]

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * a[None, :, None, None])
        if gamma.requires_grad:
            xhat = (x.data - running_mean[None, :, None, None]) * inv[None, :, None, None]
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2, 3)))

    return _result(out, [x, gamma, beta], backward)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer labels against softmax(logits)."""
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = (logsum - z[np.arange(n), labels]).mean()

    def backward(g):
        if logits.requires_grad:
            p = softmax(logits.data, axis=1)
            p[np.arange(n), labels] -= 1.0
            _accumulate(logits, g * p / n)

    return _result(np.asarray(loss), [logits], backward)
