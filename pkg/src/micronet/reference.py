"""Naive scalar-loop reference kernels.

These exist to check the vectorized implementations and the cost model,
not to be fast. Each kernel optionally increments a multiply-accumulate
counter once per fused multiply-add, matching the analyzer's convention
(bias adds, normalization and activations are free).
"""

from __future__ import annotations

import numpy as np

from .tensor import ConvSpec


class MAddCounter:
    def __init__(self):
        self.count = 0

    def tick(self, n=1):
        self.count += n


def conv2d_naive(x: np.ndarray, w: np.ndarray, bias, spec: ConvSpec,
                 counter: MAddCounter | None = None) -> np.ndarray:
    n, c, h, wd = x.shape
    kh, kw = spec.kernel
    sh, sw = spec.stride
    ph, pw = spec.padding
    g = spec.groups
    cg = spec.in_channels // g
    og = spec.out_channels // g
    oh, ow = spec.out_size(h, wd)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, spec.out_channels, oh, ow), dtype=x.dtype)
    for b in range(n):
        for co in range(spec.out_channels):
            grp = co // og
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (xp[b, grp * cg + ci, i * sh + u, j * sw + v]
                                        * w[co, ci, u, v])
                                if counter is not None:
                                    counter.tick()
                    if bias is not None:
                        acc += bias[co]
                    out[b, co, i, j] = acc
    return out


def linear_naive(x: np.ndarray, w: np.ndarray, bias,
                 counter: MAddCounter | None = None) -> np.ndarray:
    n, din = x.shape
    dout = w.shape[0]
    out = np.zeros((n, dout), dtype=x.dtype)
    for b in range(n):
        for o in range(dout):
            acc = 0.0
            for i in range(din):
                acc += x[b, i] * w[o, i]
                if counter is not None:
                    counter.tick()
            if bias is not None:
                acc += bias[o]
            out[b, o] = acc
    return out


def global_avg_pool_naive(x: np.ndarray,
                          counter: MAddCounter | None = None) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c), dtype=x.dtype)
    for b in range(n):
        for ch in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[b, ch, i, j]
                    if counter is not None:
                        counter.tick()
            out[b, ch] = acc / (h * w)
    return out
