"""Micro-factorized convolution operators.

A pointwise (1x1) convolution from C_in to C_out channels is factorized
into two grouped 1x1 convolutions around a channel shuffle, so that its
dense equivalent W = expand . shuffle . compress splits into low-rank
blocks. A k x k depthwise convolution is factorized into a k x 1 and a
1 x k stage, one rank-1 spatial kernel per channel. Group counts follow
a square-root law in the bottleneck width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .module import Context, Module, he_normal
from .tensor import ConvSpec, Tensor, conv2d, permute_channels


# ---------------------------------------------------------------------------
# group-count laws

def fit_groups(target: float, *channel_counts: int) -> int:
    """Round target half-up, clamp to [1, min(counts)], then step down to a
    common divisor of all channel counts."""
    g = int(math.floor(target + 0.5))
    g = max(1, min(g, min(channel_counts)))
    while g > 1 and any(c % g for c in channel_counts):
        g -= 1
    return g


def compute_groups(channels: int, reduction: int, lam: float = 1.0) -> int:
    """Square-root group law G ~ lam * sqrt(C/R) for a symmetric factorization.

    The result divides both C and C/R. Raises if R does not divide C.
    """
    if channels <= 0 or reduction <= 0:
        raise ValueError("channels and reduction must be positive")
    if channels % reduction:
        raise ValueError(f"reduction {reduction} does not divide {channels} channels")
    hidden = channels // reduction
    return fit_groups(lam * math.sqrt(hidden), channels, hidden)


def adaptive_groups(in_channels: int, out_channels: int, lam: float = 1.0) -> int:
    """Group count for a single group-adaptive 1x1 convolution."""
    target = lam * math.sqrt(min(in_channels, out_channels))
    return fit_groups(target, in_channels, out_channels)


def pick_group_pair(hidden: int, in_channels: int, out_channels: int,
                    lam: float = 1.0) -> tuple[int, int]:
    """Choose (G1, G2) with G1*G2 == hidden, G1 | C_in and G2 | C_out.

    The complementary-divisor constraint routes exactly one hidden channel
    to every (compress group, expand group) pair, which is what makes each
    block of the dense equivalent rank 1 and gives every output channel
    exactly C_in input paths. Both factors are kept as close as possible
    to lam * sqrt(hidden); falls back to independently fitted groups when
    no divisor pair satisfies the channel constraints.
    """
    t = lam * math.sqrt(hidden)
    best = None
    for g1 in range(1, hidden + 1):
        if hidden % g1:
            continue
        g2 = hidden // g1
        if in_channels % g1 or out_channels % g2:
            continue
        key = (abs(g1 - t) + abs(g2 - t), g1)
        if best is None or key < best[0]:
            best = (key, g1, g2)
    if best is not None:
        return best[1], best[2]
    return (fit_groups(t, in_channels, hidden), fit_groups(t, hidden, out_channels))


# ---------------------------------------------------------------------------
# channel shuffle

def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """Transpose shuffle: view channels as (groups, C/groups), transpose,
    flatten. Output channel i takes input channel perm[i]."""
    if channels % groups:
        raise ValueError(f"groups {groups} does not divide {channels} channels")
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Interleave the channels of x (N, C, H, W) across the given groups."""
    return permute_channels(x, shuffle_permutation(x.shape[1], groups))


# ---------------------------------------------------------------------------
# factorized pointwise convolution

class MicroFacPointwise(Module):
    """1x1 convolution factorized as compress (G1 groups), shuffle, expand
    (G2 groups) through a hidden bottleneck."""

    def __init__(self, in_channels: int, out_channels: int, hidden: int,
                 groups: tuple[int, int] | None = None, lam: float = 1.0,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__()
        if hidden <= 0:
            raise ValueError("hidden width must be positive")
        rng = rng or np.random.default_rng()
        g1, g2 = groups if groups is not None else pick_group_pair(
            hidden, in_channels, out_channels, lam)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.hidden = hidden
        self.g1 = g1
        self.g2 = g2
        self.compress_spec = ConvSpec(in_channels, hidden, 1, groups=g1)
        self.expand_spec = ConvSpec(hidden, out_channels, 1, groups=g2)
        self.perm = shuffle_permutation(hidden, g1)
        self.compress_w = he_normal(self.compress_spec.weight_shape,
                                    in_channels // g1, rng, dtype)
        self.expand_w = he_normal(self.expand_spec.weight_shape,
                                  hidden // g2, rng, dtype)

    def compress(self, x: Tensor) -> Tensor:
        return conv2d(x, self.compress_w, None, self.compress_spec)

    def shuffle(self, x: Tensor) -> Tensor:
        return permute_channels(x, self.perm)

    def expand(self, x: Tensor) -> Tensor:
        return conv2d(x, self.expand_w, None, self.expand_spec)

    def forward(self, x: Tensor, ctx: Context | None = None) -> Tensor:
        return self.expand(self.shuffle(self.compress(x)))

    def expand_dense(self) -> np.ndarray:
        """Multiply the three factors out to the dense (C_out, C_in) matrix."""
        q = _group_conv_matrix(self.compress_w.data, self.g1)
        p = _group_conv_matrix(self.expand_w.data, self.g2)
        phi = np.zeros((self.hidden, self.hidden), dtype=q.dtype)
        phi[np.arange(self.hidden), self.perm] = 1.0
        return p @ phi @ q

    def madds(self, h: int, w: int) -> int:
        return self.compress_spec.madds(h, w) + self.expand_spec.madds(h, w)


def _group_conv_matrix(w: np.ndarray, groups: int) -> np.ndarray:
    """Dense matrix of a grouped 1x1 convolution weight (C_out, C_in/g, 1, 1)."""
    c_out, cg = w.shape[0], w.shape[1]
    og = c_out // groups
    m = np.zeros((c_out, cg * groups), dtype=w.dtype)
    for g in range(groups):
        m[g * og:(g + 1) * og, g * cg:(g + 1) * cg] = w[g * og:(g + 1) * og, :, 0, 0]
    return m


def path_count_oracle(layer: MicroFacPointwise, out_channel: int) -> int:
    """Count (input channel, hidden channel) routes reaching one output by
    brute-force graph walk, independent of the connectivity formula."""
    cin, hid = layer.in_channels, layer.hidden
    in_per_g1 = cin // layer.g1
    hid_per_g1 = hid // layer.g1
    hid_per_g2 = hid // layer.g2
    out_group = out_channel // (layer.out_channels // layer.g2)
    inv = np.argsort(layer.perm)
    count = 0
    for i in range(cin):
        for h in range(hid):
            if i // in_per_g1 != h // hid_per_g1:
                continue
            if inv[h] // hid_per_g2 != out_group:
                continue
            count += 1
    return count


def path_count_matrix(layer: MicroFacPointwise) -> np.ndarray:
    """Path counts for all (output, input) pairs via 0/1 adjacency products."""
    cin, hid, cout = layer.in_channels, layer.hidden, layer.out_channels
    a1 = np.zeros((hid, cin), dtype=np.int64)
    for h in range(hid):
        g = h // (hid // layer.g1)
        a1[h, g * (cin // layer.g1):(g + 1) * (cin // layer.g1)] = 1
    a1 = a1[layer.perm]
    a2 = np.zeros((cout, hid), dtype=np.int64)
    for o in range(cout):
        g = o // (cout // layer.g2)
        a2[o, g * (hid // layer.g2):(g + 1) * (hid // layer.g2)] = 1
    return a2 @ a1


# ---------------------------------------------------------------------------
# factorized depthwise convolution

class MicroFacDepthwise(Module):
    """Per-channel k x k kernel expressed as the outer product of a k x 1
    column filter and a 1 x k row filter.

    With expansion > 1 the column stage applies several filters per input
    channel, so the operator widens the feature map while staying
    depthwise. Stride is split along the matching kernel direction.
    """

    def __init__(self, channels: int, kernel: int, stride: int = 1,
                 expansion: int = 1, rng: np.random.Generator | None = None,
                 dtype=np.float64):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if expansion < 1:
            raise ValueError("expansion must be >= 1")
        rng = rng or np.random.default_rng()
        out = channels * expansion
        pad = (kernel - 1) // 2
        self.channels = channels
        self.out_channels = out
        self.kernel = kernel
        self.stride = stride
        self.expansion = expansion
        self.col_spec = ConvSpec(channels, out, (kernel, 1), stride=(stride, 1),
                                 padding=(pad, 0), groups=channels)
        self.row_spec = ConvSpec(out, out, (1, kernel), stride=(1, stride),
                                 padding=(0, pad), groups=out)
        self.col_w = he_normal(self.col_spec.weight_shape, kernel, rng, dtype)
        self.row_w = he_normal(self.row_spec.weight_shape, kernel, rng, dtype)

    def forward(self, x: Tensor, ctx: Context | None = None) -> Tensor:
        return conv2d(conv2d(x, self.col_w, None, self.col_spec),
                      self.row_w, None, self.row_spec)

    def dense_kernel(self) -> np.ndarray:
        """Outer-product k x k kernels, shape (C*expansion, 1, k, k)."""
        col = self.col_w.data[:, 0, :, 0]
        row = self.row_w.data[:, 0, 0, :]
        return (col[:, :, None] * row[:, None, :])[:, None]

    def dense_spec(self) -> ConvSpec:
        pad = (self.kernel - 1) // 2
        return ConvSpec(self.channels, self.out_channels, self.kernel,
                        stride=self.stride, padding=pad, groups=self.channels)

    def madds(self, h: int, w: int) -> int:
        hc, wc = self.col_spec.out_size(h, w)
        m = self.col_spec.madds(h, w) + self.row_spec.madds(hc, wc)
        return m

    @staticmethod
    def cost_per_position(kernel: int, channels: int) -> tuple[int, int]:
        """(factorized, dense) multiply-adds per output position."""
        return 2 * kernel * channels, kernel * kernel * channels


# ---------------------------------------------------------------------------
# lite combination

class LiteCombination(Module):
    """Depthwise expansion followed by a single group-adaptive squeeze.

    Widens spatial filtering via the factorized depthwise stage and fuses
    channels with one grouped 1x1 convolution instead of a full pointwise
    pair, trading fusion arithmetic for spatial filters.
    """

    def __init__(self, in_channels: int, dw_channels: int, out_channels: int,
                 kernel: int, stride: int = 1, lam: float = 1.0,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__()
        if dw_channels % in_channels:
            raise ValueError("depthwise width must be a multiple of the input width")
        rng = rng or np.random.default_rng()
        self.depthwise = MicroFacDepthwise(in_channels, kernel, stride,
                                           expansion=dw_channels // in_channels,
                                           rng=rng, dtype=dtype)
        g = adaptive_groups(dw_channels, out_channels, lam)
        self.squeeze_spec = ConvSpec(dw_channels, out_channels, 1, groups=g)
        self.squeeze_w = he_normal(self.squeeze_spec.weight_shape,
                                   dw_channels // g, rng, dtype)
        self.in_channels = in_channels
        self.out_channels = out_channels

    def forward(self, x: Tensor, ctx: Context | None = None) -> Tensor:
        return conv2d(self.depthwise(x), self.squeeze_w, None, self.squeeze_spec)

    def madds(self, h: int, w: int) -> int:
        s = self.depthwise.stride
        return self.depthwise.madds(h, w) + self.squeeze_spec.madds(h // s, w // s)


def regular_combination_madds(in_channels: int, dw_channels: int,
                              out_channels: int, kernel: int,
                              h: int, w: int, lam: float = 1.0) -> int:
    """Cost of the conventional alternative at the same spatial width:
    grouped pointwise expand, factorized depthwise, grouped pointwise fuse."""
    ge = adaptive_groups(in_channels, dw_channels, lam)
    gs = adaptive_groups(dw_channels, out_channels, lam)
    expand = ConvSpec(in_channels, dw_channels, 1, groups=ge).madds(h, w)
    dw = 2 * kernel * dw_channels * h * w
    fuse = ConvSpec(dw_channels, out_channels, 1, groups=gs).madds(h, w)
    return expand + dw + fuse


# ---------------------------------------------------------------------------
# connectivity analysis

@dataclass(frozen=True)
class ConnectivityProfile:
    """Cost and connectivity of a symmetric factorized pointwise layer."""

    channels: int
    reduction: int
    groups: int
    madds_per_position: float
    connectivity: float

    def __post_init__(self):
        if self.channels <= 0 or self.reduction <= 0 or self.groups <= 0:
            raise ValueError("profile fields must be positive")


def connectivity(channels: int, reduction: int, groups: int | None = None,
                 lam: float = 1.0) -> ConnectivityProfile:
    """Profile of a C -> C factorization: O = 2C^2/(RG), E = C^2/(RG^2)."""
    g = compute_groups(channels, reduction, lam) if groups is None else groups
    o = 2.0 * channels * channels / (reduction * g)
    e = channels * channels / (reduction * g * g)
    return ConnectivityProfile(channels, reduction, g, o, e)
