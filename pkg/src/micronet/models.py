"""Model assembly: stem, micro-blocks, classifier head, and the M0-M3
architecture table.

Block kinds:
  A: depthwise expansion followed by one group-adaptive squeeze (two
     activation slots).
  B: depthwise stage plus a full factorized pointwise pair that changes
     the channel budget between stages (three slots, one per model).
  C: depthwise stage plus a full factorized pointwise pair, with a skip
     connection whenever input and output shapes agree (three slots).

Batch normalization follows every convolution stage and precedes its
activation. Stage-leading blocks carry stride 2 in the depthwise stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dyshiftmax import DyShiftMax
from .microfac import (MicroFacDepthwise, MicroFacPointwise, adaptive_groups)
from .module import Context, Module, he_normal, ones_param, zeros_param
from .tensor import (ConvSpec, Tensor, add, batch_norm, batch_norm_inference,
                     conv2d, dropout, global_avg_pool, linear, relu)

VARIANTS = ("M0", "M1", "M2", "M3", "tiny")


# ---------------------------------------------------------------------------
# specs

@dataclass(frozen=True)
class BlockSpec:
    """One micro-block row: kind, spatial kernel, depthwise/output width,
    bottleneck width, stride, and per-slot activations."""

    kind: str
    kernel: int
    width: int
    hidden: int
    stride: int = 1
    activations: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("A", "B", "C"):
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        slots = 2 if self.kind == "A" else 3
        acts = self.activations or ("dysm",) + ("relu",) * (slots - 1)
        if len(acts) != slots:
            raise ValueError(f"block {self.kind} takes {slots} activation slots")
        for a in acts:
            if a not in ("relu", "dysm", "none"):
                raise ValueError(f"unknown activation {a!r}")
        object.__setattr__(self, "activations", tuple(acts))


@dataclass(frozen=True)
class ModelSpec:
    """Complete, buildable description of one network."""

    name: str
    stem_width: int
    stem_hidden: int
    blocks: tuple[BlockSpec, ...]
    head_width: int
    num_classes: int = 1000
    dropout: float = 0.05
    norm: str = "bn"
    num_shifts: int = 2
    num_fusions: int = 2
    hyper_reduction: int = 16
    hyper_min_hidden: int = 8
    coeff_scale: float = 1.0
    group_lam: float = 1.0

    def __post_init__(self):
        if self.norm not in ("bn", "none"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if sum(1 for b in self.blocks if b.kind == "B") > 1:
            raise ValueError("at most one transition (B) block per model")

    def to_config(self) -> dict:
        return {
            "schema": "micronet.model/1",
            "name": self.name,
            "stem": {"width": self.stem_width, "hidden": self.stem_hidden},
            "blocks": [
                {"kind": b.kind, "kernel": b.kernel, "width": b.width,
                 "hidden": b.hidden, "stride": b.stride,
                 "activations": list(b.activations)}
                for b in self.blocks
            ],
            "head_width": self.head_width,
            "num_classes": self.num_classes,
            "dropout": self.dropout,
            "norm": self.norm,
            "dyshiftmax": {
                "num_shifts": self.num_shifts,
                "num_fusions": self.num_fusions,
                "reduction": self.hyper_reduction,
                "min_hidden": self.hyper_min_hidden,
                "coeff_scale": self.coeff_scale,
            },
            "group_lam": self.group_lam,
        }

    @staticmethod
    def from_config(cfg: dict) -> "ModelSpec":
        if cfg.get("schema") != "micronet.model/1":
            raise ValueError(f"unsupported model config schema {cfg.get('schema')!r}")
        dy = cfg.get("dyshiftmax", {})
        return ModelSpec(
            name=cfg["name"],
            stem_width=cfg["stem"]["width"],
            stem_hidden=cfg["stem"]["hidden"],
            blocks=tuple(
                BlockSpec(b["kind"], b["kernel"], b["width"], b["hidden"],
                          b.get("stride", 1),
                          tuple(b.get("activations", ())))
                for b in cfg["blocks"]
            ),
            head_width=cfg["head_width"],
            num_classes=cfg.get("num_classes", 1000),
            dropout=cfg.get("dropout", 0.05),
            norm=cfg.get("norm", "bn"),
            num_shifts=dy.get("num_shifts", 2),
            num_fusions=dy.get("num_fusions", 2),
            hyper_reduction=dy.get("reduction", 16),
            hyper_min_hidden=dy.get("min_hidden", 8),
            coeff_scale=dy.get("coeff_scale", 1.0),
            group_lam=cfg.get("group_lam", 1.0),
        )


def _rows(*rows) -> tuple[BlockSpec, ...]:
    return tuple(BlockSpec(*r) for r in rows)


_TABLE = {
    "M0": ModelSpec(
        name="M0", stem_width=4, stem_hidden=2, head_width=640,
        blocks=_rows(
            ("A", 3, 16, 8, 2),
            ("A", 3, 32, 12, 2),
            ("B", 5, 64, 16, 2),
            ("C", 5, 128, 32, 1),
            ("C", 5, 256, 64, 2),
            ("C", 3, 384, 96, 1),
        )),
    "M1": ModelSpec(
        name="M1", stem_width=6, stem_hidden=3, head_width=1024,
        blocks=_rows(
            ("A", 3, 24, 8, 2),
            ("A", 3, 32, 16, 2),
            ("B", 5, 96, 16, 2),
            ("C", 5, 192, 32, 1),
            ("C", 5, 384, 64, 2),
            ("C", 3, 576, 96, 1),
        )),
    "M2": ModelSpec(
        name="M2", stem_width=8, stem_hidden=4, head_width=1152,
        blocks=_rows(
            ("A", 3, 32, 12, 2),
            ("A", 3, 48, 16, 2),
            ("B", 3, 144, 24, 1),
            ("C", 5, 192, 32, 2),
            ("C", 5, 192, 32, 1),
            ("C", 5, 384, 64, 1),
            ("C", 5, 576, 96, 2),
            ("C", 3, 768, 128, 1),
        )),
    "M3": ModelSpec(
        name="M3", stem_width=12, stem_hidden=4, head_width=1024, dropout=0.1,
        blocks=_rows(
            ("A", 3, 48, 16, 2),
            ("A", 3, 64, 24, 2),
            ("B", 3, 144, 24, 1),
            ("C", 3, 192, 32, 2),
            ("C", 5, 192, 32, 1),
            ("C", 5, 384, 64, 1),
            ("C", 5, 480, 80, 1),
            ("C", 5, 480, 80, 1),
            ("C", 5, 720, 120, 2),
            ("C", 3, 720, 120, 1),
            ("C", 3, 864, 144, 1),
        )),
    "tiny": ModelSpec(
        name="tiny", stem_width=4, stem_hidden=2, head_width=16, num_classes=2,
        blocks=_rows(
            ("A", 3, 8, 4, 2),
            ("C", 3, 8, 4, 1),
        )),
}


def model_spec(variant: str) -> ModelSpec:
    try:
        return _TABLE[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


# ---------------------------------------------------------------------------
# elementary layers

class ModuleList(Module):
    def __init__(self, mods):
        super().__init__()
        self._items = list(mods)
        for i, m in enumerate(self._items):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Conv2dLayer(Module):
    def __init__(self, spec: ConvSpec, rng, dtype, bias: bool = False):
        super().__init__()
        self.spec = spec
        fan_in = spec.fan_in()
        self.weight = he_normal(spec.weight_shape, fan_in, rng, dtype)
        self.bias = zeros_param((spec.out_channels,), dtype) if bias else None

    def forward(self, x: Tensor, ctx: Context | None = None) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.spec)


class BatchNorm2d(Module):
    def __init__(self, channels: int, dtype, eps: float = 1e-5,
                 momentum: float = 0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = ones_param((channels,), dtype)
        self.beta = zeros_param((channels,), dtype)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor, ctx: Context | None = None) -> Tensor:
        training = ctx.training if ctx is not None else False
        if training:
            mean = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3))
            m = self.momentum
            self.running_mean *= (1.0 - m)
            self.running_mean += m * mean
            self.running_var *= (1.0 - m)
            self.running_var += m * var
            return batch_norm(x, self.gamma, self.beta, self.eps)
        return batch_norm_inference(x, self.gamma, self.beta,
                                    self.running_mean, self.running_var, self.eps)


class Identity(Module):
    def forward(self, x: Tensor, ctx: Context | None = None) -> Tensor:
        return x


class ReLU(Module):
    def forward(self, x: Tensor, ctx: Context | None = None) -> Tensor:
        return relu(x)


def _make_norm(spec: ModelSpec, channels: int, dtype) -> Module:
    return BatchNorm2d(channels, dtype) if spec.norm == "bn" else Identity()


def _make_activation(kind: str, channels: int, groups: int, spec: ModelSpec,
                     rng, dtype) -> Module:
    if kind == "relu":
        return ReLU()
    if kind == "none":
        return Identity()
    if kind == "dysm":
        return DyShiftMax(channels, groups,
                          num_shifts=spec.num_shifts,
                          num_fusions=spec.num_fusions,
                          reduction=spec.hyper_reduction,
                          min_hidden=spec.hyper_min_hidden,
                          coeff_scale=spec.coeff_scale,
                          rng=rng, dtype=dtype)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# stem, blocks, head

class Stem(Module):
    """3x1 conv (vertical stride 2) into a grouped 1x3 expansion (horizontal
    stride 2); the expansion is depthwise over its input channels."""

    def __init__(self, spec: ModelSpec, rng, dtype):
        super().__init__()
        c, hid = spec.stem_width, spec.stem_hidden
        self.conv1 = Conv2dLayer(
            ConvSpec(3, hid, (3, 1), stride=(2, 1), padding=(1, 0)), rng, dtype)
        self.conv2 = Conv2dLayer(
            ConvSpec(hid, c, (1, 3), stride=(1, 2), padding=(0, 1), groups=hid),
            rng, dtype)
        self.norm = _make_norm(spec, c, dtype)
        self.out_channels = c

    def forward(self, x: Tensor, ctx: Context | None = None) -> Tensor:
        return relu(self.norm(self.conv2(self.conv1(x, ctx), ctx), ctx))

    def cost_items(self, h: int, w: int):
        s1, s2 = self.conv1.spec, self.conv2.spec
        h1, w1 = s1.out_size(h, w)
        h2, w2 = s2.out_size(h1, w1)
        items = [
            ("stem.conv1", "conv", s1.madds(h, w), _nparams(s1), (s1.out_channels, h1, w1)),
            ("stem.conv2", "conv", s2.madds(h1, w1), _nparams(s2), (s2.out_channels, h2, w2)),
        ]
        extra = 2 * self.out_channels if isinstance(self.norm, BatchNorm2d) else 0
        return items, extra, (self.out_channels, h2, w2)


class MicroBlockA(Module):
    """Lite combination: factorized depthwise expansion, then one
    group-adaptive squeeze down to the block width."""

    def __init__(self, c_in: int, bs: BlockSpec, spec: ModelSpec, rng, dtype):
        super().__init__()
        if bs.width % c_in:
            raise ValueError(f"block width {bs.width} not a multiple of input {c_in}")
        self.kind = "A"
        self.c_in = c_in
        self.c_out = bs.hidden
        self.stride = bs.stride
        self.depthwise = MicroFacDepthwise(c_in, bs.kernel, bs.stride,
                                           expansion=bs.width // c_in,
                                           rng=rng, dtype=dtype)
        g = adaptive_groups(bs.width, bs.hidden, spec.group_lam)
        self.squeeze = Conv2dLayer(ConvSpec(bs.width, bs.hidden, 1, groups=g),
                                   rng, dtype)
        self.norm1 = _make_norm(spec, bs.width, dtype)
        self.norm2 = _make_norm(spec, bs.hidden, dtype)
        self.act1 = _make_activation(bs.activations[0], bs.width, g, spec, rng, dtype)
        self.act2 = _make_activation(bs.activations[1], bs.hidden, g, spec, rng, dtype)

    def forward(self, x: Tensor, ctx: Context | None = None) -> Tensor:
        t = self.act1(self.norm1(self.depthwise(x, ctx), ctx), ctx)
        t = self.squeeze(t, ctx)
        return self.act2(self.norm2(t, ctx), ctx)

    def cost_items(self, h: int, w: int):
        dw = self.depthwise
        ho, wo = h // self.stride, w // self.stride
        items = [
            ("depthwise", "conv", dw.madds(h, w),
             _count(dw.col_w) + _count(dw.row_w), (dw.out_channels, ho, wo)),
            ("squeeze", "conv", self.squeeze.spec.madds(ho, wo),
             _nparams(self.squeeze.spec), (self.c_out, ho, wo)),
        ]
        extra = 0
        for nm in (self.norm1, self.norm2):
            if isinstance(nm, BatchNorm2d):
                extra += 2 * nm.channels
        acts = []
        for slot, act in (("act1", self.act1), ("act2", self.act2)):
            if isinstance(act, DyShiftMax):
                acts.append((slot, act, (ho, wo)))
        return items, extra, acts, (self.c_out, ho, wo)


class MicroBlockBC(Module):
    """Regular combination: factorized depthwise stage, then the full
    factorized pointwise pair through the bottleneck."""

    def __init__(self, c_in: int, bs: BlockSpec, spec: ModelSpec, rng, dtype):
        super().__init__()
        self.kind = bs.kind
        self.c_in = c_in
        self.c_out = bs.width
        self.stride = bs.stride
        self.depthwise = MicroFacDepthwise(c_in, bs.kernel, bs.stride,
                                           rng=rng, dtype=dtype)
        self.pointwise = MicroFacPointwise(c_in, bs.width, bs.hidden,
                                           lam=spec.group_lam, rng=rng, dtype=dtype)
        self.norm1 = _make_norm(spec, c_in, dtype)
        self.norm2 = _make_norm(spec, bs.hidden, dtype)
        self.norm3 = _make_norm(spec, bs.width, dtype)
        g1, g2 = self.pointwise.g1, self.pointwise.g2
        self.act1 = _make_activation(bs.activations[0], c_in, g1, spec, rng, dtype)
        self.act2 = _make_activation(bs.activations[1], bs.hidden, g2, spec, rng, dtype)
        self.act3 = _make_activation(bs.activations[2], bs.width, g2, spec, rng, dtype)
        self.skip = bs.kind == "C" and bs.stride == 1 and c_in == bs.width

    def forward(self, x: Tensor, ctx: Context | None = None) -> Tensor:
        t = self.act1(self.norm1(self.depthwise(x, ctx), ctx), ctx)
        t = self.pointwise.compress(t)
        t = self.act2(self.norm2(t, ctx), ctx)
        t = self.pointwise.shuffle(t)
        t = self.pointwise.expand(t)
        t = self.act3(self.norm3(t, ctx), ctx)
        if self.skip:
            t = add(t, x)
        return t

    def cost_items(self, h: int, w: int):
        dw, pw = self.depthwise, self.pointwise
        ho, wo = h // self.stride, w // self.stride
        items = [
            ("depthwise", "conv", dw.madds(h, w),
             _count(dw.col_w) + _count(dw.row_w), (self.c_in, ho, wo)),
            ("compress", "conv", pw.compress_spec.madds(ho, wo),
             _nparams(pw.compress_spec), (pw.hidden, ho, wo)),
            ("expand", "conv", pw.expand_spec.madds(ho, wo),
             _nparams(pw.expand_spec), (self.c_out, ho, wo)),
        ]
        extra = 0
        for nm in (self.norm1, self.norm2, self.norm3):
            if isinstance(nm, BatchNorm2d):
                extra += 2 * nm.channels
        acts = []
        for slot, act in (("act1", self.act1), ("act2", self.act2), ("act3", self.act3)):
            if isinstance(act, DyShiftMax):
                acts.append((slot, act, (ho, wo)))
        return items, extra, acts, (self.c_out, ho, wo)


class Head(Module):
    """Global average pool into a two-layer classifier."""

    def __init__(self, c_in: int, spec: ModelSpec, rng, dtype):
        super().__init__()
        self.c_in = c_in
        self.width = spec.head_width
        self.num_classes = spec.num_classes
        self.drop_rate = spec.dropout
        self.fc1_w = he_normal((spec.head_width, c_in), c_in, rng, dtype)
        self.fc1_b = zeros_param((spec.head_width,), dtype)
        self.fc2_w = he_normal((spec.num_classes, spec.head_width),
                               spec.head_width, rng, dtype)
        self.fc2_b = zeros_param((spec.num_classes,), dtype)

    def forward(self, x: Tensor, ctx: Context | None = None) -> Tensor:
        ctx = ctx or Context()
        z = global_avg_pool(x)
        z = relu(linear(z, self.fc1_w, self.fc1_b))
        if ctx.training and self.drop_rate > 0.0:
            z = dropout(z, self.drop_rate, ctx.rng)
        return linear(z, self.fc2_w, self.fc2_b)

    def cost_items(self, h: int, w: int):
        items = [
            ("head.pool", "pool", h * w * self.c_in, 0, (self.c_in,)),
            ("head.fc1", "linear", self.c_in * self.width,
             self.c_in * self.width + self.width, (self.width,)),
            ("head.fc2", "linear", self.width * self.num_classes,
             self.width * self.num_classes + self.num_classes, (self.num_classes,)),
        ]
        return items


def _nparams(spec: ConvSpec) -> int:
    return int(np.prod(spec.weight_shape))


def _count(t: Tensor) -> int:
    return int(np.prod(t.shape))


def _dysm_params(act: DyShiftMax) -> int:
    c, hid = act.channels, act.hidden
    jk = act.num_shifts * act.num_fusions
    return hid * c + hid + c * jk * hid + c * jk


# ---------------------------------------------------------------------------
# network

class Network(Module):
    """A buildable, runnable model instance with its spec attached."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng()
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.stem = Stem(spec, rng, dtype)
        blocks = []
        c = self.stem.out_channels
        for bs in spec.blocks:
            blk = (MicroBlockA if bs.kind == "A" else MicroBlockBC)(
                c, bs, spec, rng, dtype)
            blocks.append(blk)
            c = blk.c_out
        self.blocks = ModuleList(blocks)
        self.head = Head(c, spec, rng, dtype)

    def forward(self, x, ctx: Context | None = None) -> Tensor:
        ctx = ctx or Context()
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected input (N, 3, H, W), got {x.shape}")
        if not np.isfinite(x.data).all():
            raise ValueError("input contains non-finite values")
        t = self.stem(x, ctx)
        for blk in self.blocks:
            t = blk(t, ctx)
        return self.head(t, ctx)

    def pointwise_layers(self):
        """(name, MicroFacPointwise) pairs for structural verification."""
        out = []
        for i, blk in enumerate(self.blocks):
            if isinstance(blk, MicroBlockBC):
                out.append((f"blocks.{i}.pointwise", blk.pointwise))
        return out

    def geometry(self, res: int = 224):
        """Per-block (kind, out_channels, out_resolution) walk."""
        h = res // 2
        rows = [("stem", self.stem.out_channels, h)]
        for blk in self.blocks:
            h //= blk.stride
            rows.append((blk.kind, blk.c_out, h))
        return rows


def build_model(variant_or_spec, *, num_classes: int | None = None,
                dtype=np.float32, seed: int | None = None,
                rng: np.random.Generator | None = None) -> Network:
    """Construct a network from a variant name or an explicit ModelSpec."""
    if isinstance(variant_or_spec, ModelSpec):
        spec = variant_or_spec
    else:
        spec = model_spec(variant_or_spec)
    if num_classes is not None and num_classes != spec.num_classes:
        spec = ModelSpec(**{**_spec_dict(spec), "num_classes": num_classes})
    if rng is None:
        rng = np.random.default_rng(0 if seed is None else seed)
    return Network(spec, rng=rng, dtype=dtype)


def _spec_dict(spec: ModelSpec) -> dict:
    return {f: getattr(spec, f) for f in spec.__dataclass_fields__}
