"""Composite network units built from the tensor primitives.

The central block is a dual-path dense unit: a 3x3 path and a 5x5 path
that exchange their first-stage features, fuse through 1x1 bottlenecks,
and merge in a shared 1x1 tail, optionally wrapped in a local residual.
Alongside it live the channel-attention gate, the hierarchical
distillation unit, the per-factor sub-pixel reconstruction heads, two
baseline blocks, and the four plain hierarchical aggregation rules used
for comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, UnsupportedFactorError
from .tensor import (
    Tensor,
    add,
    concat_channels,
    conv2d,
    global_avg_pool,
    pixel_shuffle,
    relu,
    scale_channels,
    sigmoid,
)

__all__ = [
    "Conv",
    "MdcbParams",
    "CamParams",
    "HfdbParams",
    "DrbParams",
    "ResblockParams",
    "MsrbParams",
    "HierarchyDParams",
    "mdcb_forward",
    "cam_forward",
    "hfdb_forward",
    "drb_forward",
    "baseline_block_forward",
    "hierarchical_aggregate",
    "init_conv_weight",
    "cam_width",
]


def init_conv_weight(rng: np.random.Generator, out_c: int, in_c: int, k: int, dtype,
                     gain: float = 1.0) -> np.ndarray:
    """Fan-in scaled uniform init: bound = gain * sqrt(6 / (in_c * k * k)).

    Merge layers (block tails, the distillation tail, the RGB output conv)
    are built with a small gain so the network starts near a contraction;
    with full gain everywhere the dense concatenations and residual sums
    inflate activations block over block and the first thousand updates
    are spent shrinking the output back into range.
    """
    bound = gain * math.sqrt(6.0 / (in_c * k * k))
    return rng.uniform(-bound, bound, size=(out_c, in_c, k, k)).astype(dtype)


def cam_width(channels: int, reduction: int) -> int:
    """Gate bottleneck width: ceil(channels / reduction), at least 1."""
    return max(1, -(-channels // reduction))


@dataclass
class Conv:
    """A convolution layer's weight (out_c, in_c, k, k) and bias (1, out_c, 1, 1)."""

    w: Tensor
    b: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b)

    @property
    def out_channels(self) -> int:
        return self.w.shape[0]

    @property
    def in_channels(self) -> int:
        return self.w.shape[1]


@dataclass
class MdcbParams:
    """Parameters of one dual-path dense block.

    ``top*`` layers use 3x3 kernels, ``bot*`` layers 5x5.  A disabled path
    is None.  With both paths and feature exchange on, the fusion 1x1
    layers take 3C inputs (input, own first stage, other path's first
    stage) and the tail takes 5C; without exchange the fusions take 2C.
    Single-path variants keep one path and a 3C tail.
    """

    top1: Conv | None
    top_fuse: Conv | None
    top2: Conv | None
    bot1: Conv | None
    bot_fuse: Conv | None
    bot2: Conv | None
    tail: Conv = None
    fefm: bool = True
    residual: bool = True


def mdcb_forward(x: Tensor, p: MdcbParams) -> Tensor:
    """Run one dual-path dense block; output shape equals input shape."""
    has_top = p.top1 is not None
    has_bot = p.bot1 is not None
    c = p.top1.in_channels if has_top else p.bot1.in_channels
    if x.shape[1] != c:
        raise ContractViolationError(
            f"block expects {c} channels, got {x.shape[1]}"
        )
    if has_top:
        l22 = relu(p.top1(x))
    if has_bot:
        h22 = relu(p.bot1(x))
    if has_top and has_bot:
        top_in = concat_channels([x, l22, h22] if p.fefm else [x, l22])
        l33 = relu(p.top2(p.top_fuse(top_in)))
        bot_in = concat_channels([x, h22, l22] if p.fefm else [x, h22])
        h33 = relu(p.bot2(p.bot_fuse(bot_in)))
        out = p.tail(concat_channels([l22, l33, h22, h33, x]))
    elif has_top:
        l33 = relu(p.top2(p.top_fuse(concat_channels([x, l22]))))
        out = p.tail(concat_channels([x, l22, l33]))
    elif has_bot:
        h33 = relu(p.bot2(p.bot_fuse(concat_channels([x, h22]))))
        out = p.tail(concat_channels([x, h22, h33]))
    else:
        raise ContractViolationError("block needs at least one active path")
    return add(out, x) if p.residual else out


@dataclass
class CamParams:
    """Channel attention gate: squeeze, two-layer excitation, rescale."""

    down: Conv
    up: Conv
    reduction: int


def cam_forward(x: Tensor, p: CamParams) -> Tensor:
    """Gate each channel by sigmoid(up(relu(down(mean over space))))."""
    if x.shape[1] != p.down.in_channels:
        raise ContractViolationError(
            f"attention gate expects {p.down.in_channels} channels, got {x.shape[1]}"
        )
    z = global_avg_pool(x)
    s = sigmoid(p.up(relu(p.down(z))))
    return scale_channels(x, s)


@dataclass
class HfdbParams:
    """Hierarchical distillation: concat -> 1x1 reduce -> attention -> 1x1 expand."""

    head: Conv
    cam: CamParams
    tail: Conv


def hfdb_forward(feats, p: HfdbParams) -> Tensor:
    """Distill a list of same-shape feature maps down to the trunk width."""
    feats = list(feats)
    if not feats:
        raise ContractViolationError("hierarchical distillation needs at least one feature map")
    shape = feats[0].shape
    for t in feats[1:]:
        if t.shape != shape:
            raise ContractViolationError(
                f"hierarchical features disagree in shape: {t.shape} vs {shape}"
            )
    x = concat_channels(feats)
    if x.shape[1] != p.head.in_channels:
        raise ContractViolationError(
            f"distillation head expects {p.head.in_channels} channels, got {x.shape[1]}"
        )
    return p.tail(cam_forward(p.head(x), p.cam))


@dataclass
class DrbParams:
    """Per-factor reconstruction heads; exactly one runs per forward pass.

    Each head is a list of (1x1 conv, shuffle factor) stages: one stage
    for x2/x3, two cascaded x2 stages for x4.  Head parameter sets are
    disjoint from each other and from the trunk.
    """

    heads: dict[int, list[tuple[Conv, int]]] = field(default_factory=dict)

    @property
    def factors(self) -> tuple[int, ...]:
        return tuple(sorted(self.heads))


def drb_forward(x: Tensor, factor: int, p: DrbParams) -> Tensor:
    """Upscale spatially by ``factor`` through that factor's head only."""
    if factor not in p.heads:
        raise UnsupportedFactorError(factor, p.heads)
    for conv, r in p.heads[factor]:
        x = pixel_shuffle(conv(x), r)
    return x


@dataclass
class ResblockParams:
    conv1: Conv
    conv2: Conv


@dataclass
class MsrbParams:
    """Two-stage 3x3/5x5 cross block with a 1x1 tail and residual."""

    conv3_1: Conv
    conv5_1: Conv
    conv3_2: Conv
    conv5_2: Conv
    tail: Conv


def baseline_block_forward(kind: str, x: Tensor, params) -> Tensor:
    """Baseline feature extractors used for block-level comparisons."""
    if kind == "resblock":
        return add(x, params.conv2(relu(params.conv1(x))))
    if kind == "msrb":
        s1 = relu(params.conv3_1(x))
        p1 = relu(params.conv5_1(x))
        s2 = relu(params.conv3_2(concat_channels([s1, p1])))
        p2 = relu(params.conv5_2(concat_channels([p1, s1])))
        return add(params.tail(concat_channels([s2, p2])), x)
    raise ContractViolationError(f"unknown baseline block kind {kind!r}")


@dataclass
class HierarchyDParams:
    """1x1 fusion layer over channel-concatenated hierarchical features."""

    fuse: Conv


def hierarchical_aggregate(method: str, features, x_in: Tensor, params=None) -> Tensor:
    """Combine per-block feature maps by one of the four plain rules.

    A: last feature unchanged.  B: last feature plus the block-chain
    input.  C: last feature plus all earlier features plus the input.
    D: 1x1 fusion of all features concatenated along channels.
    """
    features = list(features)
    if not features:
        raise ContractViolationError("hierarchical aggregation needs at least one feature map")
    if method == "A":
        return features[-1]
    if method == "B":
        return add(features[-1], x_in)
    if method == "C":
        acc = features[-1]
        for f in features[:-1]:
            acc = add(acc, f)
        return add(acc, x_in)
    if method == "D":
        if params is None:
            raise ContractViolationError("method D needs a fusion layer")
        return params.fuse(concat_channels(features))
    raise ContractViolationError(f"unknown hierarchy method {method!r}")
