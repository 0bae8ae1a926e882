"""Residual networks assembled from split-attention bottlenecks.

Stage layout follows the classic four-stage residual meta-architecture with
bottleneck expansion 4 and strides (1, 2, 2, 2). Two stem flavours exist: the
classic single 7x7 convolution, and the deep stem of three 3x3 convolutions.
Transition-block shortcuts optionally downsample with a 2x2 average pool
before their 1x1 projection. With ``radix == 0`` a block degenerates to a
plain bottleneck (grouped 3x3 in the middle, stride on the 3x3), which is the
baseline the cost model calibrates against.

The final normalization scale of every residual branch is initialized to
zero, so a freshly built network computes only its shortcut chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ConfigurationError, Module
from .layers import AvgPool2d, BatchNorm, Conv2d, Dropout, GlobalAvgPool, Linear, MaxPool2d, ReLU
from .splat import SplatConfig, SplitAttentionUnit
from .training import dropblock_mask

STAGE_LAYOUTS: dict[int, tuple[int, int, int, int]] = {
    50: (3, 4, 6, 3),
    101: (3, 4, 23, 3),
    200: (3, 24, 36, 3),
    269: (3, 30, 48, 8),
}

MIN_INPUT_SIZE = 32


@dataclass
class NetworkConfig:
    """Everything needed to build one network."""

    depth: int = 50
    stage_blocks: tuple[int, int, int, int] | None = None
    stem_width: int | None = None
    deep_stem: bool = True
    radix: int = 2
    cardinality: int = 1
    base_width: int = 64
    fast: bool = False
    avg_down: bool = True
    dropout: float | None = None
    num_classes: int = 1000
    input_channels: int = 3
    base_planes: int = 64
    dropblock_prob: float = 0.0
    dropblock_size: int = 3

    def __post_init__(self):
        if self.stage_blocks is None:
            if self.depth not in STAGE_LAYOUTS:
                raise ConfigurationError(
                    f"depth {self.depth} has no named layout; known: "
                    f"{sorted(STAGE_LAYOUTS)} (or give stage_blocks explicitly)"
                )
            self.stage_blocks = STAGE_LAYOUTS[self.depth]
        else:
            self.stage_blocks = tuple(int(b) for b in self.stage_blocks)
            if len(self.stage_blocks) != 4:
                raise ConfigurationError(
                    f"stage_blocks needs 4 entries, got {len(self.stage_blocks)}"
                )
        if self.depth in STAGE_LAYOUTS:
            # conv-layer identity for the named variants: 3 per bottleneck
            # plus stem (counted as one) plus the classifier
            expected = 3 * sum(STAGE_LAYOUTS[self.depth]) + 2
            if self.stage_blocks == STAGE_LAYOUTS[self.depth] and expected != self.depth:
                raise ConfigurationError(
                    f"stage layout {self.stage_blocks} gives {expected} layers, "
                    f"not {self.depth}"
                )
        if self.radix < 0:
            raise ConfigurationError(f"radix must be >= 0, got {self.radix}")
        if self.stem_width is None:
            self.stem_width = 32 if self.depth <= 50 else 64
        if self.dropout is None:
            self.dropout = 0.2 if self.depth > 200 else 0.0
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def variant_name(self) -> str:
        return f"{self.radix}s{self.cardinality}x{self.base_width}d"


@dataclass
class BottleneckSpec:
    """Derived shape bookkeeping for one block."""

    in_channels: int
    planes: int
    stride: int
    radix: int
    cardinality: int
    base_width: int
    avg_down: bool
    fast: bool

    @property
    def group_width(self) -> int:
        return (self.planes * self.base_width) // 64 * self.cardinality

    @property
    def out_channels(self) -> int:
        return 4 * self.planes

    @property
    def needs_projection(self) -> bool:
        return self.stride != 1 or self.in_channels != self.out_channels


class Bottleneck(Module):
    """Residual bottleneck, split-attention interior when radix >= 1."""

    expansion = 4

    def __init__(self, spec: BottleneckSpec, rng=None, dtype=np.float64):
        self.spec = spec
        gw = spec.group_width
        if spec.radix >= 1:
            self.splat = SplitAttentionUnit(
                SplatConfig(
                    spec.in_channels, gw, spec.radix, spec.cardinality,
                    stride=spec.stride, fast=spec.fast,
                ),
                rng=rng, dtype=dtype,
            )
        else:
            self.conv1 = Conv2d(spec.in_channels, gw, 1, rng=rng, dtype=dtype)
            self.bn1 = BatchNorm(gw, dtype=dtype)
            self.relu1 = ReLU()
            self.conv2 = Conv2d(gw, gw, 3, stride=spec.stride, padding=1,
                                groups=spec.cardinality, rng=rng, dtype=dtype)
            self.bn2 = BatchNorm(gw, dtype=dtype)
            self.relu2 = ReLU()
        self.conv3 = Conv2d(gw, spec.out_channels, 1, rng=rng, dtype=dtype)
        self.bn3 = BatchNorm(spec.out_channels, dtype=dtype)
        # silence the residual branch at initialization
        self.bn3.gamma.value[...] = 0.0

        if spec.needs_projection:
            self.down_pool = (
                AvgPool2d(2, stride=2) if (spec.avg_down and spec.stride > 1) else None
            )
            conv_stride = 1 if self.down_pool is not None else spec.stride
            self.down_conv = Conv2d(spec.in_channels, spec.out_channels, 1,
                                    stride=conv_stride, rng=rng, dtype=dtype)
            self.down_bn = BatchNorm(spec.out_channels, dtype=dtype)
        else:
            self.down_pool = None
            self.down_conv = None
            self.down_bn = None
        self.relu_out = ReLU()

    def branch_forward(self, x, mode="train", rng=None):
        if self.spec.radix >= 1:
            v = self.splat.forward(x, mode=mode, rng=rng)
        else:
            v = self.relu1.forward(self.bn1.forward(self.conv1.forward(x), mode), mode)
            v = self.relu2.forward(self.bn2.forward(self.conv2.forward(v), mode), mode)
        return self.bn3.forward(self.conv3.forward(v), mode)

    def shortcut_forward(self, x, mode="train"):
        if self.down_conv is None:
            return x
        s = x if self.down_pool is None else self.down_pool.forward(x)
        return self.down_bn.forward(self.down_conv.forward(s), mode)

    def forward(self, x, mode="train", rng=None):
        v = self.branch_forward(x, mode=mode, rng=rng)
        s = self.shortcut_forward(x, mode=mode)
        if v.shape != s.shape:
            raise ConfigurationError(
                f"residual/shortcut shape mismatch: {v.shape} vs {s.shape}"
            )
        return self.relu_out.forward(v + s, mode)

    def backward(self, grad_out):
        g = self.relu_out.backward(grad_out)
        gb = self.bn3.backward(g)
        gb = self.conv3.backward(gb)
        if self.spec.radix >= 1:
            gx = self.splat.backward(gb)
        else:
            gb = self.conv2.backward(self.bn2.backward(self.relu2.backward(gb)))
            gx = self.conv1.backward(self.bn1.backward(self.relu1.backward(gb)))
        if self.down_conv is None:
            return gx + g
        gs = self.down_conv.backward(self.down_bn.backward(g))
        if self.down_pool is not None:
            gs = self.down_pool.backward(gs)
        return gx + gs


class Stage(Module):
    def __init__(self, blocks: list[Bottleneck]):
        self.block = blocks

    def forward(self, x, mode="train", rng=None):
        for b in self.block:
            x = b.forward(x, mode=mode, rng=rng)
        return x

    def backward(self, grad_out):
        for b in reversed(self.block):
            grad_out = b.backward(grad_out)
        return grad_out


class Stem(Module):
    def __init__(self, cfg: NetworkConfig, rng=None, dtype=np.float64):
        sw = cfg.stem_width
        if cfg.deep_stem:
            self.conv1 = Conv2d(cfg.input_channels, sw, 3, stride=2, padding=1,
                                rng=rng, dtype=dtype)
            self.bn1 = BatchNorm(sw, dtype=dtype)
            self.relu1 = ReLU()
            self.conv2 = Conv2d(sw, sw, 3, stride=1, padding=1, rng=rng, dtype=dtype)
            self.bn2 = BatchNorm(sw, dtype=dtype)
            self.relu2 = ReLU()
            self.conv3 = Conv2d(sw, 2 * sw, 3, stride=1, padding=1, rng=rng, dtype=dtype)
            self.bn3 = BatchNorm(2 * sw, dtype=dtype)
            self.relu3 = ReLU()
            self.out_channels = 2 * sw
        else:
            self.conv1 = Conv2d(cfg.input_channels, 64, 7, stride=2, padding=3,
                                rng=rng, dtype=dtype)
            self.bn1 = BatchNorm(64, dtype=dtype)
            self.relu1 = ReLU()
            self.out_channels = 64
        self.deep = cfg.deep_stem
        self.maxpool = MaxPool2d(3, stride=2, padding=1)

    def forward(self, x, mode="train", rng=None):
        x = self.relu1.forward(self.bn1.forward(self.conv1.forward(x), mode), mode)
        if self.deep:
            x = self.relu2.forward(self.bn2.forward(self.conv2.forward(x), mode), mode)
            x = self.relu3.forward(self.bn3.forward(self.conv3.forward(x), mode), mode)
        return self.maxpool.forward(x)

    def backward(self, grad_out):
        g = self.maxpool.backward(grad_out)
        if self.deep:
            g = self.conv3.backward(self.bn3.backward(self.relu3.backward(g)))
            g = self.conv2.backward(self.bn2.backward(self.relu2.backward(g)))
        return self.conv1.backward(self.bn1.backward(self.relu1.backward(g)))


class Network(Module):
    """Stem, four bottleneck stages, pooled classifier head."""

    def __init__(self, cfg: NetworkConfig, rng=None, dtype=np.float64):
        self.cfg = cfg
        self.stem = Stem(cfg, rng=rng, dtype=dtype)
        in_ch = self.stem.out_channels
        stages = []
        for i, n_blocks in enumerate(cfg.stage_blocks):
            planes = cfg.base_planes * (2 ** i)
            stride = 1 if i == 0 else 2
            blocks = []
            for b in range(n_blocks):
                spec = BottleneckSpec(
                    in_channels=in_ch,
                    planes=planes,
                    stride=stride if b == 0 else 1,
                    radix=cfg.radix,
                    cardinality=cfg.cardinality,
                    base_width=cfg.base_width,
                    avg_down=cfg.avg_down,
                    fast=cfg.fast,
                )
                blocks.append(Bottleneck(spec, rng=rng, dtype=dtype))
                in_ch = spec.out_channels
            stages.append(Stage(blocks))
        self.stage1, self.stage2, self.stage3, self.stage4 = stages
        self.gap = GlobalAvgPool()
        self.head_dropout = Dropout(cfg.dropout) if cfg.dropout > 0 else None
        self.fc = Linear(in_ch, cfg.num_classes, bias=True, dtype=dtype)
        if rng is not None:
            self.fc.weight.value[...] = rng.standard_normal(self.fc.weight.shape) * 0.01
        self.feature_channels = in_ch
        self._dropblock_masks: list | None = None
        self.assign_names()

    def stages(self) -> list[Stage]:
        return [self.stage1, self.stage2, self.stage3, self.stage4]

    def forward(self, x, mode="train", rng=None):
        n, c, h, w = x.shape
        if c != self.cfg.input_channels:
            raise ConfigurationError(
                f"expected {self.cfg.input_channels} input channels, got {c}"
            )
        if h < MIN_INPUT_SIZE or w < MIN_INPUT_SIZE:
            raise ConfigurationError(
                f"input {h}x{w} below minimum size {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE} "
                f"required by the stride chain"
            )
        x = self.stem.forward(x, mode=mode, rng=rng)
        self._dropblock_masks = []
        for i, stage in enumerate(self.stages()):
            x = stage.forward(x, mode=mode, rng=rng)
            # structured dropout on the last two stages only; block size is
            # clamped (and kept odd) when the map is smaller than configured
            if i >= 2 and self.cfg.dropblock_prob > 0 and mode == "train":
                eff = min(self.cfg.dropblock_size, x.shape[2], x.shape[3])
                if eff % 2 == 0:
                    eff -= 1
                mask = dropblock_mask(
                    x.shape, eff, self.cfg.dropblock_prob, rng, mode=mode,
                )
                x = x * mask
                self._dropblock_masks.append(mask)
            else:
                self._dropblock_masks.append(None)
        feats = self.gap.forward(x, mode=mode)
        if self.head_dropout is not None:
            feats = self.head_dropout.forward(feats, mode=mode, rng=rng)
        return self.fc.forward(feats, mode=mode)

    def backward(self, grad_logits):
        g = self.fc.backward(grad_logits)
        if self.head_dropout is not None:
            g = self.head_dropout.backward(g)
        g = self.gap.backward(g)
        for i in (3, 2, 1, 0):
            mask = self._dropblock_masks[i] if self._dropblock_masks else None
            if mask is not None:
                g = g * mask
            g = self.stages()[i].backward(g)
        return self.stem.backward(g)

    def shortcut_only_forward(self, x, mode="eval"):
        """Forward with every residual branch bypassed (shortcut chain only).

        With freshly zero-initialized final normalization scales the real
        forward must agree with this one.
        """
        x = self.stem.forward(x, mode=mode)
        for stage in self.stages():
            for block in stage.block:
                x = block.relu_out.forward(block.shortcut_forward(x, mode=mode), mode)
        feats = self.gap.forward(x, mode=mode)
        return self.fc.forward(feats, mode=mode)

    def layer_signature(self) -> list[tuple[str, tuple[int, ...]]]:
        """Structural fingerprint: (path, shape) of every parameter in order."""
        return [(name, tuple(p.value.shape)) for name, p in self.named_parameters()]


def build_network(cfg: NetworkConfig, rng: np.random.Generator,
                  dtype=np.float64) -> Network:
    """Build and initialize a network; parameter names are dotted paths."""
    return Network(cfg, rng=rng, dtype=dtype)
