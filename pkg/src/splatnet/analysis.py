"""Static cost model and micro-benchmark harness.

The cost model walks a built network's structure and produces one row per
layer: parameter count (taken from the live parameter arrays, so every
parameter is counted exactly once) and multiply-accumulate count for a given
input size (from closed-form shape arithmetic, per image).

Conventions, stated once and loudly because the field is inconsistent:

* 1 FLOP = 1 multiply-accumulate. A 3x3 convolution over an HxW output with
  Cout filters of depth Cin/g costs H*W*Cout*(Cin/g)*9 under this convention,
  which makes the classic 50-layer baseline land at about 4.1 G.
* Elementwise work (normalization, activations, additions) and pooling are
  excluded from the headline MAC total and itemized in a secondary
  "aux ops" column instead. Fully-connected layers, including the attention
  bottleneck, do count as MACs.
"""

from __future__ import annotations

import hashlib
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .params import ConfigurationError
from .layers import BatchNorm, Conv2d, Linear
from .network import Bottleneck, BottleneckSpec, Network
from .splat import SplitAttentionUnit


@dataclass
class CostRow:
    path: str
    out_shape: tuple[int, ...]
    params: int
    macs: int
    aux_ops: int = 0


@dataclass
class CostReport:
    rows: list[CostRow]
    config: str
    input_hw: tuple[int, int] | None = None

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_aux(self) -> int:
        return sum(r.aux_ops for r in self.rows)

    def text(self) -> str:
        width = max((len(r.path) for r in self.rows), default=10)
        lines = [f"config: {self.config}"]
        if self.input_hw:
            lines.append(f"input: {self.input_hw[0]}x{self.input_hw[1]}")
        lines.append(f"{'layer':<{width}}  {'out shape':>18}  {'params':>12}  {'macs':>14}  {'aux ops':>12}")
        for r in self.rows:
            shape = "x".join(str(s) for s in r.out_shape)
            lines.append(
                f"{r.path:<{width}}  {shape:>18}  {r.params:>12}  {r.macs:>14}  {r.aux_ops:>12}"
            )
        lines.append(
            f"{'TOTAL':<{width}}  {'':>18}  {self.total_params:>12}  "
            f"{self.total_macs:>14}  {self.total_aux:>12}"
        )
        return "\n".join(lines)

    def machine_lines(self) -> str:
        out = [f"{r.path}\t{r.params}\t{r.macs}" for r in self.rows]
        out.append(f"TOTAL\t{self.total_params}\t{self.total_macs}")
        return "\n".join(out)


def _conv_out_hw(layer: Conv2d, hw):
    h, w = hw
    kh, kw = layer.kernel
    sh, sw = layer.stride
    ph, pw = layer.padding
    return ((h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1)


def _pool_out_hw(kernel, stride, padding, hw):
    from .ops import _pair

    kh, kw = _pair(kernel)
    sh, sw = _pair(stride) if stride is not None else (kh, kw)
    ph, pw = _pair(padding)
    h, w = hw
    return ((h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1)


def _nparams(module) -> int:
    return sum(p.value.size for p in module.parameters())


class _Walker:
    def __init__(self):
        self.rows: list[CostRow] = []

    def add(self, path, out_shape, params, macs, aux=0):
        self.rows.append(CostRow(path, tuple(out_shape), int(params), int(macs), int(aux)))

    def conv(self, path, layer: Conv2d, hw):
        ho, wo = _conv_out_hw(layer, hw)
        kh, kw = layer.kernel
        cin_g = layer.in_channels // layer.groups
        macs = ho * wo * layer.out_channels * cin_g * kh * kw
        self.add(path, (layer.out_channels, ho, wo), _nparams(layer), macs)
        return (ho, wo)

    def bn(self, path, layer: BatchNorm, channels, hw=None):
        elems = channels * (hw[0] * hw[1] if hw else 1)
        shape = (channels,) + (tuple(hw) if hw else ())
        self.add(path, shape, _nparams(layer), 0, aux=2 * elems)

    def act(self, path, channels, hw=None):
        elems = channels * (hw[0] * hw[1] if hw else 1)
        shape = (channels,) + (tuple(hw) if hw else ())
        self.add(path, shape, 0, 0, aux=elems)

    def pool(self, path, kernel, stride, padding, channels, hw):
        out_hw = _pool_out_hw(kernel, stride, padding, hw)
        from .ops import _pair

        kh, kw = _pair(kernel)
        self.add(path, (channels,) + out_hw, 0, 0,
                 aux=out_hw[0] * out_hw[1] * channels * kh * kw)
        return out_hw

    def linear(self, path, layer: Linear, extra_aux=0):
        macs = layer.out_features * (layer.in_features // layer.groups)
        self.add(path, (layer.out_features,), _nparams(layer), macs, aux=extra_aux)

    def splat(self, prefix, unit: SplitAttentionUnit, hw):
        cfg = unit.cfg
        hw = self.conv(f"{prefix}.conv_in", unit.conv_in, hw)
        self.bn(f"{prefix}.bn_in", unit.bn_in, cfg.mid_channels, hw)
        self.act(f"{prefix}.relu_in", cfg.mid_channels, hw)
        if unit.pool is not None and cfg.fast:
            hw = self.pool(f"{prefix}.pool", 3, cfg.stride, 1, cfg.mid_channels, hw)
        hw = self.conv(f"{prefix}.conv_split", unit.conv_split, hw)
        cr = cfg.channels * cfg.radix
        self.bn(f"{prefix}.bn_split", unit.bn_split, cr, hw)
        self.act(f"{prefix}.relu_split", cr, hw)
        if unit.pool is not None and not cfg.fast:
            hw = self.pool(f"{prefix}.pool", 3, cfg.stride, 1, cr, hw)
        # split fusion, pooled statistics, attention, weighted recombination
        fuse_aux = (cfg.radix - 1) * cfg.channels * hw[0] * hw[1] if cfg.radix > 1 else 0
        self.add(f"{prefix}.fuse", (cfg.channels, *hw), 0, 0, aux=fuse_aux)
        self.add(f"{prefix}.stats", (cfg.channels,), 0, 0,
                 aux=cfg.channels * hw[0] * hw[1])
        self.linear(f"{prefix}.fc1", unit.fc1)
        self.bn(f"{prefix}.bn_att", unit.bn_att, cfg.attention_inner)
        self.act(f"{prefix}.relu_att", cfg.attention_inner)
        self.linear(f"{prefix}.fc2", unit.fc2)
        self.add(f"{prefix}.assign", (cfg.cardinality, cfg.radix, cfg.cardinal_width),
                 0, 0, aux=3 * cr)
        self.add(f"{prefix}.weighted_fuse", (cfg.channels, *hw), 0, 0,
                 aux=(2 * cfg.radix - 1) * cfg.channels * hw[0] * hw[1])
        return hw

    def bottleneck(self, prefix, block: Bottleneck, hw):
        spec = block.spec
        in_hw = hw
        if spec.radix >= 1:
            hw = self.splat(f"{prefix}.splat", block.splat, hw)
        else:
            hw = self.conv(f"{prefix}.conv1", block.conv1, hw)
            self.bn(f"{prefix}.bn1", block.bn1, spec.group_width, hw)
            self.act(f"{prefix}.relu1", spec.group_width, hw)
            hw = self.conv(f"{prefix}.conv2", block.conv2, hw)
            self.bn(f"{prefix}.bn2", block.bn2, spec.group_width, hw)
            self.act(f"{prefix}.relu2", spec.group_width, hw)
        hw = self.conv(f"{prefix}.conv3", block.conv3, hw)
        self.bn(f"{prefix}.bn3", block.bn3, spec.out_channels, hw)
        if block.down_conv is not None:
            s_hw = in_hw
            if block.down_pool is not None:
                s_hw = self.pool(f"{prefix}.down_pool", 2, 2, 0, spec.in_channels, s_hw)
            s_hw = self.conv(f"{prefix}.down_conv", block.down_conv, s_hw)
            self.bn(f"{prefix}.down_bn", block.down_bn, spec.out_channels, s_hw)
        self.add(f"{prefix}.add_relu", (spec.out_channels, *hw), 0, 0,
                 aux=2 * spec.out_channels * hw[0] * hw[1])
        return hw

    def stem(self, stem, hw):
        hw = self.conv("stem.conv1", stem.conv1, hw)
        ch = stem.conv1.out_channels
        self.bn("stem.bn1", stem.bn1, ch, hw)
        self.act("stem.relu1", ch, hw)
        if stem.deep:
            hw = self.conv("stem.conv2", stem.conv2, hw)
            self.bn("stem.bn2", stem.bn2, stem.conv2.out_channels, hw)
            self.act("stem.relu2", stem.conv2.out_channels, hw)
            hw = self.conv("stem.conv3", stem.conv3, hw)
            self.bn("stem.bn3", stem.bn3, stem.conv3.out_channels, hw)
            self.act("stem.relu3", stem.conv3.out_channels, hw)
            ch = stem.conv3.out_channels
        hw = self.pool("stem.maxpool", 3, 2, 1, ch, hw)
        return hw


def cost_report(network: Network, input_hw: tuple[int, int] = (224, 224)) -> CostReport:
    """Per-layer parameter and MAC accounting for one input image."""
    walker = _Walker()
    hw = walker.stem(network.stem, input_hw)
    for i, stage in enumerate(network.stages(), start=1):
        for b, block in enumerate(stage.block):
            hw = walker.bottleneck(f"stage{i}.block{b}", block, hw)
    walker.add("gap", (network.feature_channels,), 0, 0,
               aux=network.feature_channels * hw[0] * hw[1])
    walker.linear("fc", network.fc, extra_aux=network.fc.out_features)
    cfg = network.cfg
    echo = (
        f"depth={cfg.depth} {cfg.variant_name} stage_blocks={cfg.stage_blocks} "
        f"deep_stem={cfg.deep_stem} stem_width={cfg.stem_width} "
        f"avg_down={cfg.avg_down} fast={cfg.fast} classes={cfg.num_classes}"
    )
    return CostReport(walker.rows, echo, input_hw)


def count_params(network: Network) -> CostReport:
    """Parameter accounting only (input-size independent)."""
    report = cost_report(network, (224, 224))
    # ground truth cross-check: every parameter counted exactly once
    direct = sum(p.value.size for p in network.parameters())
    if direct != report.total_params:
        raise AssertionError(
            f"cost walk saw {report.total_params} params, network holds {direct}"
        )
    return report


def count_flops(network: Network, input_hw: tuple[int, int] = (224, 224)) -> CostReport:
    """MAC accounting for the given input size (per image)."""
    return cost_report(network, input_hw)


# ---------------------------------------------------------------------------
# Block cost parity
# ---------------------------------------------------------------------------


@dataclass
class ParityReport:
    splat_params: int
    standard_params: int
    splat_macs: int
    standard_macs: int
    attention_params: int
    attention_macs: int

    @property
    def param_ratio(self) -> float:
        return self.splat_params / self.standard_params

    @property
    def mac_ratio(self) -> float:
        return self.splat_macs / self.standard_macs

    @property
    def conv_param_ratio(self) -> float:
        """Ratio with the attention bottleneck excluded from the splat side."""
        return (self.splat_params - self.attention_params) / self.standard_params

    @property
    def conv_mac_ratio(self) -> float:
        return (self.splat_macs - self.attention_macs) / self.standard_macs

    def text(self) -> str:
        return (
            f"params: splat {self.splat_params} / standard {self.standard_params} "
            f"= {self.param_ratio:.4f} (attention excluded: {self.conv_param_ratio:.4f})\n"
            f"macs:   splat {self.splat_macs} / standard {self.standard_macs} "
            f"= {self.mac_ratio:.4f} (attention excluded: {self.conv_mac_ratio:.4f})"
        )


def _block_rows(spec: BottleneckSpec, input_hw) -> list[CostRow]:
    block = Bottleneck(spec)
    walker = _Walker()
    walker.bottleneck("block", block, input_hw)
    return walker.rows


_ATTENTION_PARTS = (".fc1", ".bn_att", ".relu_att", ".fc2")


def block_cost_parity(splat_spec: BottleneckSpec, standard_spec: BottleneckSpec,
                      input_hw: tuple[int, int] = (56, 56)) -> ParityReport:
    """Compare a split-attention bottleneck against a standard one."""
    if splat_spec.radix < 1:
        raise ConfigurationError("splat_spec must have radix >= 1")
    if standard_spec.radix != 0:
        raise ConfigurationError("standard_spec must have radix == 0")
    splat_rows = _block_rows(splat_spec, input_hw)
    std_rows = _block_rows(standard_spec, input_hw)
    att_params = sum(r.params for r in splat_rows if r.path.endswith(_ATTENTION_PARTS))
    att_macs = sum(r.macs for r in splat_rows if r.path.endswith(_ATTENTION_PARTS))
    return ParityReport(
        splat_params=sum(r.params for r in splat_rows),
        standard_params=sum(r.params for r in std_rows),
        splat_macs=sum(r.macs for r in splat_rows),
        standard_macs=sum(r.macs for r in std_rows),
        attention_params=att_params,
        attention_macs=att_macs,
    )


# ---------------------------------------------------------------------------
# Reference variants from the published complexity table
# ---------------------------------------------------------------------------


@dataclass
class ReferenceVariant:
    label: str
    params: float
    gmacs: float | None
    param_tol: float
    mac_tol: float
    match: dict

    def matches(self, cfg) -> bool:
        return all(getattr(cfg, k) == v for k, v in self.match.items())


REFERENCE_VARIANTS = [
    ReferenceVariant(
        "ResNet-50 (classic stem)", 25.5e6, 4.14e9, 0.01, 0.03,
        dict(depth=50, radix=0, cardinality=1, base_width=64,
             deep_stem=False, avg_down=False),
    ),
    ReferenceVariant(
        "ResNet-D-50", 25.6e6, 4.34e9, 0.01, 0.03,
        dict(depth=50, radix=0, cardinality=1, base_width=64,
             deep_stem=True, avg_down=True),
    ),
    ReferenceVariant(
        "ResNeSt-50-fast 2s8x14d", 27.5e6, 4.34e9, 0.02, 0.03,
        dict(depth=50, radix=2, cardinality=8, base_width=14,
             deep_stem=True, avg_down=True, fast=True),
    ),
    # the published 27.5M / 4.34G row actually matches this variant; the
    # 2s8x14d attribution above is kept for comparison and reports MISMATCH
    ReferenceVariant(
        "ResNeSt-50-fast 2s1x64d", 27.5e6, 4.34e9, 0.02, 0.03,
        dict(depth=50, radix=2, cardinality=1, base_width=64,
             deep_stem=True, avg_down=True, fast=True),
    ),
]


def reference_comparison(cfg, total_params: int, total_macs: int) -> str | None:
    """One-line comparison when the config matches a known reference variant."""
    for ref in REFERENCE_VARIANTS:
        if ref.matches(cfg):
            p_dev = total_params / ref.params - 1.0
            line = (
                f"reference {ref.label}: params {ref.params / 1e6:.1f}M "
                f"(ours {total_params / 1e6:.3f}M, {p_dev:+.2%}, tol ±{ref.param_tol:.0%}) "
                f"{'MATCH' if abs(p_dev) <= ref.param_tol else 'MISMATCH'}"
            )
            if ref.gmacs is not None:
                m_dev = total_macs / ref.gmacs - 1.0
                line += (
                    f"; gmacs {ref.gmacs / 1e9:.2f} (ours {total_macs / 1e9:.3f}, "
                    f"{m_dev:+.2%}, tol ±{ref.mac_tol:.0%}) "
                    f"{'MATCH' if abs(m_dev) <= ref.mac_tol else 'MISMATCH'}"
                )
            return line
    return None


# ---------------------------------------------------------------------------
# Micro-benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchResult:
    batch_shape: tuple[int, ...]
    reps: int
    warmup: int
    times_s: list[float] = field(default_factory=list)
    logits_sha256: str = ""

    @property
    def min_s(self) -> float:
        return min(self.times_s)

    @property
    def median_s(self) -> float:
        return statistics.median(self.times_s)

    @property
    def mean_s(self) -> float:
        return statistics.fmean(self.times_s)

    @property
    def per_image_ms(self) -> float:
        return 1000.0 * self.median_s / self.batch_shape[0]

    def text(self) -> str:
        return (
            f"batch {self.batch_shape}, reps {self.reps} (warmup {self.warmup}): "
            f"min {self.min_s * 1e3:.2f} ms, median {self.median_s * 1e3:.2f} ms, "
            f"mean {self.mean_s * 1e3:.2f} ms, {self.per_image_ms:.2f} ms/image "
            f"(wall clock, machine dependent)\n"
            f"logits sha256 {self.logits_sha256}"
        )


def bench_forward(network, batch_shape, reps: int = 30, warmup: int = 5,
                  seed: int = 0) -> BenchResult:
    """Time eval-mode forwards on a fixed seeded batch.

    All repetitions must produce identical logits (the forward is
    deterministic); the shared hash is reported so separate runs can be
    compared.
    """
    if reps < 1:
        raise ConfigurationError("bench needs at least one repetition")
    from .params import make_rng

    rng = make_rng(seed)
    dtype = network.fc.weight.value.dtype
    x = rng.standard_normal(batch_shape).astype(dtype)
    result = BenchResult(tuple(batch_shape), reps, warmup)
    reference = None
    for _ in range(warmup):
        network.forward(x, mode="eval")
    for _ in range(reps):
        t0 = time.perf_counter()
        logits = network.forward(x, mode="eval")
        result.times_s.append(time.perf_counter() - t0)
        if reference is None:
            reference = logits
        elif not np.array_equal(reference, logits):
            raise AssertionError("non-deterministic forward: logits differ between reps")
    result.logits_sha256 = hashlib.sha256(np.ascontiguousarray(reference).tobytes()).hexdigest()
    return result
