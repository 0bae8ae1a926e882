"""The split-attention unit, in both channel layouts.

A unit partitions its internal width ``channels`` into ``cardinality``
cardinal groups and gives each cardinal group ``radix`` splits, so there are
``cardinality * radix`` feature groups in total. Each feature group is
transformed by a 1x1 convolution slice followed by a 3x3 convolution; the
splits of a cardinal group are fused by summation, pooled into per-channel
statistics, pushed through a two-layer bottleneck (grouped by cardinal
group), and the resulting per-split weights recombine the splits into the
unit output.

Two memory layouts implement the same mathematics:

* radix-major (class :class:`SplitAttentionUnit`): feature groups sharing a
  radix index are adjacent, so the whole unit runs as one 1x1 convolution,
  one grouped 3x3 convolution, and two grouped FC layers. This is the
  production path and the only one with a backward pass.

* cardinality-major (:func:`splat_forward_cardinality_major`): feature
  groups of the same cardinal group are adjacent and every per-group
  transform is executed explicitly. Slow and obvious, kept as the reference.

:func:`permute_params` is the bijection between the two parameter orderings;
the forwards agree to double-precision rounding after applying it.

Width rule: each feature group's 1x1 slice has ``split_width =
max(1, channels // (cardinality * radix))`` input-side output channels, so
the unified 1x1 output has ``mid_channels = cardinality * radix *
split_width`` channels (equal to ``channels`` whenever divisibility holds).
This keeps parameters and MACs of a unit in line with a standard residual
block of the same width, which is what the surrounding bottleneck assumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .params import ConfigurationError, Module
from .layers import AvgPool2d, BatchNorm, Conv2d, Linear, ReLU


def _round_up(v: int, mult: int) -> int:
    return ((v + mult - 1) // mult) * mult


def default_attention_inner(channels: int, radix: int, cardinality: int) -> int:
    """Hidden width of the attention bottleneck: quarter of the expanded
    width with a floor of 32 per cardinal group, rounded up to a multiple of
    the cardinality so the grouped FC splits evenly."""
    return _round_up(max(32 * cardinality, (channels * radix) // 4), cardinality)


@dataclass
class SplatConfig:
    """Shape parameters of one split-attention unit."""

    in_channels: int
    channels: int
    radix: int = 2
    cardinality: int = 1
    attention_inner: int | None = None
    stride: int = 1
    fast: bool = False  # downsample before (True) or after (False) the 3x3 conv

    def __post_init__(self):
        if self.radix < 1:
            raise ConfigurationError(f"radix must be >= 1, got {self.radix}")
        if self.cardinality < 1:
            raise ConfigurationError(f"cardinality must be >= 1, got {self.cardinality}")
        if self.in_channels < 1 or self.channels < 1:
            raise ConfigurationError(
                f"channel counts must be positive, got in={self.in_channels} "
                f"channels={self.channels}"
            )
        if self.channels % self.cardinality != 0:
            raise ConfigurationError(
                f"channels {self.channels} not divisible by cardinality {self.cardinality}"
            )
        if self.attention_inner is None:
            self.attention_inner = default_attention_inner(
                self.channels, self.radix, self.cardinality
            )
        if self.attention_inner % self.cardinality != 0:
            raise ConfigurationError(
                f"attention_inner {self.attention_inner} not divisible by "
                f"cardinality {self.cardinality}"
            )

    @property
    def groups(self) -> int:
        """Total feature groups: cardinality * radix."""
        return self.cardinality * self.radix

    @property
    def cardinal_width(self) -> int:
        """Channels per cardinal group in the unit output."""
        return self.channels // self.cardinality

    @property
    def split_width(self) -> int:
        """1x1 output channels per feature group (3x3 input side)."""
        return max(1, self.channels // self.groups)

    @property
    def mid_channels(self) -> int:
        """Width of the unified 1x1 output."""
        return self.groups * self.split_width


# ---------------------------------------------------------------------------
# Elementary split-attention operations (radix-major layout)
# ---------------------------------------------------------------------------


def cardinal_fuse(u: np.ndarray, radix: int, cardinality: int) -> np.ndarray:
    """Sum the radix splits of each cardinal group.

    ``u`` is radix-major [N, C*R, H, W]: channel r*C + k*c + j belongs to
    split r of cardinal group k. Returns [N, C, H, W].
    """
    n, cr, h, w = u.shape
    if cr % radix != 0:
        raise ConfigurationError(f"channels {cr} not divisible by radix {radix}")
    c = cr // radix
    if radix == 1:
        return u
    return u.reshape(n, radix, c, h, w).sum(axis=1)


def cardinal_fuse_backward(grad_out: np.ndarray, radix: int) -> np.ndarray:
    if radix == 1:
        return grad_out
    n, c, h, w = grad_out.shape
    return np.broadcast_to(grad_out[:, None], (n, radix, c, h, w)).reshape(n, radix * c, h, w).copy()


def channel_stats(fused: np.ndarray) -> np.ndarray:
    """Per-channel spatial means, [N, C, H, W] -> [N, C].

    With channels in cardinal-group order this equals pooling each cardinal
    group separately and concatenating the results.
    """
    return ops.global_avg_pool(fused)


def r_softmax(logits: np.ndarray, radix: int) -> np.ndarray:
    """Per-split assignment weights from logits [N, K, R, c].

    Softmax across the radix axis when radix > 1 (weights of each
    (sample, cardinal group, channel) sum to one); an elementwise sigmoid
    gate when radix == 1.
    """
    if logits.ndim != 4 or logits.shape[2] != radix:
        raise ConfigurationError(
            f"expected logits [N, K, R={radix}, c], got {logits.shape}"
        )
    if radix > 1:
        return ops.softmax(logits, axis=2)
    return ops.sigmoid(logits)


def r_softmax_backward(grad_out: np.ndarray, weights: np.ndarray, radix: int) -> np.ndarray:
    if radix > 1:
        return ops.softmax_backward(grad_out, weights, axis=2)
    return ops.sigmoid_backward(grad_out, weights)


def weighted_fuse(u: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Attention-weighted combination of splits.

    u: radix-major [N, K*R*c, H, W]; a: weights [N, K, R, c] broadcast over
    space. Output channel (k, j) is sum over splits r of a[*, k, r, j] *
    u[*, r*K*c + k*c + j].
    """
    n, k, r, c = a.shape
    h, w = u.shape[2], u.shape[3]
    if u.shape[1] != k * r * c:
        raise ConfigurationError(
            f"split tensor has {u.shape[1]} channels, weights imply {k * r * c}"
        )
    ur = u.reshape(n, r, k, c, h, w)
    ar = a.transpose(0, 2, 1, 3)  # [N, R, K, c]
    v = (ur * ar[..., None, None]).sum(axis=1)
    return v.reshape(n, k * c, h, w)


def weighted_fuse_backward(grad_out: np.ndarray, u: np.ndarray, a: np.ndarray):
    n, k, r, c = a.shape
    h, w = u.shape[2], u.shape[3]
    gv = grad_out.reshape(n, 1, k, c, h, w)
    ur = u.reshape(n, r, k, c, h, w)
    ar = a.transpose(0, 2, 1, 3)
    gu = (gv * ar[..., None, None]).reshape(n, r * k * c, h, w)
    ga = (gv * ur).sum(axis=(4, 5)).transpose(0, 2, 1, 3)  # back to [N, K, R, c]
    return gu, ga


# ---------------------------------------------------------------------------
# Radix-major unit (production path, with backward)
# ---------------------------------------------------------------------------


class SplitAttentionUnit(Module):
    """Radix-major split-attention unit: x [N, Cin, H, W] -> [N, C, H', W'].

    Composition: unified 1x1 conv -> BN -> ReLU -> grouped 3x3 conv -> BN ->
    ReLU -> split fusion -> pooled statistics -> grouped FC bottleneck ->
    per-split weights -> weighted fusion. A stride > 1 is realized by a 3x3
    average pool placed before the 3x3 conv (``fast``) or after it.

    The residual shortcut is the enclosing block's business, not this unit's.
    """

    def __init__(self, cfg: SplatConfig, rng=None, dtype=np.float64):
        self.cfg = cfg
        c = cfg
        self.conv_in = Conv2d(c.in_channels, c.mid_channels, 1, rng=rng, dtype=dtype)
        self.bn_in = BatchNorm(c.mid_channels, dtype=dtype)
        self.relu_in = ReLU()
        self.conv_split = Conv2d(
            c.mid_channels, c.channels * c.radix, 3, padding=1,
            groups=c.groups, rng=rng, dtype=dtype,
        )
        self.bn_split = BatchNorm(c.channels * c.radix, dtype=dtype)
        self.relu_split = ReLU()
        self.pool = AvgPool2d(3, stride=c.stride, padding=1) if c.stride > 1 else None
        self.fc1 = Linear(c.channels, c.attention_inner, groups=c.cardinality,
                          bias=False, rng=rng, dtype=dtype)
        self.bn_att = BatchNorm(c.attention_inner, dtype=dtype)
        self.relu_att = ReLU()
        self.fc2 = Linear(c.attention_inner, c.channels * c.radix,
                          groups=c.cardinality, bias=True, rng=rng, dtype=dtype)
        self._u = None
        self._a = None
        self._fused_shape = None
        self.last_attention: np.ndarray | None = None

    def transform(self, x, mode="train"):
        """Per-group transform stack only: x -> radix-major splits [N, C*R, ...]."""
        c = self.cfg
        z = self.relu_in.forward(self.bn_in.forward(self.conv_in.forward(x), mode), mode)
        if self.pool is not None and c.fast:
            z = self.pool.forward(z)
        u = self.relu_split.forward(self.bn_split.forward(self.conv_split.forward(z), mode), mode)
        if self.pool is not None and not c.fast:
            u = self.pool.forward(u)
        return u

    def forward(self, x, mode="train", rng=None):
        c = self.cfg
        u = self.transform(x, mode)
        fused = cardinal_fuse(u, c.radix, c.cardinality)
        self._fused_shape = fused.shape
        s = channel_stats(fused)
        h = self.relu_att.forward(self.bn_att.forward(self.fc1.forward(s), mode), mode)
        logits = self.fc2.forward(h).reshape(
            x.shape[0], c.cardinality, c.radix, c.cardinal_width
        )
        a = r_softmax(logits, c.radix)
        self._u, self._a = u, a
        self.last_attention = a
        return weighted_fuse(u, a)

    def backward(self, grad_out):
        c = self.cfg
        gu, ga = weighted_fuse_backward(grad_out, self._u, self._a)
        glogits = r_softmax_backward(ga, self._a, c.radix)
        gh = self.fc2.backward(glogits.reshape(glogits.shape[0], -1))
        gs = self.fc1.backward(self.bn_att.backward(self.relu_att.backward(gh)))
        gfused = ops.global_avg_pool_backward(gs, self._fused_shape)
        gu = gu + cardinal_fuse_backward(gfused, c.radix)
        if self.pool is not None and not c.fast:
            gu = self.pool.backward(gu)
        gz = self.conv_split.backward(self.bn_split.backward(self.relu_split.backward(gu)))
        if self.pool is not None and c.fast:
            gz = self.pool.backward(gz)
        return self.conv_in.backward(self.bn_in.backward(self.relu_in.backward(gz)))


def splat_forward_radix_major(x, cfg: SplatConfig, params: dict[str, np.ndarray],
                              mode="eval"):
    """Functional radix-major forward from a plain parameter dict."""
    unit = SplitAttentionUnit(cfg)
    unit.load_state_dict(params)
    return unit.forward(x, mode=mode)


def split_transform(x, cfg: SplatConfig, params: dict[str, np.ndarray],
                    mode="eval"):
    """Just the per-group transform stack: [N, Cin, H, W] -> [N, C*R, H', W'].

    Output channel block g*cardinal_width.. holds feature group g in
    radix-major order (g = radix_index * cardinality + cardinal_index).
    """
    unit = SplitAttentionUnit(cfg)
    unit.load_state_dict(params)
    return unit.transform(x, mode)


# ---------------------------------------------------------------------------
# Cardinality-major reference path
# ---------------------------------------------------------------------------


def _bn_slice(x, gamma, beta, mean, var, eps=1e-5):
    inv = 1.0 / np.sqrt(var + eps)
    if x.ndim == 4:
        return (x - mean[None, :, None, None]) * (gamma * inv)[None, :, None, None] \
            + beta[None, :, None, None]
    return (x - mean[None, :]) * (gamma * inv)[None, :] + beta[None, :]


def splat_forward_cardinality_major(x, cfg: SplatConfig, params: dict[str, np.ndarray]):
    """Explicit per-group forward in cardinality-major parameter order.

    Feature group (k, r) lives at block index k * radix + r: all splits of a
    cardinal group are adjacent. Every transform is applied group by group
    and every cardinal group gets its own dense FC pair; nothing is shared
    with the radix-major path except the convolution kernel itself.

    Normalization uses the stored running statistics (eval behaviour), which
    is also what the layout-equivalence check runs.
    """
    c = cfg
    n = x.shape[0]
    k_, r_, cw, sw = c.cardinality, c.radix, c.cardinal_width, c.split_width
    ai_k = c.attention_inner // c.cardinality

    w_in = params["conv_in.weight"]
    w_split = params["conv_split.weight"]
    outputs = []
    for k in range(k_):
        splits = []
        for r in range(r_):
            g = k * r_ + r
            z = ops.conv2d(x, w_in[g * sw : (g + 1) * sw])
            z = _bn_slice(
                z,
                params["bn_in.gamma"][g * sw : (g + 1) * sw],
                params["bn_in.beta"][g * sw : (g + 1) * sw],
                params["bn_in.running_mean"][g * sw : (g + 1) * sw],
                params["bn_in.running_var"][g * sw : (g + 1) * sw],
            )
            z = np.maximum(z, 0.0)
            if c.stride > 1 and c.fast:
                z = ops.avg_pool2d(z, 3, stride=c.stride, padding=1)
            u = ops.conv2d(z, w_split[g * cw : (g + 1) * cw], stride=1, padding=1)
            u = _bn_slice(
                u,
                params["bn_split.gamma"][g * cw : (g + 1) * cw],
                params["bn_split.beta"][g * cw : (g + 1) * cw],
                params["bn_split.running_mean"][g * cw : (g + 1) * cw],
                params["bn_split.running_var"][g * cw : (g + 1) * cw],
            )
            u = np.maximum(u, 0.0)
            if c.stride > 1 and not c.fast:
                u = ops.avg_pool2d(u, 3, stride=c.stride, padding=1)
            splits.append(u)

        fused = np.sum(splits, axis=0)
        s = fused.mean(axis=(2, 3))  # [N, cw]

        h = s @ params["fc1.weight"][k * ai_k : (k + 1) * ai_k].T
        h = _bn_slice(
            h,
            params["bn_att.gamma"][k * ai_k : (k + 1) * ai_k],
            params["bn_att.beta"][k * ai_k : (k + 1) * ai_k],
            params["bn_att.running_mean"][k * ai_k : (k + 1) * ai_k],
            params["bn_att.running_var"][k * ai_k : (k + 1) * ai_k],
        )
        h = np.maximum(h, 0.0)
        rows = slice(k * r_ * cw, (k + 1) * r_ * cw)
        logits = h @ params["fc2.weight"][rows].T + params["fc2.bias"][rows]
        logits = logits.reshape(n, r_, cw)

        if r_ > 1:
            shifted = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            a = e / e.sum(axis=1, keepdims=True)
        else:
            a = 1.0 / (1.0 + np.exp(-logits))

        v = np.zeros_like(splits[0])
        for r in range(r_):
            v = v + splits[r] * a[:, r][:, :, None, None]
        outputs.append(v)

    return np.concatenate(outputs, axis=1)


# ---------------------------------------------------------------------------
# Layout permutation
# ---------------------------------------------------------------------------

RADIX_TO_CARDINALITY = "radix_to_cardinality"
CARDINALITY_TO_RADIX = "cardinality_to_radix"


def _group_perm(cardinality: int, radix: int, block: int, direction: str) -> np.ndarray:
    """Index array reordering feature-group blocks between layouts."""
    idx = np.empty(cardinality * radix * block, dtype=np.intp)
    pos = 0
    if direction == RADIX_TO_CARDINALITY:
        # destination iterates cardinality-major, source block is radix-major
        for k in range(cardinality):
            for r in range(radix):
                src = r * cardinality + k
                idx[pos : pos + block] = np.arange(src * block, (src + 1) * block)
                pos += block
    elif direction == CARDINALITY_TO_RADIX:
        for r in range(radix):
            for k in range(cardinality):
                src = k * radix + r
                idx[pos : pos + block] = np.arange(src * block, (src + 1) * block)
                pos += block
    else:
        raise ConfigurationError(f"unknown permutation direction {direction!r}")
    return idx


def permute_params(params: dict[str, np.ndarray], cfg: SplatConfig,
                   direction: str) -> dict[str, np.ndarray]:
    """Reorder unit parameters between radix-major and cardinality-major.

    Only tensors indexed by feature group move: the 1x1 filters and their
    normalization channels (blocks of ``split_width``) and the 3x3 filters
    and theirs (blocks of ``cardinal_width``). The attention FC tensors are
    cardinal-group-ordered in both layouts and pass through unchanged.
    Applying the two directions in sequence is the identity.
    """
    perm_in = _group_perm(cfg.cardinality, cfg.radix, cfg.split_width, direction)
    perm_split = _group_perm(cfg.cardinality, cfg.radix, cfg.cardinal_width, direction)
    moved = {
        "conv_in.weight": perm_in,
        "bn_in.gamma": perm_in,
        "bn_in.beta": perm_in,
        "bn_in.running_mean": perm_in,
        "bn_in.running_var": perm_in,
        "conv_split.weight": perm_split,
        "bn_split.gamma": perm_split,
        "bn_split.beta": perm_split,
        "bn_split.running_mean": perm_split,
        "bn_split.running_var": perm_split,
    }
    out = {}
    for name, arr in params.items():
        perm = moved.get(name)
        out[name] = arr[perm].copy() if perm is not None else arr.copy()
    return out
