"""Mix-Attention block: channel-transposed self-attention, channel attention, GDFN."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, LayerNorm2d, Linear, Module, Sequential
from .tensor import ConfigError, Tensor

GDFN_EXPANSION = 2.66
CA_REDUCTION = 4


@dataclass
class MixAttentionConfig:
    channels: int
    heads: int = 1
    gdfn_expansion: float = GDFN_EXPANSION
    enable_channel_attention: bool = True
    enable_gdfn: bool = True

    def __post_init__(self):
        if self.heads < 1 or self.channels % self.heads:
            raise ConfigError(f"channels={self.channels} not divisible by heads={self.heads}")
        if self.gdfn_expansion <= 0:
            raise ConfigError("gdfn_expansion must be positive")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def hidden(self) -> int:
        return math.ceil(self.gdfn_expansion * self.channels)


class SelfAttention(Module):
    """Attention across channels: per head, Alpha = Q K^T / sqrt(d) is (d x d), d = C / heads.

    Q, K, V come from a 1x1 conv that triples the channels followed by a
    depthwise 3x3 conv. Softmax runs over Alpha's last axis and the result is
    Softmax(Alpha) V, re-projected by a 1x1 conv.
    """

    def __init__(self, cfg: MixAttentionConfig, rng, dtype):
        super().__init__()
        c = cfg.channels
        self.heads = cfg.heads
        self.qkv = Conv2d(c, 3 * c, 1, rng=rng, dtype=dtype)
        self.qkv_dw = Conv2d(3 * c, 3 * c, 3, padding=1, groups=3 * c, rng=rng, dtype=dtype)
        self.proj = Conv2d(c, c, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        if c % self.heads:
            raise ConfigError(f"channels={c} not divisible by heads={self.heads}")
        d = c // self.heads
        qkv = self.qkv_dw(self.qkv(x))
        q, k, v = (T.reshape(t, (self.heads, d, h * w)) for t in T.split(qkv, 3, axis=0))
        alpha = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(d))
        attn = T.softmax(alpha, axis=-1)
        out = T.reshape(T.matmul(attn, v), (c, h, w))
        return self.proj(out)


class ChannelAttention(Module):
    """F_ta = F_ts * sigmoid(mlp(avgpool(F_ts))) + F_t."""

    def __init__(self, channels, rng, dtype, reduction=CA_REDUCTION):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = Linear(channels, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, channels, rng=rng, dtype=dtype)

    def gate(self, f_ts: Tensor) -> Tensor:
        pw = T.adaptive_avg_pool(f_ts)
        return T.sigmoid(self.fc2(T.gelu(self.fc1(pw))))

    def forward(self, f_ts: Tensor, f_t: Tensor) -> Tensor:
        if f_ts.shape != f_t.shape:
            raise T.ShapeError(f"channel attention inputs differ: {f_ts.shape} vs {f_t.shape}")
        cw = self.gate(f_ts)
        return f_ts * T.reshape(cw, (cw.shape[0], 1, 1)) + f_t


class GDFN(Module):
    """Gated depthwise-conv feed-forward network.

    Both branches come out of one pointwise projection to 2*hidden channels
    and one depthwise 3x3 conv; the first half is GELU'd and gates the second.
    """

    def __init__(self, channels, expansion, rng, dtype):
        super().__init__()
        hidden = math.ceil(expansion * channels)
        self.hidden = hidden
        self.project_in = Conv2d(channels, 2 * hidden, 1, rng=rng, dtype=dtype)
        self.dwconv = Conv2d(2 * hidden, 2 * hidden, 3, padding=1, groups=2 * hidden, rng=rng, dtype=dtype)
        self.project_out = Conv2d(hidden, channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        gate, value = T.split(self.dwconv(self.project_in(x)), 2, axis=0)
        return self.project_out(T.gelu(gate) * value)


class PointwiseMLP(Module):
    """Two per-pixel linear projections with a GELU in between (GDFN ablation)."""

    def __init__(self, channels, expansion, rng, dtype):
        super().__init__()
        hidden = math.ceil(expansion * channels)
        self.fc1 = Conv2d(channels, hidden, 1, rng=rng, dtype=dtype)
        self.fc2 = Conv2d(hidden, channels, 1, rng=rng, dtype=dtype)

    def forward(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


class MixAttentionBlock(Module):
    def __init__(self, cfg: MixAttentionConfig, rng=None, dtype=T.WIDE):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        c = cfg.channels
        self.norm1 = LayerNorm2d(c, dtype=dtype)
        self.attn = SelfAttention(cfg, rng, dtype)
        if cfg.enable_channel_attention:
            self.ca = ChannelAttention(c, rng, dtype)
        self.norm2 = LayerNorm2d(c, dtype=dtype)
        if cfg.enable_gdfn:
            self.ffn = GDFN(c, cfg.gdfn_expansion, rng, dtype)
        else:
            self.ffn = PointwiseMLP(c, cfg.gdfn_expansion, rng, dtype)

    def forward(self, f_t: Tensor) -> Tensor:
        f_ts = self.attn(self.norm1(f_t))
        if self.cfg.enable_channel_attention:
            f_ta = self.ca(f_ts, f_t)
        else:
            f_ta = f_ts + f_t
        f_tg = self.ffn(self.norm2(f_ta))
        return f_tg + f_ta


def mam(cfg: MixAttentionConfig, length: int, rng=None, dtype=T.WIDE) -> Sequential:
    """A mix-attention module: ``length`` blocks applied in sequence."""
    if length < 1:
        raise ConfigError(f"module length must be >= 1, got {length}")
    rng = rng if rng is not None else np.random.default_rng(0)
    return Sequential([MixAttentionBlock(cfg, rng, dtype) for _ in range(length)])


# functional aliases used by the tests and the grad-check suite

def multi_head_self_attention(f_t: Tensor, block: MixAttentionBlock) -> Tensor:
    return block.attn(f_t)


def channel_attention(f_ts: Tensor, f_t: Tensor, block: MixAttentionBlock) -> Tensor:
    return block.ca(f_ts, f_t)


def gdfn(x: Tensor, block: MixAttentionBlock) -> Tensor:
    return block.ffn(x)
