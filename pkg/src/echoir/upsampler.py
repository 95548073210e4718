"""Echo-Upsampler: learnable joint-bilateral 2x upsampling guided by an encoder feature map.

For every high-res pixel p the output is a normalised weighted average of the
low-res input over a (2R+1)^2 window Omega of low-res pixels q:

    W(p, q)  = f(p, q) (+ or *) g(p, q)
    F_up[p]  = sum_q F_down[q] W(p, q) / sum_q W(p, q)

with a Gaussian spatial kernel ``f`` measured in low-res units between the
fractional centre p/2 and q, and a Gaussian range kernel ``g`` comparing MLP
embeddings of the guide at p and at 2q. Windows are anchored at floor(p/2) and
clipped at the border; clipped members simply drop out of both sums.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import tensor as T
from .nn import Conv2d, ConvTranspose2d, Module, pixel_shuffle
from .tensor import ConfigError, ShapeError, Tensor

COMBINE_MODES = ("add", "multiply")


def spatial_kernel(p, p_prime, sigma_spatial: float) -> float:
    d2 = sum((a - b) ** 2 for a, b in zip(p, p_prime))
    return math.exp(-d2 / (2.0 * sigma_spatial ** 2))


def range_kernel(embedding: np.ndarray, p, p_prime, sigma_range: float) -> float:
    """Gaussian on embedding distance; ``embedding`` is the E x H x W guide embedding.

    ``p`` is a high-res pixel and ``p_prime`` a low-res one (compared at 2 p').
    """
    a = embedding[:, p[0], p[1]]
    b = embedding[:, 2 * p_prime[0], 2 * p_prime[1]]
    return math.exp(-float(((a - b) ** 2).sum()) / (2.0 * sigma_range ** 2))


@lru_cache(maxsize=64)
def _geometry(h: int, w: int, radius: int):
    """Window members for every high-res pixel of a (2h, 2w) output.

    Returns (rows, cols, mask, dist2), each of shape (K, 2h, 2w).
    """
    H, W = 2 * h, 2 * w
    ii = np.arange(H)[:, None]
    jj = np.arange(W)[None, :]
    offs = [(di, dj) for di in range(-radius, radius + 1) for dj in range(-radius, radius + 1)]
    rows, cols, mask, dist2 = [], [], [], []
    for di, dj in offs:
        r = np.broadcast_to(ii // 2 + di, (H, W))
        c = np.broadcast_to(jj // 2 + dj, (H, W))
        valid = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        rows.append(np.clip(r, 0, h - 1))
        cols.append(np.clip(c, 0, w - 1))
        mask.append(valid)
        dist2.append((ii / 2.0 - r) ** 2 + (jj / 2.0 - c) ** 2)
    out = tuple(np.stack(a) for a in (rows, cols, mask, dist2))
    for a in out:
        a.setflags(write=False)
    return out


class EchoUpsampler(Module):
    """Learnable JBU: C x h x w (+ C' x 2h x 2w guide) -> C/2 x 2h x 2w.

    sigma_spatial and sigma_range are stored as logs. The range MLP is two 1x1
    convs (C' -> C' -> E) with a GELU between. Set ``reduce=False`` to keep
    the channel count (used by the ``upsample`` CLI on plain images).
    """

    def __init__(self, channels, ref_channels, embed=8, radius=2, combine="add", reduce=True,
                 sigma_spatial=1.0, sigma_range=1.0, rng=None, dtype=T.WIDE):
        super().__init__()
        if radius < 1:
            raise ConfigError(f"window radius must be >= 1, got {radius}")
        if embed < 1:
            raise ConfigError(f"embedding width must be >= 1, got {embed}")
        if combine not in COMBINE_MODES:
            raise ConfigError(f"combine mode must be one of {COMBINE_MODES}, got {combine!r}")
        if sigma_spatial <= 0 or sigma_range <= 0:
            raise ConfigError("sigmas must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.radius, self.combine, self.embed = radius, combine, embed
        self.log_sigma_spatial = Tensor(np.array([math.log(sigma_spatial)], dtype=dtype), requires_grad=True)
        self.log_sigma_range = Tensor(np.array([math.log(sigma_range)], dtype=dtype), requires_grad=True)
        self.mlp1 = Conv2d(ref_channels, ref_channels, 1, rng=rng, dtype=dtype)
        self.mlp2 = Conv2d(ref_channels, embed, 1, rng=rng, dtype=dtype)
        if reduce:
            if channels % 2:
                raise ConfigError(f"channel reduction needs an even channel count, got {channels}")
            self.reduce = Conv2d(channels, channels // 2, 1, rng=rng, dtype=dtype)
        else:
            self.reduce = None

    @property
    def sigma_spatial(self) -> float:
        return float(np.exp(self.log_sigma_spatial.data[0]))

    @property
    def sigma_range(self) -> float:
        return float(np.exp(self.log_sigma_range.data[0]))

    def embedding(self, f_ref: Tensor) -> Tensor:
        return self.mlp2(T.gelu(self.mlp1(f_ref)))

    def weights(self, f_ref: Tensor, h: int, w: int) -> Tensor:
        """Unnormalised window weights, shape (K, 2h, 2w); clipped members are 0."""
        rows, cols, mask, dist2 = _geometry(h, w, self.radius)
        dtype = f_ref.dtype
        emb = self.embedding(f_ref)
        e = emb.shape[0]
        emb_q = emb[:, 2 * rows, 2 * cols]  # (E, K, H, W)
        diff = emb_q - T.reshape(emb, (e, 1) + emb.shape[1:])
        d_range = T.tsum(T.square(diff), axis=0)
        inv_s = T.exp(self.log_sigma_spatial * -2.0) * -0.5  # -1 / (2 sigma^2)
        inv_r = T.exp(self.log_sigma_range * -2.0) * -0.5
        f = T.exp(Tensor(dist2, dtype=dtype) * inv_s)
        g = T.exp(d_range * inv_r)
        wgt = f + g if self.combine == "add" else f * g
        return wgt * Tensor(mask, dtype=dtype)

    def aggregate(self, f_down: Tensor, f_ref: Tensor) -> Tensor:
        """Bilateral aggregation before the channel reduction: C x 2h x 2w."""
        c, h, w = f_down.shape
        if f_ref.ndim != 3 or f_ref.shape[1:] != (2 * h, 2 * w):
            raise ShapeError(f"guide extents {f_ref.shape[1:]} must double input extents {(h, w)}")
        rows, cols, _, _ = _geometry(h, w, self.radius)
        wgt = self.weights(f_ref, h, w)
        den = T.tsum(wgt, axis=0)
        assert float(den.data.min()) > 1e-12, "bilateral weight sum vanished"
        num = T.tsum(f_down[:, rows, cols] * wgt, axis=1)
        return num / den

    def forward(self, f_down: Tensor, f_ref: Tensor) -> Tensor:
        up = self.aggregate(f_down, f_ref)
        return self.reduce(up) if self.reduce is not None else up


def echo_upsample(f_down: Tensor, f_ref: Tensor, params: EchoUpsampler) -> Tensor:
    return params(f_down, f_ref)


def jbu_oracle(f_down: np.ndarray, f_ref: np.ndarray, params: EchoUpsampler, reduce: bool = True) -> np.ndarray:
    """Per-pixel, per-window-member loop evaluation of the Echo-Upsampler.

    Shares no code with the vectorised path beyond reading parameter values.
    """
    f_down = np.asarray(f_down, dtype=np.float64)
    f_ref = np.asarray(f_ref, dtype=np.float64)
    c, h, w = f_down.shape
    cr, H, W = f_ref.shape
    if (H, W) != (2 * h, 2 * w):
        raise ShapeError(f"guide extents {(H, W)} must double input extents {(h, w)}")
    w1 = params.mlp1.weight.data[:, :, 0, 0].astype(np.float64)
    b1 = params.mlp1.bias.data.astype(np.float64)
    w2 = params.mlp2.weight.data[:, :, 0, 0].astype(np.float64)
    b2 = params.mlp2.bias.data.astype(np.float64)

    def gelu(x):
        return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))

    emb = np.zeros((w2.shape[0], H, W))
    for i in range(H):
        for j in range(W):
            emb[:, i, j] = w2 @ gelu(w1 @ f_ref[:, i, j] + b1) + b2

    ss = math.exp(float(params.log_sigma_spatial.data[0]))
    sr = math.exp(float(params.log_sigma_range.data[0]))
    R = params.radius
    out = np.zeros((c, H, W))
    for i in range(H):
        for j in range(W):
            acc = np.zeros(c)
            total = 0.0
            ci, cj = i // 2, j // 2
            for qi in range(ci - R, ci + R + 1):
                for qj in range(cj - R, cj + R + 1):
                    if not (0 <= qi < h and 0 <= qj < w):
                        continue
                    fs = spatial_kernel((i / 2.0, j / 2.0), (qi, qj), ss)
                    gr = range_kernel(emb, (i, j), (qi, qj), sr)
                    wt = fs + gr if params.combine == "add" else fs * gr
                    acc += wt * f_down[:, qi, qj]
                    total += wt
            out[:, i, j] = acc / total
    if not reduce or params.reduce is None:
        return out
    wr = params.reduce.weight.data[:, :, 0, 0].astype(np.float64)
    br = params.reduce.bias.data.astype(np.float64)
    res = np.zeros((wr.shape[0], H, W))
    for i in range(H):
        for j in range(W):
            res[:, i, j] = wr @ out[:, i, j] + br
    return res


class SimpleDownsample(Module):
    """Strided 3x3 conv: C x H x W -> 2C x H/2 x W/2."""

    def __init__(self, channels, rng=None, dtype=T.WIDE):
        super().__init__()
        self.conv = Conv2d(channels, 2 * channels, 3, stride=2, padding=1, rng=rng, dtype=dtype)

    def forward(self, f: Tensor) -> Tensor:
        _, h, w = f.shape
        if h % 2 or w % 2:
            raise ShapeError(f"downsampling needs even extents, got {(h, w)}; pad the input first")
        return self.conv(f)


def simple_downsample(f: Tensor, params: SimpleDownsample) -> Tensor:
    return params(f)


class PixelShuffleUpsampler(Module):
    """Ablation: 1x1 conv C -> 2C then pixel shuffle to C/2 x 2h x 2w. Ignores the guide."""

    def __init__(self, channels, rng=None, dtype=T.WIDE):
        super().__init__()
        self.conv = Conv2d(channels, 2 * channels, 1, rng=rng, dtype=dtype)

    def forward(self, f_down, f_ref=None):
        return pixel_shuffle(self.conv(f_down), 2)


class TransposedConvUpsampler(Module):
    """Ablation: stride-2 transposed conv C -> C/2. Ignores the guide."""

    def __init__(self, channels, rng=None, dtype=T.WIDE):
        super().__init__()
        self.conv = ConvTranspose2d(channels, channels // 2, 2, rng=rng, dtype=dtype)

    def forward(self, f_down, f_ref=None):
        return self.conv(f_down)
