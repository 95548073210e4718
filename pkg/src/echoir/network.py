"""EchoIR: U-shaped restoration network with Echo-Upsamplers in the decoder."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .attention import GDFN_EXPANSION, MixAttentionConfig, mam
from .nn import Conv2d, Module, Sequential
from .tensor import ConfigError, ShapeError, Tensor
from .upsampler import (
    EchoUpsampler,
    PixelShuffleUpsampler,
    SimpleDownsample,
    TransposedConvUpsampler,
)

UPSAMPLER_KINDS = ("EU", "PS", "TC")
EU_REFERENCES = ("encoder_echo", "input_image")


@dataclass
class NetworkConfig:
    encoder_lengths: list = field(default_factory=lambda: [4, 6, 6])
    encoder_dims: list = field(default_factory=lambda: [48, 96, 192])
    encoder_heads: list = field(default_factory=lambda: [1, 2, 4])
    middle_length: int = 8
    middle_dim: int = 384
    middle_heads: int = 8
    refine_length: int = 4
    refine_heads: int = 1
    gdfn_expansion: float = GDFN_EXPANSION
    upsampler_kind: str = "EU"
    eu_reference: str = "encoder_echo"
    combine_mode: str = "add"
    window_radius: int = 2
    embed_dim: int = 8
    enable_channel_attention: bool = True
    enable_gdfn: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        d = self.encoder_dims
        if len(d) != 3 or len(self.encoder_lengths) != 3 or len(self.encoder_heads) != 3:
            raise ConfigError("encoder needs exactly three levels")
        if d[1] != 2 * d[0] or d[2] != 2 * d[1]:
            raise ConfigError(f"encoder dims must double per level, got {d}")
        if self.middle_dim != 2 * d[2]:
            raise ConfigError(f"middle_dim must be {2 * d[2]}, got {self.middle_dim}")
        if min(self.encoder_lengths) < 1 or self.middle_length < 1 or self.refine_length < 1:
            raise ConfigError("all module lengths must be >= 1")
        if self.upsampler_kind not in UPSAMPLER_KINDS:
            raise ConfigError(f"upsampler_kind must be one of {UPSAMPLER_KINDS}")
        if self.eu_reference not in EU_REFERENCES:
            raise ConfigError(f"eu_reference must be one of {EU_REFERENCES}")

    @classmethod
    def full(cls, **kw) -> "NetworkConfig":
        return cls(**kw)

    @classmethod
    def toy(cls, **kw) -> "NetworkConfig":
        base = dict(encoder_lengths=[1, 1, 1], encoder_dims=[8, 16, 32], middle_length=1,
                    middle_dim=64, refine_length=1)
        base.update(kw)
        return cls(**base)

    def with_(self, **kw) -> "NetworkConfig":
        return replace(self, **kw)


PRESETS = {"toy": NetworkConfig.toy, "full": NetworkConfig.full}


def _area_downsample(img: Tensor, factor: int) -> Tensor:
    c, h, w = img.shape
    x = T.reshape(img, (c, h // factor, factor, w // factor, factor))
    return T.mean(x, axis=(2, 4))


class EchoIR(Module):
    def __init__(self, config: NetworkConfig | None = None, rng=None, dtype=T.WIDE):
        super().__init__()
        cfg = config or NetworkConfig()
        cfg.validate()
        self.config = cfg
        rng = rng if rng is not None else np.random.default_rng(0)
        dims, lens, heads = cfg.encoder_dims, cfg.encoder_lengths, cfg.encoder_heads
        c = dims[0]

        def block_cfg(ch, nh):
            return MixAttentionConfig(ch, nh, cfg.gdfn_expansion, cfg.enable_channel_attention, cfg.enable_gdfn)

        self.shallow = Conv2d(3, c, 3, padding=1, rng=rng, dtype=dtype)
        self.enc = Sequential([mam(block_cfg(dims[i], heads[i]), lens[i], rng, dtype) for i in range(3)])
        self.down = Sequential([SimpleDownsample(dims[i], rng, dtype) for i in range(3)])
        self.middle = mam(block_cfg(cfg.middle_dim, cfg.middle_heads), cfg.middle_length, rng, dtype)
        ups, decs = [], []
        for level in (2, 1, 0):
            cin = 2 * dims[level]
            ref_ch = dims[level] if cfg.eu_reference == "encoder_echo" else 3
            if cfg.upsampler_kind == "EU":
                ups.append(EchoUpsampler(cin, ref_ch, cfg.embed_dim, cfg.window_radius, cfg.combine_mode, rng=rng, dtype=dtype))
            elif cfg.upsampler_kind == "PS":
                ups.append(PixelShuffleUpsampler(cin, rng, dtype))
            else:
                ups.append(TransposedConvUpsampler(cin, rng, dtype))
            decs.append(mam(block_cfg(dims[level], heads[level]), lens[level], rng, dtype))
        self.up = Sequential(ups)
        self.dec = Sequential(decs)
        self.refine = mam(block_cfg(c, cfg.refine_heads), cfg.refine_length, rng, dtype)
        self.recon = Conv2d(c, 3, 3, padding=1, rng=rng, dtype=dtype, init_scale=0.1)
        self.dtype = dtype

    # -- stages -------------------------------------------------------------

    def shallow_extract(self, i_l: Tensor) -> Tensor:
        _, h, w = i_l.shape
        if i_l.shape[0] != 3:
            raise ShapeError(f"expected a 3-channel image, got {i_l.shape}")
        if h % 8 or w % 8:
            raise ShapeError(f"image extents {(h, w)} must be divisible by 8; pad first")
        return self.shallow(i_l)

    def encode(self, f: Tensor):
        echoes = []
        for level in range(3):
            f = self.enc[level](f)
            echoes.append(f)
            f = self.down[level](f)
        return f, echoes

    def decode(self, f_m: Tensor, echoes, i_l: Tensor | None = None, trace: list | None = None) -> Tensor:
        f = f_m
        for stage, level in enumerate((2, 1, 0)):
            ref = echoes[level]
            if self.config.eu_reference == "input_image":
                if i_l is None:
                    raise ValueError("input_image reference needs the input image")
                factor = i_l.shape[1] // (2 * f.shape[1])
                ref = _area_downsample(i_l, factor) if factor > 1 else i_l
            if trace is not None:
                trace.append((level, tuple(ref.shape), tuple(f.shape)))
            if ref.shape[1:] != (2 * f.shape[1], 2 * f.shape[2]):
                raise ShapeError(f"echo {ref.shape} does not match decoder stage input {f.shape}")
            f = self.up[stage](f, ref)
            f = self.dec[stage](f)
        return f

    def forward(self, i_l: Tensor) -> Tensor:
        f = self.shallow_extract(i_l)
        f_e, echoes = self.encode(f)
        f_m = self.middle(f_e)
        f_d = self.decode(f_m, echoes, i_l)
        return self.recon(self.refine(f_d)) + i_l

    # -- parameter groups -------------------------------------------------------

    def upsampler_parameters(self) -> dict:
        return {k: v for k, v in self.named_parameters().items() if k.startswith("up.")}

    def other_parameters(self) -> dict:
        return {k: v for k, v in self.named_parameters().items() if not k.startswith("up.")}


def count_flops(net: EchoIR, h: int, w: int) -> int:
    """Multiply-accumulates of convolutions and matmuls for one h x w forward pass."""
    img = Tensor(np.zeros((3, h, w)), dtype=net.dtype)
    with T.no_grad(), T.count_flops() as box:
        net(img)
    return box[0]


def l1_loss(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target), dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss shapes differ: {pred.shape} vs {target.shape}")
    return T.mean(T.tabs(pred - target))
