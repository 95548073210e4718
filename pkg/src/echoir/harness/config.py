"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected; every
key has a default (see ``KEYS``). The effective configuration is written back
out next to the run's outputs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from ..tensor import ConfigError


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    # network
    preset: str = "toy"
    upsampler_kind: str = "EU"
    eu_reference: str = "encoder_echo"
    combine_mode: str = "add"
    window_radius: int = 2
    channel_attention: bool = True
    gdfn: bool = True
    precision: str = "standard"
    # optimisation
    optimizer: str = "SL"
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    steps: int = 500
    batch_size: int = 4
    patch_size: int = 32
    checkpoint_every: int = 100
    # AS-BLO
    schedule_start: float = 0.1
    schedule_decay: float = 0.5
    schedule_every: int = 25
    schedule_floor: float = 1e-4
    kappa: float = 1.0
    inner_steps: int = 50
    inner_lr: float = 1e-2
    outer_lr: float = 3e-4
    feasibility_eps: float = 1e-8
    asblo_swap: bool = False
    # data
    manifest: str = ""
    image_size: int = 32
    train_images: int = 16
    val_images: int = 4
    test_images: int = 8
    degradation: str = "gaussian_noise"
    noise_std: float = 25.0  # in 1/255 units
    rain_density: float = 0.004
    blur_kernel: int = 3
    # run
    seed: int = 0
    output_dir: str = "runs/default"
    deterministic: bool = True

    def validate(self) -> "RunConfig":
        choices = {
            "preset": ("toy", "full"),
            "upsampler_kind": ("EU", "PS", "TC"),
            "eu_reference": ("encoder_echo", "input_image"),
            "combine_mode": ("add", "multiply"),
            "precision": ("wide", "standard"),
            "optimizer": ("SL", "ASBLO"),
            "degradation": ("gaussian_noise", "rain_streaks", "box_blur"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        for key in ("steps", "batch_size", "patch_size", "image_size", "train_images", "test_images",
                    "inner_steps", "checkpoint_every", "window_radius", "blur_kernel"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.patch_size % 8 or self.patch_size > self.image_size and not self.manifest:
            raise ConfigError("patch_size must be a multiple of 8 and fit inside image_size")
        for key in ("lr", "outer_lr", "inner_lr", "schedule_start", "schedule_floor", "feasibility_eps"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        return self

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


KEYS = {f.name: f for f in fields(RunConfig)}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _convert(name: str, text: str):
    typ = KEYS[name].type
    try:
        if typ in ("bool", bool):
            return _bool(text)
        if typ in ("int", int):
            return int(text)
        if typ in ("float", float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc
    return text


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, val)
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    with open(path) as fh:
        return parse_config(fh.read(), os.fspath(path))


def override(cfg: RunConfig, **kw) -> RunConfig:
    for k, v in kw.items():
        if v is not None:
            if k not in KEYS:
                raise ConfigError(f"unknown key {k!r}")
            setattr(cfg, k, v)
    return cfg.validate()
