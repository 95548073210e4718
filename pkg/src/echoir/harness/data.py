"""Dataset manifests and seeded synthetic datasets.

A manifest is a CSV with header ``clean,degraded,split[,degradation]``; paths
are relative to the manifest's directory and ``split`` is one of
train / val / test.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from ..tensor import ConfigError
from .config import RunConfig
from .degrade import DegradationSpec, degrade, synthetic_image
from .imageio import load_image

SPLITS = ("train", "val", "test")


@dataclass
class Pair:
    name: str
    clean: np.ndarray
    degraded: np.ndarray


@dataclass
class ManifestEntry:
    clean: str
    degraded: str
    split: str
    degradation: str = ""


def read_manifest(path) -> list:
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"clean", "degraded", "split"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: manifest header must contain clean,degraded,split")
        for lineno, row in enumerate(reader, 2):
            split = row["split"].strip()
            if split not in SPLITS:
                raise ConfigError(f"{path}:{lineno}: unknown split {split!r}")
            clean = os.path.join(base, row["clean"].strip())
            deg = os.path.join(base, row["degraded"].strip())
            for p in (clean, deg):
                if not os.path.isfile(p):
                    raise FileNotFoundError(f"{path}:{lineno}: missing file {p}")
            entries.append(ManifestEntry(clean, deg, split, (row.get("degradation") or "").strip()))
    _check_disjoint(entries)
    return entries


def _identity(p):
    st = os.stat(p)
    return (st.st_dev, st.st_ino)


def _check_disjoint(entries) -> None:
    seen = {s: set() for s in SPLITS}
    for e in entries:
        seen[e.split].update({_identity(e.clean), _identity(e.degraded)})
    if seen["train"] & seen["val"]:
        raise ConfigError("manifest train and val splits share files")


def load_split(entries, split: str) -> list:
    out = []
    for e in entries:
        if e.split == split:
            clean, deg = load_image(e.clean), load_image(e.degraded)
            if clean.shape != deg.shape:
                raise ConfigError(f"{e.clean} and {e.degraded} differ in size")
            out.append(Pair(os.path.basename(e.degraded), clean, deg))
    return out


def degradation_spec(cfg: RunConfig, seed: int) -> DegradationSpec:
    return DegradationSpec(kind=cfg.degradation, noise_std=cfg.noise_std / 255.0,
                           rain_density=cfg.rain_density, blur_kernel=cfg.blur_kernel, seed=seed)


def synthetic_split(cfg: RunConfig, split: str) -> list:
    """Seeded clean/degraded pairs; each split draws from its own seed stream."""
    count = {"train": cfg.train_images, "val": cfg.val_images, "test": cfg.test_images}[split]
    ss = np.random.SeedSequence([cfg.seed, SPLITS.index(split)])
    out = []
    for i, child in enumerate(ss.spawn(count)):
        img_seed, noise_seed = child.generate_state(2)
        clean = synthetic_image(cfg.image_size, np.random.default_rng(img_seed))
        deg = degrade(clean, degradation_spec(cfg, int(noise_seed)))
        out.append(Pair(f"{split}_{i:03d}", clean, deg))
    return out


def dataset(cfg: RunConfig, split: str) -> list:
    if cfg.manifest:
        return load_split(read_manifest(cfg.manifest), split)
    return synthetic_split(cfg, split)


def random_crop(pair: Pair, size: int, rng: np.random.Generator) -> tuple:
    _, h, w = pair.clean.shape
    if h < size or w < size:
        raise ConfigError(f"image {pair.name} ({h}x{w}) smaller than patch {size}")
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    sl = (slice(None), slice(y, y + size), slice(x, x + size))
    return pair.degraded[sl], pair.clean[sl]


def pad_to_multiple(img: np.ndarray, m: int = 8) -> tuple:
    """Reflect-pad H and W up to a multiple of m; returns (padded, (h, w))."""
    _, h, w = img.shape
    ph, pw = (-h) % m, (-w) % m
    if ph == 0 and pw == 0:
        return img, (h, w)
    return np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect" if min(h, w) > max(ph, pw) else "edge"), (h, w)
