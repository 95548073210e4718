"""Synthetic degradations and clean test images."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("gaussian_noise", "rain_streaks", "box_blur")


@dataclass
class DegradationSpec:
    kind: str = "gaussian_noise"
    noise_std: float = 25 / 255
    rain_density: float = 0.004  # streaks per pixel
    rain_length: tuple = (4, 10)
    rain_angle: tuple = (-20.0, 20.0)  # degrees from vertical
    rain_intensity: float = 0.6
    blur_kernel: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"degradation kind must be one of {KINDS}, got {self.kind!r}")
        if self.noise_std < 0 or self.rain_density < 0 or self.rain_intensity < 0:
            raise ValueError("degradation parameters must be non-negative")
        if self.blur_kernel < 1:
            raise ValueError("blur kernel size must be >= 1")

    def describe(self) -> str:
        if self.kind == "gaussian_noise":
            return f"gaussian_noise(std={self.noise_std * 255:g}/255)"
        if self.kind == "box_blur":
            return f"box_blur(k={self.blur_kernel})"
        return f"rain_streaks(density={self.rain_density:g}, length={self.rain_length}, angle={self.rain_angle})"


def gaussian_noise(img: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    if std == 0:
        return img.copy()
    return np.clip(img + rng.normal(0.0, std, size=img.shape), 0.0, 1.0)


def box_blur(img: np.ndarray, k: int) -> np.ndarray:
    """Normalised k x k box filter with edge replication."""
    if k == 1:
        return img.copy()
    lo = (k - 1) // 2
    hi = k - 1 - lo
    padded = np.pad(img, ((0, 0), (lo, hi), (lo, hi)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    return win.mean(axis=(-2, -1))


def rain_streaks(img: np.ndarray, spec: DegradationSpec, rng: np.random.Generator) -> np.ndarray:
    """Alpha-composite bright anti-aliased line segments over the image."""
    _, h, w = img.shape
    count = rng.poisson(spec.rain_density * h * w)
    alpha = np.zeros((h, w))
    for _ in range(count):
        length = rng.uniform(*spec.rain_length)
        ang = math.radians(rng.uniform(*spec.rain_angle))
        y0, x0 = rng.uniform(0, h), rng.uniform(0, w)
        a = spec.rain_intensity * rng.uniform(0.6, 1.0)
        for t in np.linspace(0.0, length, int(length * 2) + 1):
            y = y0 + t * math.cos(ang)
            x = x0 + t * math.sin(ang)
            iy, ix = int(y), int(x)
            if 0 <= iy < h and 0 <= ix < w:
                alpha[iy, ix] = max(alpha[iy, ix], a)
    return img * (1.0 - alpha) + alpha


def degrade(clean: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    clean = np.asarray(clean, dtype=np.float64)
    if spec.kind == "gaussian_noise":
        return gaussian_noise(clean, spec.noise_std, rng)
    if spec.kind == "box_blur":
        return box_blur(clean, spec.blur_kernel)
    return rain_streaks(clean, spec, rng)


def synthetic_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth colour gradient with a few flat rectangles and discs, in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = np.empty((3, size, size))
    for c in range(3):
        a, b, base = rng.uniform(-0.4, 0.4, 3)
        img[c] = 0.5 + base * 0.5 + a * (xx - 0.5) + b * (yy - 0.5)
    for _ in range(rng.integers(2, 5)):
        colour = rng.uniform(0.05, 0.95, 3)
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, size - 4, 2)
            hh, ww = rng.integers(4, max(5, size // 2), 2)
            sel = (slice(y0, y0 + hh), slice(x0, x0 + ww))
            for c in range(3):
                img[c][sel] = colour[c]
        else:
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(size / 8, size / 3)
            disc = (np.mgrid[0:size, 0:size][0] - cy) ** 2 + (np.mgrid[0:size, 0:size][1] - cx) ** 2 < r * r
            for c in range(3):
                img[c][disc] = colour[c]
    return np.clip(img, 0.0, 1.0)
