"""Augmentation ops: crop, random edge resize, color jitter, GeomRTK, cutmix.

Every op is a pure function of (sample, config, rng); geometric ops apply one
transform to image (bilinear) and label (nearest) so the pair stays aligned.
Cutmix works on sample pairs and is applied batch-wise by the trainer
(partner = reversed batch order).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .dataset import Sample
from .errors import ConfigError, DataError

PIPELINE_OP_NAMES = ("resize", "crop", "color", "geom_rtk", "hflip", "cutmix")


@dataclass(frozen=True)
class ColorConfig:
    grayscale_prob: float = 0.1
    jitter_strength: float = 0.27


@dataclass(frozen=True)
class GeomRTKConfig:
    enabled: bool = False
    perspective_magnitude: float = 0.1
    hflip_prob: float = 0.5


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: tuple[int, int] = (224, 224)
    resize_scale_range: tuple[float, float] = (0.78, 2.0)
    color: ColorConfig = field(default_factory=ColorConfig)
    geom_rtk: GeomRTKConfig = field(default_factory=GeomRTKConfig)
    cutmix_prob: float = 0.0
    hflip_prob: float = 0.5
    pipeline: tuple[str, ...] = ()

    def validate(self) -> "AugmentConfig":
        lo, hi = self.resize_scale_range
        if not (0 < lo <= hi):
            raise ConfigError(f"bad resize_scale_range {self.resize_scale_range}")
        for name, p in [("cutmix_prob", self.cutmix_prob),
                        ("hflip_prob", self.hflip_prob),
                        ("grayscale_prob", self.color.grayscale_prob),
                        ("geom_rtk.hflip_prob", self.geom_rtk.hflip_prob)]:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if self.color.jitter_strength < 0:
            raise ConfigError("jitter_strength must be >= 0")
        if self.crop_size[0] < 1 or self.crop_size[1] < 1:
            raise ConfigError(f"bad crop_size {self.crop_size}")
        for op in self.pipeline:
            if op not in PIPELINE_OP_NAMES:
                raise ConfigError(f"unknown pipeline op {op!r}")
        return self

    def to_dict(self) -> dict:
        return {
            "crop_size": list(self.crop_size),
            "resize_scale_range": list(self.resize_scale_range),
            "color": {"grayscale_prob": self.color.grayscale_prob,
                      "jitter_strength": self.color.jitter_strength},
            "geom_rtk": {"enabled": self.geom_rtk.enabled,
                         "perspective_magnitude": self.geom_rtk.perspective_magnitude,
                         "hflip_prob": self.geom_rtk.hflip_prob},
            "cutmix_prob": self.cutmix_prob,
            "hflip_prob": self.hflip_prob,
            "pipeline": list(self.pipeline),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        return cls(
            crop_size=tuple(d["crop_size"]),
            resize_scale_range=tuple(d["resize_scale_range"]),
            color=ColorConfig(**d["color"]),
            geom_rtk=GeomRTKConfig(**d["geom_rtk"]),
            cutmix_prob=d["cutmix_prob"],
            hflip_prob=d["hflip_prob"],
            pipeline=tuple(d["pipeline"]),
        ).validate()


def _pad_to(image: np.ndarray, label: np.ndarray, size) -> tuple[np.ndarray, np.ndarray]:
    H, W = label.shape
    ph = max(0, size[0] - H)
    pw = max(0, size[1] - W)
    if ph == 0 and pw == 0:
        return image, label
    pad_img = ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0))
    pad_lab = pad_img[:2]
    return (np.pad(image, pad_img, mode="symmetric"),
            np.pad(label, pad_lab, mode="symmetric"))


def random_crop(sample: Sample, size: tuple[int, int], rng: np.random.Generator) -> Sample:
    """Crop image and label with one shared window; reflect-pad if undersized."""
    image, label = _pad_to(sample.image, sample.label, size)
    H, W = label.shape
    y0 = int(rng.integers(0, H - size[0] + 1))
    x0 = int(rng.integers(0, W - size[1] + 1))
    return Sample(image[y0:y0 + size[0], x0:x0 + size[1]].copy(),
                  label[y0:y0 + size[0], x0:x0 + size[1]].copy(),
                  sample.id)


def random_resize(sample: Sample, scale_range: tuple[float, float],
                  rng: np.random.Generator) -> Sample:
    """Scale both edges by one uniform draw; image bilinear, label nearest."""
    s = float(rng.uniform(scale_range[0], scale_range[1]))
    H, W = sample.label.shape
    nh, nw = max(1, round(H * s)), max(1, round(W * s))
    if (nh, nw) == (H, W):
        return Sample(sample.image.copy(), sample.label.copy(), sample.id)
    image = cv2.resize(sample.image, (nw, nh), interpolation=cv2.INTER_LINEAR)
    label = cv2.resize(sample.label.astype(np.int32), (nw, nh),
                       interpolation=cv2.INTER_NEAREST).astype(np.int64)
    return Sample(image, label, sample.id)


def _shift_hue(image: np.ndarray, fraction: float) -> np.ndarray:
    hsv = cv2.cvtColor(image, cv2.COLOR_RGB2HSV)
    shift = int(round(fraction * 180.0))
    h = (hsv[..., 0].astype(np.int32) + shift) % 180
    hsv[..., 0] = h.astype(np.uint8)
    return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)


def color_augment(sample: Sample, cfg: ColorConfig, rng: np.random.Generator) -> Sample:
    """Brightness/contrast/saturation/hue jitter plus optional grayscale.

    The label is never touched. Hue jitter uses half the strength of the
    other factors.
    """
    image = sample.image
    j = cfg.jitter_strength
    if j > 0:
        img = image.astype(np.float32)
        b = 1.0 + float(rng.uniform(-j, j))
        c = 1.0 + float(rng.uniform(-j, j))
        s = 1.0 + float(rng.uniform(-j, j))
        h = float(rng.uniform(-j / 2.0, j / 2.0))
        img = img * b
        mean = img.mean()
        img = mean + (img - mean) * c
        gray = img @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
        img = gray[..., None] + (img - gray[..., None]) * s
        image = np.clip(img, 0, 255).astype(np.uint8)
        if h != 0.0:
            image = _shift_hue(image, h)
    if cfg.grayscale_prob > 0 and rng.random() < cfg.grayscale_prob:
        gray = (image.astype(np.float32) @
                np.array([0.299, 0.587, 0.114], dtype=np.float32))
        image = np.clip(gray, 0, 255).astype(np.uint8)[..., None].repeat(3, axis=2)
    return Sample(image if image is not sample.image else image.copy(),
                  sample.label.copy(), sample.id)


def hflip(sample: Sample) -> Sample:
    return Sample(sample.image[:, ::-1].copy(), sample.label[:, ::-1].copy(), sample.id)


def random_hflip(sample: Sample, prob: float, rng: np.random.Generator) -> Sample:
    if rng.random() < prob:
        return hflip(sample)
    return Sample(sample.image.copy(), sample.label.copy(), sample.id)


def geom_rtk(sample: Sample, cfg: GeomRTKConfig, rng: np.random.Generator) -> Sample:
    """Bounded random projective warp followed by an optional horizontal flip."""
    image, label = sample.image, sample.label
    H, W = label.shape
    m = cfg.perspective_magnitude
    if m > 0:
        src = np.array([[0, 0], [W - 1, 0], [W - 1, H - 1], [0, H - 1]],
                       dtype=np.float32)
        jitter = np.stack([rng.uniform(-m * W, m * W, size=4),
                           rng.uniform(-m * H, m * H, size=4)], axis=1)
        dst = (src + jitter.astype(np.float32)).astype(np.float32)
        mat = cv2.getPerspectiveTransform(src, dst)
        image = cv2.warpPerspective(image, mat, (W, H),
                                    flags=cv2.INTER_LINEAR,
                                    borderMode=cv2.BORDER_REFLECT_101)
        label = cv2.warpPerspective(label.astype(np.int32), mat, (W, H),
                                    flags=cv2.INTER_NEAREST,
                                    borderMode=cv2.BORDER_REFLECT_101).astype(np.int64)
    else:
        image, label = image.copy(), label.copy()
    if cfg.hflip_prob > 0 and rng.random() < cfg.hflip_prob:
        image, label = image[:, ::-1].copy(), label[:, ::-1].copy()
    return Sample(image, label, sample.id)


def cutmix(a: Sample, b: Sample, prob: float, rng: np.random.Generator) -> Sample:
    """Paste one frame-aspect rectangle of b (image+label jointly) into a.

    With probability 1-prob, a is returned unchanged. The box area follows
    lambda ~ U(0,1): area = (1-lambda)*H*W; the box is placed uniformly among
    positions where it fits, so its area always matches the formula up to the
    integer rounding of the edge lengths.
    """
    if a.label.shape != b.label.shape:
        raise DataError(f"cutmix dims differ: {a.label.shape} vs {b.label.shape}")
    if rng.random() >= prob:
        return a
    lam = float(rng.uniform(0.0, 1.0))
    H, W = a.label.shape
    cut = math.sqrt(1.0 - lam)
    ch, cw = int(H * cut), int(W * cut)
    image, label = a.image.copy(), a.label.copy()
    if ch > 0 and cw > 0:
        y0 = int(rng.integers(0, H - ch + 1))
        x0 = int(rng.integers(0, W - cw + 1))
        image[y0:y0 + ch, x0:x0 + cw] = b.image[y0:y0 + ch, x0:x0 + cw]
        label[y0:y0 + ch, x0:x0 + cw] = b.label[y0:y0 + ch, x0:x0 + cw]
    return Sample(image, label, a.id)


def apply_pipeline(sample: Sample, cfg: AugmentConfig,
                   rng: np.random.Generator) -> Sample:
    """Apply cfg.pipeline in order. Cutmix is pair-wise and skipped here."""
    out = sample
    for op in cfg.pipeline:
        if op == "resize":
            out = random_resize(out, cfg.resize_scale_range, rng)
        elif op == "crop":
            out = random_crop(out, cfg.crop_size, rng)
        elif op == "color":
            out = color_augment(out, cfg.color, rng)
        elif op == "geom_rtk":
            out = geom_rtk(out, cfg.geom_rtk, rng)
        elif op == "hflip":
            out = random_hflip(out, cfg.hflip_prob, rng)
        elif op == "cutmix":
            continue
        else:
            raise ConfigError(f"unknown pipeline op {op!r}")
    return out


def cutmix_batch(samples: list[Sample], prob: float,
                 rng: np.random.Generator) -> list[Sample]:
    """Mix each sample with its reversed-order partner."""
    partners = samples[::-1]
    return [cutmix(s, p, prob, rng) for s, p in zip(samples, partners)]
