"""Prediction strategies: single, flipped, multiscale+flipped voting ensembles.

Hard voting counts one per-pixel vote per member and breaks ties toward the
lowest class id; soft voting averages softmax probabilities. Score maps (not
hard labels) travel back from non-native scales via bilinear resizing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch
from PIL import Image

from .dataset import ClassTaxonomy, Sample, encode_color_mask
from .errors import ConfigError
from .metrics import ConfusionMatrix, MetricReport, miou
from .models import SegModel
from .trainer import RunRecord, load_model_from_checkpoint

STRATEGIES = ("single", "flipped", "multiscale_flipped")


@dataclass(frozen=True)
class EnsembleConfig:
    strategy: str = "single"
    native: tuple[int, int] = (288, 352)
    scales: tuple[tuple[int, int], ...] = ()
    vote_mode: str = "hard"

    def validate(self) -> "EnsembleConfig":
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.vote_mode not in ("hard", "soft"):
            raise ConfigError(f"unknown vote_mode {self.vote_mode!r}")
        if len(self.native) != 2:
            raise ConfigError("native resolution must be (H, W)")
        if self.strategy == "multiscale_flipped" and not self.scales:
            raise ConfigError("multiscale strategy needs a non-empty scale list")
        return self

    def member_scales(self) -> tuple[tuple[int, int], ...]:
        scales = [tuple(s) for s in self.scales]
        if tuple(self.native) not in scales:
            scales.append(tuple(self.native))
        return tuple(scales)

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "native": list(self.native),
                "scales": [list(s) for s in self.scales],
                "vote_mode": self.vote_mode}

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        return cls(
            strategy=d["strategy"],
            native=tuple(d["native"]),
            scales=tuple(tuple(s) for s in d["scales"]),
            vote_mode=d["vote_mode"],
        ).validate()


def _image_to_tensor(image: np.ndarray) -> torch.Tensor:
    x = torch.from_numpy(image.astype(np.float32) / 255.0)
    return x.permute(2, 0, 1).unsqueeze(0).contiguous()


def predict_logits(model: SegModel, image: np.ndarray) -> np.ndarray:
    """(C, H, W) float score maps for one HxWx3 uint8 image."""
    model.eval()
    with torch.inference_mode():
        out = model(_image_to_tensor(image))
    return out[0].numpy()


def predict(model: SegModel, image: np.ndarray) -> np.ndarray:
    """Per-pixel argmax; ties resolve to the lowest class id."""
    return np.argmax(predict_logits(model, image), axis=0).astype(np.int64)


def hard_vote(label_maps: list[np.ndarray], num_classes: int) -> np.ndarray:
    """Per-pixel majority; ties (on counts) resolve to the lowest class id."""
    counts = np.zeros((num_classes,) + label_maps[0].shape, dtype=np.int32)
    for m in label_maps:
        for c in range(num_classes):
            counts[c] += m == c
    return np.argmax(counts, axis=0).astype(np.int64)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def predict_flipped(model: SegModel, image: np.ndarray,
                    vote_mode: str = "hard") -> np.ndarray:
    """Combine the plain prediction with the unflipped prediction of the flip."""
    scores = predict_logits(model, image)
    scores_f = predict_logits(model, image[:, ::-1].copy())[:, :, ::-1]
    C = scores.shape[0]
    if vote_mode == "hard":
        members = [np.argmax(scores, axis=0), np.argmax(scores_f, axis=0)]
        return hard_vote(members, C)
    probs = (_softmax(scores) + _softmax(scores_f)) / 2.0
    return np.argmax(probs, axis=0).astype(np.int64)


def _resize_scores(scores: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    """Bilinear per-class resize of (C, h, w) score maps to (C, H, W)."""
    if scores.shape[1:] == tuple(dims):
        return scores
    resized = cv2.resize(scores.transpose(1, 2, 0), (dims[1], dims[0]),
                         interpolation=cv2.INTER_LINEAR)
    if resized.ndim == 2:
        resized = resized[..., None]
    return resized.transpose(2, 0, 1)


def _member_scores(model: SegModel, image: np.ndarray,
                   scale: tuple[int, int], flip: bool,
                   native: tuple[int, int], soft: bool) -> np.ndarray:
    H, W = image.shape[:2]
    if tuple(scale) != (H, W):
        scaled = cv2.resize(image, (scale[1], scale[0]),
                            interpolation=cv2.INTER_LINEAR)
    else:
        scaled = image
    if flip:
        scores = predict_logits(model, scaled[:, ::-1].copy())[:, :, ::-1]
    else:
        scores = predict_logits(model, scaled)
    if soft:
        scores = _softmax(scores)
    return _resize_scores(scores, native)


def predict_multiscale_flipped(model: SegModel, image: np.ndarray,
                               cfg: EnsembleConfig) -> np.ndarray:
    """One member per (scale, flip) pair; native scale always included."""
    cfg.validate()
    native = image.shape[:2]
    soft = cfg.vote_mode == "soft"
    members = []
    for scale in cfg.member_scales():
        for flip in (False, True):
            members.append(_member_scores(model, image, scale, flip,
                                          native, soft))
    C = members[0].shape[0]
    if cfg.vote_mode == "hard":
        return hard_vote([np.argmax(m, axis=0) for m in members], C)
    mean = np.mean(members, axis=0)
    return np.argmax(mean, axis=0).astype(np.int64)


def predict_with_strategy(model: SegModel, image: np.ndarray,
                          cfg: EnsembleConfig) -> np.ndarray:
    if cfg.strategy == "single":
        return predict(model, image)
    if cfg.strategy == "flipped":
        return predict_flipped(model, image, cfg.vote_mode)
    return predict_multiscale_flipped(model, image, cfg)


def evaluate_split(model: SegModel, samples: list[Sample],
                   cfg: EnsembleConfig) -> MetricReport:
    conf = ConfusionMatrix(model.spec.num_classes)
    for s in samples:
        conf.accumulate(predict_with_strategy(model, s.image, cfg), s.label)
    return miou(conf)


@dataclass
class CheckpointEvalRow:
    strategy: str
    last: float
    best: float


def evaluate_checkpoints(record: RunRecord, samples: list[Sample],
                         cfg: EnsembleConfig,
                         strategies: tuple[str, ...] | None = None
                         ) -> list[CheckpointEvalRow]:
    """mIoU of the stored last/best checkpoints under each strategy."""
    strategies = strategies or (cfg.strategy,)
    models = {}
    for name, path in [("last", record.ckpt_last), ("best", record.ckpt_best)]:
        models[name], _ = load_model_from_checkpoint(path)
    rows = []
    for strategy in strategies:
        scfg = EnsembleConfig(strategy, cfg.native, cfg.scales,
                              cfg.vote_mode).validate()
        scores = {name: evaluate_split(m, samples, scfg).miou
                  for name, m in models.items()}
        rows.append(CheckpointEvalRow(strategy, scores["last"], scores["best"]))
    return rows


def write_checkpoint_eval_csv(fp, rows: list[CheckpointEvalRow]) -> None:
    writer = csv.writer(fp)
    writer.writerow(["strategy", "last", "best"])
    for r in rows:
        writer.writerow([r.strategy, repr(r.last), repr(r.best)])


def export_label_map(label: np.ndarray, taxonomy: ClassTaxonomy,
                     out_prefix) -> tuple[Path, Path]:
    """Write a palette-painted PNG and a raw id-map PNG."""
    out_prefix = Path(out_prefix)
    color_path = out_prefix.with_name(out_prefix.name + "_color.png")
    id_path = out_prefix.with_name(out_prefix.name + "_ids.png")
    Image.fromarray(encode_color_mask(label, taxonomy)).save(color_path)
    Image.fromarray(label.astype(np.uint8), mode="L").save(id_path)
    return color_path, id_path
