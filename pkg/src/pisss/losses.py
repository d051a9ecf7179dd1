"""Pixel losses: CE, weighted CE, soft-mIoU and soft-dice surrogates, compounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ConfigError

LOSS_KINDS = ("ce", "wce", "soft_miou", "soft_dice")


@dataclass(frozen=True)
class LossTerm:
    kind: str
    weight: float = 1.0


@dataclass(frozen=True)
class LossConfig:
    terms: tuple[LossTerm, ...] = (LossTerm("ce"),)
    class_weights: tuple[float, ...] | None = None
    epsilon: float = 1e-6

    def validate(self) -> "LossConfig":
        if not self.terms:
            raise ConfigError("loss config needs at least one term")
        for t in self.terms:
            if t.kind not in LOSS_KINDS:
                raise ConfigError(f"unknown loss kind {t.kind!r}")
            if t.weight <= 0:
                raise ConfigError(f"loss weight must be > 0, got {t.weight}")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.class_weights is not None and any(w <= 0 for w in self.class_weights):
            raise ConfigError("class weights must be positive")
        return self

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(t.kind for t in self.terms)

    def needs_class_weights(self) -> bool:
        return "wce" in self.kinds and self.class_weights is None

    def to_dict(self) -> dict:
        return {
            "terms": [{"kind": t.kind, "weight": t.weight} for t in self.terms],
            "class_weights": (None if self.class_weights is None
                              else list(self.class_weights)),
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(
            terms=tuple(LossTerm(**t) for t in d["terms"]),
            class_weights=(None if d.get("class_weights") is None
                           else tuple(d["class_weights"])),
            epsilon=d.get("epsilon", 1e-6),
        ).validate()


def _check_shapes(logits: torch.Tensor, labels: torch.Tensor) -> None:
    if logits.ndim != 4 or labels.ndim != 3 or logits.shape[0] != labels.shape[0] \
            or logits.shape[2:] != labels.shape[1:]:
        raise ConfigError(f"shape mismatch: logits {tuple(logits.shape)} vs "
                          f"labels {tuple(labels.shape)}")


def ce_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean over pixels of -log softmax probability of the true class."""
    _check_shapes(logits, labels)
    return F.cross_entropy(logits, labels)


def wce_loss(logits: torch.Tensor, labels: torch.Tensor,
             class_weights) -> torch.Tensor:
    """Per-pixel CE scaled by the true class weight, normalized by applied weights."""
    _check_shapes(logits, labels)
    w = torch.as_tensor(class_weights, dtype=logits.dtype, device=logits.device)
    if w.numel() != logits.shape[1]:
        raise ConfigError(f"need {logits.shape[1]} class weights, got {w.numel()}")
    if (w <= 0).any():
        raise ConfigError("class weights must be positive")
    return F.cross_entropy(logits, labels, weight=w)


def _soft_ratios(probs: torch.Tensor, labels: torch.Tensor):
    _check_shapes(probs, labels)
    C = probs.shape[1]
    onehot = F.one_hot(labels, C).to(probs.dtype).permute(0, 3, 1, 2)
    dims = (0, 2, 3)
    inter = (probs * onehot).sum(dim=dims)
    psum = probs.sum(dim=dims)
    ysum = onehot.sum(dim=dims)
    present = (psum > 0) | (ysum > 0)
    return inter, psum, ysum, present


def soft_miou_loss(probs: torch.Tensor, labels: torch.Tensor,
                   epsilon: float = 1e-6) -> torch.Tensor:
    """1 - mean soft IoU over classes present in prediction or ground truth."""
    inter, psum, ysum, present = _soft_ratios(probs, labels)
    iou = (inter + epsilon) / (psum + ysum - inter + epsilon)
    if not present.any():
        return probs.sum() * 0.0
    return 1.0 - iou[present].mean()


def soft_dice_loss(probs: torch.Tensor, labels: torch.Tensor,
                   epsilon: float = 1e-6) -> torch.Tensor:
    """1 - mean soft dice over present classes."""
    inter, psum, ysum, present = _soft_ratios(probs, labels)
    dice = (2.0 * inter + epsilon) / (psum + ysum + epsilon)
    if not present.any():
        return probs.sum() * 0.0
    return 1.0 - dice[present].mean()


def compound_loss(cfg: LossConfig, logits: torch.Tensor,
                  labels: torch.Tensor) -> torch.Tensor:
    """Weighted sum of the configured terms."""
    cfg.validate()
    probs = None
    total = None
    for term in cfg.terms:
        if term.kind == "ce":
            value = ce_loss(logits, labels)
        elif term.kind == "wce":
            if cfg.class_weights is None:
                raise ConfigError("wce term requires class_weights")
            value = wce_loss(logits, labels, cfg.class_weights)
        else:
            if probs is None:
                probs = torch.softmax(logits, dim=1)
            if term.kind == "soft_miou":
                value = soft_miou_loss(probs, labels, cfg.epsilon)
            else:
                value = soft_dice_loss(probs, labels, cfg.epsilon)
        total = value * term.weight if total is None else total + value * term.weight
    return total
