"""Iteration-based training loop with staged losses, LR schedule, checkpoints.

Determinism: every batch is a pure function of (seed, iteration), so a resumed
run replays the exact data order of an uninterrupted one. Run directory
layout: ``config.resolved``, ``history.tsv``, ``ckpt_last``, ``ckpt_best``,
``events.log``, ``record.json``.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, apply_pipeline, cutmix_batch
from .dataset import Sample
from .errors import (ConfigError, DataError, IncompatibleCheckpoint,
                     TrainingDiverged)
from .losses import LossConfig, compound_loss
from .metrics import ConfusionMatrix, miou
from .models import ArchSpec, SegModel, build_model

CKPT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 0.0
    warmup_iters: int = 0
    poly_power: float = 0.9

    def validate(self) -> "OptimizerConfig":
        if self.kind not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.warmup_iters < 0:
            raise ConfigError("warmup_iters must be >= 0")
        return self

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lr": self.lr, "momentum": self.momentum,
                "weight_decay": self.weight_decay,
                "warmup_iters": self.warmup_iters,
                "poly_power": self.poly_power}

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        return cls(**d).validate()


@dataclass(frozen=True)
class StageConfig:
    loss: LossConfig
    iterations: int

    def to_dict(self) -> dict:
        return {"loss": self.loss.to_dict(), "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d: dict) -> "StageConfig":
        return cls(LossConfig.from_dict(d["loss"]), int(d["iterations"]))


@dataclass(frozen=True)
class TrainConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 8
    max_iterations: int = 1000
    stages: tuple[StageConfig, ...] = ()
    val_every: int = 2000
    checkpoint_every: int = 2000
    seed: int = 0

    def validate(self) -> "TrainConfig":
        self.optimizer.validate()
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.stages:
            raise ConfigError("at least one training stage required")
        for s in self.stages:
            s.loss.validate()
            if s.iterations < 1:
                raise ConfigError("stage iterations must be >= 1")
        total = sum(s.iterations for s in self.stages)
        if total != self.max_iterations:
            raise ConfigError(f"stage iterations sum to {total}, "
                              f"expected max_iterations={self.max_iterations}")
        if self.val_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("val_every and checkpoint_every must be >= 1")
        return self

    def to_dict(self) -> dict:
        return {
            "optimizer": self.optimizer.to_dict(),
            "batch_size": self.batch_size,
            "max_iterations": self.max_iterations,
            "stages": [s.to_dict() for s in self.stages],
            "val_every": self.val_every,
            "checkpoint_every": self.checkpoint_every,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(
            optimizer=OptimizerConfig.from_dict(d["optimizer"]),
            batch_size=int(d["batch_size"]),
            max_iterations=int(d["max_iterations"]),
            stages=tuple(StageConfig.from_dict(s) for s in d["stages"]),
            val_every=int(d["val_every"]),
            checkpoint_every=int(d["checkpoint_every"]),
            seed=int(d["seed"]),
        ).validate()


def scale_iterations(cfg: TrainConfig, scale: float) -> TrainConfig:
    """Shrink every iteration count uniformly (dry-run budgets)."""
    if scale == 1.0:
        return cfg
    if scale <= 0:
        raise ConfigError("iteration scale must be > 0")
    stages = tuple(replace(s, iterations=max(1, round(s.iterations * scale)))
                   for s in cfg.stages)
    opt = replace(cfg.optimizer,
                  warmup_iters=round(cfg.optimizer.warmup_iters * scale))
    return replace(
        cfg,
        optimizer=opt,
        stages=stages,
        max_iterations=sum(s.iterations for s in stages),
        val_every=max(1, round(cfg.val_every * scale)),
        checkpoint_every=max(1, round(cfg.checkpoint_every * scale)),
    ).validate()


def lr_at(cfg: TrainConfig, iteration: int) -> float:
    """Constant for Adam; linear warm-up then poly decay for SGD."""
    if not 0 <= iteration <= cfg.max_iterations:
        raise ConfigError(f"iteration {iteration} outside "
                          f"[0, {cfg.max_iterations}]")
    opt = cfg.optimizer
    if opt.kind == "adam":
        return opt.lr
    w = opt.warmup_iters
    if w > 0 and iteration < w:
        return opt.lr * iteration / w
    if cfg.max_iterations == w:
        return opt.lr
    frac = (iteration - w) / (cfg.max_iterations - w)
    return opt.lr * (1.0 - frac) ** opt.poly_power


def stage_at(cfg: TrainConfig, iteration: int) -> tuple[int, StageConfig]:
    """Stage covering a 0-based iteration index."""
    cum = 0
    for i, s in enumerate(cfg.stages):
        cum += s.iterations
        if iteration < cum:
            return i, s
    return len(cfg.stages) - 1, cfg.stages[-1]


def rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=tuple(key)))


def compute_class_weights(samples: list[Sample], num_classes: int) -> tuple[float, ...]:
    """Inverse pixel frequency over the split, normalized to mean 1."""
    counts = np.zeros(num_classes, dtype=np.int64)
    for s in samples:
        counts += np.bincount(s.label.ravel(), minlength=num_classes)[:num_classes]
    raw = np.zeros(num_classes, dtype=np.float64)
    present = counts > 0
    if not present.any():
        raise DataError("cannot derive class weights from empty labels")
    raw[present] = 1.0 / counts[present]
    raw[~present] = raw[present].max()
    raw /= raw.mean()
    return tuple(float(w) for w in raw)


def samples_to_tensors(samples: list[Sample]) -> tuple[torch.Tensor, torch.Tensor]:
    dims = {s.dims for s in samples}
    if len(dims) != 1:
        raise DataError(f"batch mixes sample dims {sorted(dims)}; "
                        f"enable cropping or resize the dataset")
    images = np.stack([s.image for s in samples]).astype(np.float32) / 255.0
    labels = np.stack([s.label for s in samples]).astype(np.int64)
    return (torch.from_numpy(images).permute(0, 3, 1, 2).contiguous(),
            torch.from_numpy(labels))


def assemble_batch(train_samples: list[Sample], aug: AugmentConfig,
                   batch_size: int, seed: int, iteration: int) -> list[Sample]:
    """Pure function of (seed, iteration): sample choice + augmentation draws."""
    idx_rng = rng_for(seed, iteration, 0)
    indices = idx_rng.integers(0, len(train_samples), size=batch_size)
    batch = [apply_pipeline(train_samples[i], aug, rng_for(seed, iteration, k + 1))
             for k, i in enumerate(indices)]
    if "cutmix" in aug.pipeline:
        batch = cutmix_batch(batch, aug.cutmix_prob,
                             rng_for(seed, iteration, batch_size + 1))
    return batch


def evaluate_confusion(model: SegModel, samples: list[Sample],
                       batch_size: int = 8) -> ConfusionMatrix:
    conf = ConfusionMatrix(model.spec.num_classes)
    was_training = model.training
    model.eval()
    with torch.inference_mode():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            images, labels = samples_to_tensors(chunk)
            logits = model(images)
            pred = logits.argmax(dim=1).numpy()
            conf.accumulate(pred, labels.numpy())
    if was_training:
        model.train()
    return conf


def params_sha256(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


@dataclass
class RunRecord:
    run_dir: Path
    history: list[tuple[int, float, float]]  # (iteration, train_loss, val_miou)
    best_iteration: int
    best_miou: float
    wall_clock_s: float
    config: dict

    @property
    def ckpt_last(self) -> Path:
        return self.run_dir / "ckpt_last"

    @property
    def ckpt_best(self) -> Path:
        return self.run_dir / "ckpt_best"

    def val_history(self) -> list[tuple[int, float]]:
        return [(it, m) for it, _, m in self.history]

    @classmethod
    def load(cls, run_dir) -> "RunRecord":
        run_dir = Path(run_dir)
        record = json.loads((run_dir / "record.json").read_text())
        config = json.loads((run_dir / "config.resolved").read_text())
        history = []
        hist_file = run_dir / "history.tsv"
        if hist_file.is_file():
            for line in hist_file.read_text().splitlines():
                it, loss, m = line.split("\t")
                history.append((int(it), float(loss), float(m)))
        return cls(run_dir, history, record["best_iteration"],
                   record["best_miou"], record["wall_clock_s"], config)


class _EventLog:
    def __init__(self, path: Path, echo: bool = False):
        self.path = path
        self.echo = echo

    def write(self, msg: str) -> None:
        with self.path.open("a") as fp:
            fp.write(msg + "\n")
        if self.echo:
            print(msg)


def _save_checkpoint(path: Path, model: SegModel, optimizer, iteration: int,
                     config: dict, history, best_iteration, best_miou) -> None:
    torch.save({
        "schema_version": CKPT_SCHEMA_VERSION,
        "arch": model.spec.to_dict(),
        "config": config,
        "state_dict": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "iteration": iteration,
        "torch_rng": torch.get_rng_state(),
        "history": [list(h) for h in history],
        "best_iteration": best_iteration,
        "best_miou": best_miou,
    }, path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("schema_version") != CKPT_SCHEMA_VERSION:
        raise IncompatibleCheckpoint(
            f"checkpoint schema {ckpt.get('schema_version')} != "
            f"{CKPT_SCHEMA_VERSION}")
    return ckpt


def load_model_from_checkpoint(path) -> tuple[SegModel, dict]:
    ckpt = load_checkpoint(path)
    model = build_model(ArchSpec.from_dict(ckpt["arch"]))
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model, ckpt


def _resolve_loss_weights(cfg: TrainConfig, train_samples: list[Sample],
                          num_classes: int) -> TrainConfig:
    if not any(s.loss.needs_class_weights() for s in cfg.stages):
        return cfg
    weights = compute_class_weights(train_samples, num_classes)
    stages = tuple(
        replace(s, loss=replace(s.loss, class_weights=weights))
        if s.loss.needs_class_weights() else s
        for s in cfg.stages)
    return replace(cfg, stages=stages)


def _run_loop(model: SegModel, optimizer, cfg: TrainConfig, aug: AugmentConfig,
              dataset: dict[str, list[Sample]], run_dir: Path, config: dict,
              start_iteration: int, history, best_iteration: int,
              best_miou: float, hooks: dict | None, echo: bool) -> RunRecord:
    log = _EventLog(run_dir / "events.log", echo)
    hooks = hooks or {}
    train_samples = dataset["train"]
    val_samples = dataset.get("val", [])
    t0 = time.time()
    prev_stage = stage_at(cfg, start_iteration)[0] if \
        start_iteration < cfg.max_iterations else len(cfg.stages) - 1
    if start_iteration == 0:
        log.write(f"start: {cfg.max_iterations} iterations, batch "
                  f"{cfg.batch_size}, optimizer {cfg.optimizer.kind} "
                  f"lr={cfg.optimizer.lr}")
        log.write(f"stage 0 begins at iteration 0 "
                  f"(loss={'+'.join(cfg.stages[0].loss.kinds)})")

    for it in range(start_iteration, cfg.max_iterations):
        stage_idx, stage = stage_at(cfg, it)
        if stage_idx != prev_stage:
            log.write(f"stage switch at iteration {it}: "
                      f"{'+'.join(cfg.stages[prev_stage].loss.kinds)} -> "
                      f"{'+'.join(stage.loss.kinds)}; "
                      f"params sha256={params_sha256(model)}")
            prev_stage = stage_idx
        lr = lr_at(cfg, it)
        for group in optimizer.param_groups:
            group["lr"] = lr
        if "before_step" in hooks:
            hooks["before_step"](it, model, stage_idx)
        batch = assemble_batch(train_samples, aug, cfg.batch_size, cfg.seed, it)
        images, labels = samples_to_tensors(batch)
        model.train()
        logits = model(images)
        loss = compound_loss(stage.loss, logits, labels)
        if not torch.isfinite(loss):
            log.write(f"abort at iteration {it}: non-finite loss {loss.item()}")
            raise TrainingDiverged(f"loss became {loss.item()} at iteration {it}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        it_done = it + 1
        loss_val = float(loss.item())
        if "after_step" in hooks:
            hooks["after_step"](it_done, model, stage_idx, loss_val)

        if val_samples and it_done % cfg.val_every == 0:
            conf = evaluate_confusion(model, val_samples, cfg.batch_size)
            val_miou = miou(conf).miou
            history.append((it_done, loss_val, val_miou))
            log.write(f"validate at iteration {it_done}: miou={val_miou:.6f} "
                      f"train_loss={loss_val:.6f}")
            if "on_validate" in hooks:
                hooks["on_validate"](it_done, val_miou)
            if best_iteration < 0 or val_miou > best_miou:
                best_iteration, best_miou = it_done, val_miou
                _save_checkpoint(run_dir / "ckpt_best", model, optimizer,
                                 it_done, config, history, best_iteration,
                                 best_miou)
                log.write(f"new best at iteration {it_done}: {val_miou:.6f}")
        if it_done % cfg.checkpoint_every == 0 or it_done == cfg.max_iterations:
            _save_checkpoint(run_dir / "ckpt_last", model, optimizer, it_done,
                             config, history, best_iteration, best_miou)

    if not history and val_samples:
        conf = evaluate_confusion(model, val_samples, cfg.batch_size)
        val_miou = miou(conf).miou
        history.append((cfg.max_iterations, float("nan"), val_miou))
        best_iteration, best_miou = cfg.max_iterations, val_miou
        _save_checkpoint(run_dir / "ckpt_best", model, optimizer,
                         cfg.max_iterations, config, history, best_iteration,
                         best_miou)
    if not (run_dir / "ckpt_last").is_file():
        _save_checkpoint(run_dir / "ckpt_last", model, optimizer,
                         cfg.max_iterations, config, history, best_iteration,
                         best_miou)

    wall = time.time() - t0
    with (run_dir / "history.tsv").open("w") as fp:
        for it_done, loss_val, m in history:
            fp.write(f"{it_done}\t{repr(loss_val)}\t{repr(m)}\n")
    record = RunRecord(run_dir, list(history), best_iteration, best_miou,
                       wall, config)
    (run_dir / "record.json").write_text(json.dumps({
        "best_iteration": best_iteration,
        "best_miou": best_miou,
        "final_iteration": cfg.max_iterations,
        "wall_clock_s": wall,
    }, indent=2, sort_keys=True) + "\n")
    log.write(f"done: {cfg.max_iterations} iterations in {wall:.1f}s; "
              f"best miou {best_miou:.6f} at iteration {best_iteration}")
    return record


def train(config: TrainConfig, arch: ArchSpec, aug: AugmentConfig,
          dataset: dict[str, list[Sample]], out_dir, *,
          hooks: dict | None = None, echo: bool = False) -> RunRecord:
    """Run all stages sequentially, validating and checkpointing as configured."""
    config.validate()
    arch.validate()
    aug.validate()
    if not dataset.get("train"):
        raise DataError("training split is empty")
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config = _resolve_loss_weights(config, dataset["train"], arch.num_classes)
    snapshot = {"arch": arch.to_dict(), "augment": aug.to_dict(),
                "train": config.to_dict()}
    (run_dir / "config.resolved").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    torch.manual_seed(config.seed)
    model = build_model(arch)
    optimizer = _make_optimizer(model, config)
    return _run_loop(model, optimizer, config, aug, dataset, run_dir, snapshot,
                     0, [], -1, float("-inf"), hooks, echo)


def _make_optimizer(model: SegModel, cfg: TrainConfig):
    opt = cfg.optimizer
    if opt.kind == "adam":
        return torch.optim.Adam(model.parameters(), lr=opt.lr,
                                weight_decay=opt.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=opt.lr, momentum=opt.momentum,
                           weight_decay=opt.weight_decay)


def resume(checkpoint, dataset: dict[str, list[Sample]], *,
           out_dir=None, hooks: dict | None = None,
           echo: bool = False) -> RunRecord:
    """Continue training from a stored iteration; data order is replayed."""
    ckpt = load_checkpoint(checkpoint)
    snapshot = ckpt["config"]
    arch = ArchSpec.from_dict(snapshot["arch"])
    if dataset.get("train"):
        top = max(int(s.label.max()) for s in dataset["train"])
        if top >= arch.num_classes:
            raise IncompatibleCheckpoint(
                f"checkpoint expects {arch.num_classes} classes but the "
                f"dataset contains id {top}")
    else:
        raise DataError("training split is empty")
    aug = AugmentConfig.from_dict(snapshot["augment"])
    cfg = TrainConfig.from_dict(snapshot["train"])
    run_dir = Path(out_dir) if out_dir is not None else Path(checkpoint).parent
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.resolved").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    torch.manual_seed(cfg.seed)
    model = build_model(arch)
    model.load_state_dict(ckpt["state_dict"])
    optimizer = _make_optimizer(model, cfg)
    optimizer.load_state_dict(ckpt["optimizer"])
    torch.set_rng_state(ckpt["torch_rng"])
    history = [tuple(h) for h in ckpt["history"]]
    return _run_loop(model, optimizer, cfg, aug, dataset, run_dir, snapshot,
                     int(ckpt["iteration"]), list(history),
                     int(ckpt["best_iteration"]), float(ckpt["best_miou"]),
                     hooks, echo)
