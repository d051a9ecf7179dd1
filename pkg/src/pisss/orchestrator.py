"""Additive ablation-experiment orchestration.

A plan is an ordered list of experiments; each experiment is a set of
hypotheses expressed as config patches over the current best configuration.
The winning hypothesis (argmax smoothed validation mIoU, first listed on
ties, unless the experiment pins a label) becomes the base for the next
experiment. Prediction-category (P) experiments do not train: they re-score
the incumbent run's last/best checkpoints under each requested strategy.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .dataset import ClassTaxonomy, Sample, load_dataset, synthetic_dataset
from .ensemble import (EnsembleConfig, evaluate_checkpoints,
                       write_checkpoint_eval_csv)
from .errors import ConfigError, DataError, PisssError
from .metrics import smoothed_validation_score
from .models import ArchSpec
from .trainer import RunRecord, TrainConfig, scale_iterations, train

PLAN_SCHEMA_VERSION = 1
CATEGORIES = ("B", "P", "T", "A")


@dataclass(frozen=True)
class HypothesisConfig:
    """One fully resolved trainable configuration."""

    arch: ArchSpec
    augment: AugmentConfig
    train: TrainConfig
    ensemble: EnsembleConfig
    label: str = ""

    def validate(self) -> "HypothesisConfig":
        self.arch.validate()
        self.augment.validate()
        self.train.validate()
        self.ensemble.validate()
        return self

    def to_dict(self) -> dict:
        return {"arch": self.arch.to_dict(), "augment": self.augment.to_dict(),
                "train": self.train.to_dict(),
                "ensemble": self.ensemble.to_dict()}

    @classmethod
    def from_dict(cls, d: dict, label: str = "") -> "HypothesisConfig":
        return cls(
            arch=ArchSpec.from_dict(d["arch"]),
            augment=AugmentConfig.from_dict(d["augment"]),
            train=TrainConfig.from_dict(d["train"]),
            ensemble=EnsembleConfig.from_dict(d["ensemble"]),
            label=label,
        ).validate()


def config_hash(cfg_dict: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg_dict, sort_keys=True).encode()).hexdigest()


def deep_merge(base: dict, patch: dict, path: str = "") -> dict:
    """Merge patch over base; unknown keys and shape mismatches are rejected.

    Dicts merge recursively; lists and scalars are replaced wholesale.
    """
    out = copy.deepcopy(base)
    for key, value in patch.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        current = base[key]
        if isinstance(current, dict) and isinstance(value, dict):
            out[key] = deep_merge(current, value, here)
        elif isinstance(current, dict) != isinstance(value, dict) \
                and current is not None and value is not None:
            raise ConfigError(f"config key {here!r}: cannot replace "
                              f"{type(current).__name__} with "
                              f"{type(value).__name__}")
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve(base: HypothesisConfig, patch: dict,
            label: str = "") -> HypothesisConfig:
    """Deep-merge a patch over a base configuration and re-validate."""
    merged = deep_merge(base.to_dict(), patch)
    return HypothesisConfig.from_dict(merged, label=label)


@dataclass
class Hypothesis:
    label: str
    patch: dict


@dataclass
class Experiment:
    name: str
    category: str
    hypotheses: list[Hypothesis]
    pin: str | None = None

    def validate(self) -> "Experiment":
        if self.category not in CATEGORIES:
            raise ConfigError(f"experiment {self.name!r}: category must be "
                              f"one of {CATEGORIES}")
        if not self.hypotheses:
            raise ConfigError(f"experiment {self.name!r} needs >= 1 hypothesis")
        labels = [h.label for h in self.hypotheses]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"experiment {self.name!r}: duplicate labels")
        if self.pin is not None and self.pin not in labels:
            raise ConfigError(f"experiment {self.name!r}: pin {self.pin!r} "
                              f"is not a hypothesis label")
        return self


@dataclass
class Plan:
    name: str
    dataset: dict
    initial_config: dict
    experiments: list[Experiment]
    iteration_scale: float = 1.0
    notes: str = ""

    def validate(self) -> "Plan":
        HypothesisConfig.from_dict(self.initial_config)
        for e in self.experiments:
            e.validate()
        if self.iteration_scale <= 0:
            raise ConfigError("iteration_scale must be > 0")
        return self

    def to_dict(self) -> dict:
        return {
            "schema_version": PLAN_SCHEMA_VERSION,
            "name": self.name,
            "dataset": self.dataset,
            "initial_config": self.initial_config,
            "iteration_scale": self.iteration_scale,
            "notes": self.notes,
            "experiments": [
                {"name": e.name, "category": e.category, "pin": e.pin,
                 "hypotheses": [{"label": h.label, "patch": h.patch}
                                for h in e.hypotheses]}
                for e in self.experiments
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Plan":
        version = d.get("schema_version")
        if version != PLAN_SCHEMA_VERSION:
            raise ConfigError(f"plan schema version {version!r} not supported "
                              f"(expected {PLAN_SCHEMA_VERSION})")
        experiments = [
            Experiment(e["name"], e["category"],
                       [Hypothesis(h["label"], h.get("patch", {}))
                        for h in e["hypotheses"]],
                       e.get("pin"))
            for e in d.get("experiments", [])
        ]
        return cls(
            name=d["name"],
            dataset=d["dataset"],
            initial_config=d["initial_config"],
            experiments=experiments,
            iteration_scale=d.get("iteration_scale", 1.0),
            notes=d.get("notes", ""),
        ).validate()


def load_plan(path) -> Plan:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"plan file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"plan {path} is not valid JSON: {e}") from None
    return Plan.from_dict(raw)


def load_plan_dataset(plan: Plan, plan_path=None
                      ) -> tuple[dict[str, list[Sample]], ClassTaxonomy]:
    ds = plan.dataset
    if "synthetic" in ds:
        return synthetic_dataset(ds["synthetic"])
    if "manifest" in ds and "palette" in ds:
        base = Path(plan_path).parent if plan_path is not None else Path(".")
        manifest = base / ds["manifest"]
        palette = base / ds["palette"]
        root = base / ds["root"] if ds.get("root") else None
        taxonomy = ClassTaxonomy.from_file(palette)
        return load_dataset(root, manifest, taxonomy), taxonomy
    raise ConfigError("plan dataset must define either 'synthetic' or "
                      "'manifest'+'palette'")


@dataclass
class HypothesisResult:
    label: str
    patch: dict
    status: str  # ok | reused | failed
    score: float | None
    run_ref: str | None
    error: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"label": self.label, "patch": self.patch, "status": self.status,
                "score": self.score, "run_ref": self.run_ref,
                "error": self.error, "extra": self.extra}

    @classmethod
    def from_dict(cls, d: dict) -> "HypothesisResult":
        return cls(d["label"], d["patch"], d["status"], d["score"],
                   d["run_ref"], d.get("error"), d.get("extra", {}))


@dataclass
class ExperimentResult:
    name: str
    category: str
    results: list[HypothesisResult]
    winner: str
    pinned: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "category": self.category,
                "results": [r.to_dict() for r in self.results],
                "winner": self.winner, "pinned": self.pinned}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResult":
        return cls(d["name"], d["category"],
                   [HypothesisResult.from_dict(r) for r in d["results"]],
                   d["winner"], d["pinned"])


@dataclass
class ExperimentLedger:
    """Additive record: experiments, scores, winners, and the best-so-far config."""

    plan_name: str
    plan_hash: str
    iteration_scale: float
    initial_config: dict
    experiments: list[ExperimentResult] = field(default_factory=list)
    best_so_far: dict = field(default_factory=dict)
    best_run_ref: str | None = None
    run_index: dict = field(default_factory=dict)  # config hash -> {run, score}

    def to_dict(self) -> dict:
        return {
            "plan_name": self.plan_name,
            "plan_hash": self.plan_hash,
            "iteration_scale": self.iteration_scale,
            "initial_config": self.initial_config,
            "experiments": [e.to_dict() for e in self.experiments],
            "best_so_far": self.best_so_far,
            "best_run_ref": self.best_run_ref,
            "run_index": self.run_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentLedger":
        return cls(
            d["plan_name"], d["plan_hash"], d["iteration_scale"],
            d["initial_config"],
            [ExperimentResult.from_dict(e) for e in d["experiments"]],
            d["best_so_far"], d["best_run_ref"], d["run_index"],
        )

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ExperimentLedger":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"ledger file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))

    def canonical_hash(self) -> str:
        return config_hash(self.to_dict())

    def provenance_chain(self) -> list[tuple[str, str, dict]]:
        chain = []
        for exp in self.experiments:
            winner = next(r for r in exp.results if r.label == exp.winner)
            chain.append((exp.name, exp.winner, winner.patch))
        return chain

    def replay(self) -> dict:
        """Re-apply the winning patch chain from the initial configuration."""
        cfg = copy.deepcopy(self.initial_config)
        for _, _, patch in self.provenance_chain():
            cfg = deep_merge(cfg, patch)
        return cfg

    def assert_additive(self) -> None:
        if config_hash(self.replay()) != config_hash(self.best_so_far):
            raise ConfigError("ledger additivity violated: replayed patches "
                              "do not reproduce best_so_far")


def select_winner(scored: list[tuple[str, float | None]]) -> str:
    """Argmax score; ties go to the first-listed hypothesis."""
    best_label, best_score = None, -math.inf
    for label, score in scored:
        s = -math.inf if score is None else score
        if s > best_score:
            best_label, best_score = label, s
    if best_label is None or best_score == -math.inf:
        raise PisssError("all hypotheses failed; no winner")
    return best_label


class PlanRunner:
    """Trains/evaluates hypotheses inside one plan run directory."""

    def __init__(self, out_dir: Path, splits: dict[str, list[Sample]],
                 taxonomy: ClassTaxonomy, iteration_scale: float,
                 echo: bool = False):
        self.out_dir = Path(out_dir)
        self.splits = splits
        self.taxonomy = taxonomy
        self.iteration_scale = iteration_scale
        self.echo = echo
        (self.out_dir / "runs").mkdir(parents=True, exist_ok=True)

    def train(self, cfg: HypothesisConfig, run_name: str) -> tuple[RunRecord, float]:
        run_ref = f"runs/{run_name}"
        scaled = scale_iterations(cfg.train, self.iteration_scale)
        record = train(scaled, cfg.arch, cfg.augment, self.splits,
                       self.out_dir / run_ref, echo=self.echo)
        score = smoothed_validation_score(record.val_history(), k=10)
        return record, score

    def eval_split_name(self) -> str:
        return "test" if self.splits.get("test") else "val"

    def evaluate(self, cfg: HypothesisConfig, incumbent_ref: str,
                 run_name: str) -> tuple[float, dict]:
        """Single-checkpoint scores of the incumbent run (P category)."""
        record = RunRecord.load(self.out_dir / incumbent_ref)
        samples = self.splits[self.eval_split_name()]
        rows = evaluate_checkpoints(record, samples, cfg.ensemble,
                                    strategies=(cfg.ensemble.strategy,))
        row = rows[0]
        eval_dir = self.out_dir / "runs" / run_name
        eval_dir.mkdir(parents=True, exist_ok=True)
        with (eval_dir / "checkpoint_eval.csv").open("w", newline="") as fp:
            write_checkpoint_eval_csv(fp, rows)
        return row.best, {"last_miou": row.last, "best_miou": row.best,
                          "eval_split": self.eval_split_name()}


def _slug(text: str) -> str:
    keep = [c.lower() if c.isalnum() else "_" for c in text]
    out = "".join(keep).strip("_")
    while "__" in out:
        out = out.replace("__", "_")
    return out or "x"


def run_experiment(ledger: ExperimentLedger, experiment: Experiment,
                   runner: PlanRunner) -> ExperimentLedger:
    """Run every hypothesis, pick the winner, append to the ledger."""
    experiment.validate()
    base = HypothesisConfig.from_dict(ledger.best_so_far)
    exp_idx = len(ledger.experiments)
    results: list[HypothesisResult] = []
    for hyp in experiment.hypotheses:
        run_name = f"exp{exp_idx:02d}_{_slug(experiment.name)}__{_slug(hyp.label)}"
        try:
            resolved = resolve(base, hyp.patch, label=hyp.label)
            if experiment.category == "P":
                if ledger.best_run_ref is None:
                    raise PisssError("no incumbent run for a P-category "
                                     "experiment")
                score, extra = runner.evaluate(resolved, ledger.best_run_ref,
                                               run_name)
                results.append(HypothesisResult(
                    hyp.label, hyp.patch, "ok", score,
                    ledger.best_run_ref, extra=extra))
                continue
            h = config_hash(resolved.to_dict())
            if h in ledger.run_index:
                entry = ledger.run_index[h]
                results.append(HypothesisResult(
                    hyp.label, hyp.patch, "reused", entry["score"],
                    entry["run"]))
                continue
            record, score = runner.train(resolved, run_name)
            run_ref = str(record.run_dir.relative_to(runner.out_dir))
            ledger.run_index[h] = {"run": run_ref, "score": score}
            results.append(HypothesisResult(hyp.label, hyp.patch, "ok",
                                            score, run_ref))
        except PisssError as e:
            results.append(HypothesisResult(hyp.label, hyp.patch, "failed",
                                            None, None, error=str(e)))
    winner = select_winner([(r.label, r.score) for r in results])
    pinned = experiment.pin is not None
    if pinned:
        pinned_result = next(r for r in results if r.label == experiment.pin)
        if pinned_result.status == "failed":
            raise PisssError(f"experiment {experiment.name!r}: pinned "
                             f"hypothesis {experiment.pin!r} failed")
        winner = experiment.pin
    winner_result = next(r for r in results if r.label == winner)
    ledger.experiments.append(ExperimentResult(
        experiment.name, experiment.category, results, winner, pinned))
    ledger.best_so_far = resolve(base, winner_result.patch).to_dict()
    if experiment.category != "P" and winner_result.run_ref is not None:
        ledger.best_run_ref = winner_result.run_ref
    return ledger


def run_plan(plan: Plan, out_dir, *, plan_path=None, iteration_scale: float = 1.0,
             seed: int | None = None, resume_ledger=None,
             echo: bool = False) -> tuple[ExperimentLedger, Path]:
    """Execute a plan end to end; persists ledger.json after each experiment."""
    plan.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    effective_scale = plan.iteration_scale * iteration_scale
    initial = copy.deepcopy(plan.initial_config)
    if seed is not None:
        initial["train"]["seed"] = int(seed)
    plan_hash = config_hash({"plan": plan.to_dict(), "seed": seed})

    splits, taxonomy = load_plan_dataset(plan, plan_path)
    runner = PlanRunner(out_dir, splits, taxonomy, effective_scale, echo)
    ledger_path = out_dir / "ledger.json"

    if resume_ledger is not None:
        ledger = ExperimentLedger.load(resume_ledger)
        if ledger.plan_hash != plan_hash:
            raise ConfigError("resume ledger was produced by a different "
                              "plan/seed combination")
        done = len(ledger.experiments)
    else:
        ledger = ExperimentLedger(plan.name, plan_hash, effective_scale,
                                  initial, best_so_far=copy.deepcopy(initial))
        base = HypothesisConfig.from_dict(initial)
        record, score = runner.train(base, "initial")
        run_ref = str(record.run_dir.relative_to(out_dir))
        ledger.run_index[config_hash(base.to_dict())] = {"run": run_ref,
                                                         "score": score}
        ledger.best_run_ref = run_ref
        ledger.save(ledger_path)
        done = 0

    for experiment in plan.experiments[done:]:
        if echo:
            print(f"== experiment: {experiment.name} ({experiment.category})")
        run_experiment(ledger, experiment, runner)
        ledger.save(ledger_path)

    ledger.assert_additive()
    csv_text, txt_text = emit_report(ledger)
    (out_dir / "report.csv").write_text(csv_text)
    (out_dir / "report.txt").write_text(txt_text)
    return ledger, ledger_path


_ENC_NAMES = {"resnet34": "ResNet-34", "resnet50": "ResNet-50",
              "resnet101": "ResNet-101"}
_ARCH_NAMES = {"unet": "U-Net", "deeplabv3plus": "DL3+"}
_LOSS_NAMES = {"ce": "CE", "wce": "WCE", "soft_miou": "mIoU",
               "soft_dice": "dice"}
_STRATEGY_NAMES = {"single": "Single Prediction", "flipped": "Flipped",
                   "multiscale_flipped": "MultiScale+Flipped"}
_AUG_NAMES = {"crop": "Crop", "resize": "Resizing", "color": "Color",
              "geom_rtk": "GeomRTK", "hflip": "Flip"}

REPORT_COLUMNS = ["Exp", "Category", "Hypothesis", "Enc", "Arch", "OS",
                  "woMP", "DataAug", "Losses", "Iters", "Optim", "Strategy",
                  "Status", "mIoU", "Winner"]


def _describe_aug(aug: dict) -> str:
    parts = []
    for op in aug["pipeline"]:
        if op == "cutmix":
            parts.append(f"Cutmix{round(aug['cutmix_prob'] * 100)}")
        else:
            parts.append(_AUG_NAMES.get(op, op))
    return "+".join(parts) if parts else "None"


def _describe_losses(train_cfg: dict) -> str:
    stages = ["+".join(_LOSS_NAMES.get(t["kind"], t["kind"])
                       for t in s["loss"]["terms"])
              for s in train_cfg["stages"]]
    return "+".join(stages)


def _describe_iters(n: int) -> str:
    return f"{n // 1000}k" if n % 1000 == 0 and n >= 1000 else str(n)


def describe_config(cfg: dict) -> dict:
    arch = cfg["arch"]
    return {
        "Enc": _ENC_NAMES.get(arch["encoder"], arch["encoder"]),
        "Arch": _ARCH_NAMES.get(arch["family"], arch["family"]),
        "OS": "-" if arch["family"] == "unet" else str(arch["output_stride"]),
        "woMP": "-" if arch["max_pool_in_stem"] else "yes",
        "DataAug": _describe_aug(cfg["augment"]),
        "Losses": _describe_losses(cfg["train"]),
        "Iters": _describe_iters(cfg["train"]["max_iterations"]),
        "Optim": cfg["train"]["optimizer"]["kind"].upper()
        if cfg["train"]["optimizer"]["kind"] == "sgd" else "Adam",
        "Strategy": _STRATEGY_NAMES.get(cfg["ensemble"]["strategy"],
                                        cfg["ensemble"]["strategy"]),
    }


def report_rows(ledger: ExperimentLedger) -> list[dict]:
    rows = []
    base = copy.deepcopy(ledger.initial_config)
    for exp in ledger.experiments:
        for r in exp.results:
            try:
                desc = describe_config(deep_merge(base, r.patch))
            except ConfigError:
                desc = {k: "" for k in REPORT_COLUMNS[3:13]}
            row = {"Exp": exp.name, "Category": exp.category,
                   "Hypothesis": r.label, **desc, "Status": r.status,
                   "mIoU": "" if r.score is None else repr(float(r.score)),
                   "Winner": "true" if r.label == exp.winner else "false"}
            rows.append(row)
        winner_patch = next(r.patch for r in exp.results
                            if r.label == exp.winner)
        base = deep_merge(base, winner_patch)
    return rows


def emit_report(ledger: ExperimentLedger) -> tuple[str, str]:
    """Machine-readable CSV and aligned-text tables, winner flagged."""
    rows = report_rows(ledger)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    csv_text = buf.getvalue()

    lines = []
    for exp in ledger.experiments:
        exp_rows = [r for r in rows if r["Exp"] == exp.name]
        lines.append(f"## {exp.name} [{exp.category}]"
                     + (" (pinned)" if exp.pinned else ""))
        cols = ["Hypothesis", "Enc", "Arch", "OS", "woMP", "DataAug",
                "Losses", "Iters", "Optim", "Strategy", "Status", "mIoU"]
        widths = {c: max(len(c), *(len(_fmt_cell(r, c)) for r in exp_rows))
                  for c in cols}
        header = "  ".join(c.ljust(widths[c]) for c in cols)
        lines.append("   " + header)
        for r in exp_rows:
            marker = " * " if r["Winner"] == "true" else "   "
            lines.append(marker + "  ".join(
                _fmt_cell(r, c).ljust(widths[c]) for c in cols))
        lines.append("")
    txt_text = "\n".join(lines) + ("\n" if lines else "")
    return csv_text, txt_text


def _fmt_cell(row: dict, col: str) -> str:
    if col == "mIoU" and row["mIoU"]:
        return f"{float(row['mIoU']):.4f}"
    return str(row[col])


def parse_report_csv(text: str) -> list[tuple[str, str, float | None]]:
    """(experiment, hypothesis, score) tuples back from a report.csv."""
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for row in reader:
        score = float(row["mIoU"]) if row["mIoU"] else None
        out.append((row["Exp"], row["Hypothesis"], score))
    return out
