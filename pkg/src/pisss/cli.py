"""Command-line driver.

Exit codes: 0 success, 1 domain error, 2 usage error. All outputs are scoped
to the chosen --out directory; existing output is never overwritten without
--force.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import torch

from . import orchestrator as orch
from .dataset import (ClassTaxonomy, dataset_statistics, load_dataset,
                      synthetic_dataset)
from .ensemble import (EnsembleConfig, evaluate_split, export_label_map)
from .errors import ConfigError, DataError, PisssError
from .introspect import optimize_input, trace_to_image, write_objective_tsv
from .trainer import (load_model_from_checkpoint, scale_iterations, train)
from PIL import Image

ENSEMBLE_FLAGS = {"single": "single", "flipped": "flipped",
                  "msflip": "multiscale_flipped"}


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def domain_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PisssError as e:
            _fail(str(e))
        except OSError as e:
            _fail(str(e))
    return wrapper


def _prepare_out(out: str, force: bool, *filenames: str) -> Path:
    out_dir = Path(out)
    if not force:
        for name in filenames:
            target = out_dir / name
            if target.exists():
                _fail(f"{target} already exists; pass --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _set_workers(workers: int | None) -> None:
    if workers is not None:
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        torch.set_num_threads(workers)


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p} is not valid JSON: {e}") from None


def _dataset_from_file(path: str):
    """Splits + taxonomy from the dataset section of a plan or run config."""
    raw = _load_json(path)
    if "dataset" not in raw:
        raise ConfigError(f"{path} has no 'dataset' section")
    ds = raw["dataset"]
    if "synthetic" in ds:
        return synthetic_dataset(ds["synthetic"])
    if "manifest" in ds and "palette" in ds:
        base = Path(path).parent
        taxonomy = ClassTaxonomy.from_file(base / ds["palette"])
        root = base / ds["root"] if ds.get("root") else None
        return load_dataset(root, base / ds["manifest"], taxonomy), taxonomy
    raise ConfigError("dataset section must define 'synthetic' or "
                      "'manifest'+'palette'")


@click.group()
@click.option("--workers", type=int, default=None,
              help="Bound compute parallelism (torch threads).")
def main(workers):
    """Segmentation training, evaluation, and additive ablation plans."""
    try:
        _set_workers(workers)
    except PisssError as e:
        _fail(str(e))


@main.command()
@click.argument("manifest")
@click.argument("palette")
@click.option("--out", default=None, help="Directory for stats.csv "
              "(default: print to stdout).")
@click.option("--force", is_flag=True)
@domain_errors
def stats(manifest, palette, out, force):
    """Class pixel/blob statistics for a manifest-described dataset."""
    taxonomy = ClassTaxonomy.from_file(palette)
    splits = load_dataset(None, manifest, taxonomy)
    samples = [s for split in splits.values() for s in split]
    report = dataset_statistics(samples, taxonomy)
    if out is None:
        report.write_csv(sys.stdout, taxonomy)
    else:
        out_dir = _prepare_out(out, force, "stats.csv")
        with (out_dir / "stats.csv").open("w", newline="") as fp:
            report.write_csv(fp, taxonomy)
        click.echo(f"wrote {out_dir / 'stats.csv'}")


@main.command(name="train")
@click.argument("config_file")
@click.option("--iteration-scale", type=float, default=1.0)
@click.option("--seed", type=int, default=None)
@click.option("--out", default="train_run", show_default=True)
@click.option("--force", is_flag=True)
@domain_errors
def train_cmd(config_file, iteration_scale, seed, out, force):
    """Train one configuration (a plan's initial config or a run config)."""
    raw = _load_json(config_file)
    splits, _ = _dataset_from_file(config_file)
    cfg_dict = raw.get("initial_config", raw.get("config"))
    if cfg_dict is None:
        raise ConfigError(f"{config_file} has neither 'initial_config' "
                          f"nor 'config'")
    scale = iteration_scale * raw.get("iteration_scale", 1.0)
    if seed is not None:
        cfg_dict = dict(cfg_dict)
        cfg_dict["train"] = {**cfg_dict["train"], "seed": int(seed)}
    hyp = orch.HypothesisConfig.from_dict(cfg_dict)
    out_dir = _prepare_out(out, force, "config.resolved")
    record = train(scale_iterations(hyp.train, scale), hyp.arch, hyp.augment,
                   splits, out_dir, echo=True)
    click.echo(f"run directory: {record.run_dir}")


@main.command(name="eval")
@click.argument("ckpt")
@click.argument("split", type=click.Choice(["train", "val", "test"]))
@click.option("--ensemble", "ensemble_flag",
              type=click.Choice(sorted(ENSEMBLE_FLAGS)), default="single",
              show_default=True)
@click.option("--data", default=None,
              help="Plan/run-config file providing the dataset "
                   "(default: config.resolved next to the checkpoint).")
@click.option("--out", default=None, help="Directory for metric_report.csv "
              "(default: print to stdout).")
@click.option("--force", is_flag=True)
@domain_errors
def eval_cmd(ckpt, split, ensemble_flag, data, out, force):
    """Per-class IoU and mIoU of one checkpoint on one split."""
    model, stored = load_model_from_checkpoint(ckpt)
    if data is None:
        sibling = Path(ckpt).parent / "config.resolved"
        candidates = [sibling, Path(ckpt).parent.parent.parent / "plan.json"]
        data = next((str(c) for c in candidates if c.is_file()), None)
        if data is None:
            raise ConfigError("no dataset binding found next to the "
                              "checkpoint; pass --data")
    splits, taxonomy = _dataset_from_file(data)
    samples = splits.get(split, [])
    if not samples:
        raise DataError(f"split {split!r} is empty")
    ecfg_d = stored["config"].get("ensemble")
    ecfg = (EnsembleConfig.from_dict(ecfg_d) if ecfg_d
            else EnsembleConfig(native=samples[0].dims))
    ecfg = EnsembleConfig(ENSEMBLE_FLAGS[ensemble_flag], ecfg.native,
                          ecfg.scales, ecfg.vote_mode).validate()
    report = evaluate_split(model, samples, ecfg)
    if out is None:
        report.write_csv(sys.stdout, taxonomy)
    else:
        out_dir = _prepare_out(out, force, "metric_report.csv")
        with (out_dir / "metric_report.csv").open("w", newline="") as fp:
            report.write_csv(fp, taxonomy)
        click.echo(f"wrote {out_dir / 'metric_report.csv'}")


@main.command(name="run")
@click.argument("plan_file")
@click.option("--resume", "resume_ledger", default=None,
              help="Ledger of a previous partial run of the same plan.")
@click.option("--iteration-scale", type=float, default=1.0)
@click.option("--seed", type=int, default=None)
@click.option("--out", default=None,
              help="Output directory [default: <plan name>_run].")
@click.option("--force", is_flag=True)
@domain_errors
def run_cmd(plan_file, resume_ledger, iteration_scale, seed, out, force):
    """Run a full additive experiment plan and emit ledger + reports."""
    plan = orch.load_plan(plan_file)
    out = out or f"{Path(plan_file).stem}_run"
    if resume_ledger is None:
        out_dir = _prepare_out(out, force, "ledger.json")
    else:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "plan.json").write_text(
        json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
    ledger, ledger_path = orch.run_plan(
        plan, out_dir, plan_path=plan_file, iteration_scale=iteration_scale,
        seed=seed, resume_ledger=resume_ledger, echo=True)
    click.echo(f"ledger: {ledger_path}")
    click.echo(f"report: {out_dir / 'report.csv'}")


@main.command(name="visualize-class")
@click.argument("ckpt")
@click.argument("class_id", type=int)
@click.option("--steps", type=int, default=100, show_default=True)
@click.option("--step-size", type=float, default=0.1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default="class_vis", show_default=True)
@click.option("--force", is_flag=True)
@domain_errors
def visualize_class(ckpt, class_id, steps, step_size, seed, out, force):
    """Gradient-ascent input visualization for one class."""
    model, _ = load_model_from_checkpoint(ckpt)
    trace = optimize_input(model, class_id, steps, step_size, seed)
    out_dir = _prepare_out(out, force, f"class_{class_id}.png",
                           f"class_{class_id}_objective.tsv")
    Image.fromarray(trace_to_image(trace)).save(
        out_dir / f"class_{class_id}.png")
    with (out_dir / f"class_{class_id}_objective.tsv").open("w") as fp:
        write_objective_tsv(fp, trace)
    status = "aborted (non-finite gradient)" if trace.aborted else "ok"
    click.echo(f"{status}: objective {trace.objective_history[0]:.4f} -> "
               f"{trace.objective_history[-1]:.4f}")
    click.echo(f"wrote {out_dir / f'class_{class_id}.png'}")


@main.command(name="report")
@click.argument("ledger_file")
@click.option("--out", default=None, help="Directory for report.csv/report.txt "
              "(default: print text report to stdout).")
@click.option("--force", is_flag=True)
@domain_errors
def report_cmd(ledger_file, out, force):
    """Regenerate report tables from a ledger."""
    ledger = orch.ExperimentLedger.load(ledger_file)
    csv_text, txt_text = orch.emit_report(ledger)
    if out is None:
        click.echo(txt_text, nl=False)
    else:
        out_dir = _prepare_out(out, force, "report.csv", "report.txt")
        (out_dir / "report.csv").write_text(csv_text)
        (out_dir / "report.txt").write_text(txt_text)
        click.echo(f"wrote {out_dir / 'report.csv'} and report.txt")


if __name__ == "__main__":
    main()
