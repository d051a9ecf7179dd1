"""Preset experiment plans.

The RTK plan encodes the full 14-experiment additive chain; the TAS500 plan
is the reduced six-experiment variant; the baseline plan is the two-stage
starting recipe alone. All three bind a small synthetic stand-in dataset so
they run anywhere; spatial parameters (crops, ensemble scales) are sized for
the stand-in and the notes field records the full-resolution equivalents to
use with real data.
"""

from __future__ import annotations

import json
from pathlib import Path

from .orchestrator import Plan, Experiment, Hypothesis


def _loss(*kinds: str) -> dict:
    return {"terms": [{"kind": k, "weight": 1.0} for k in kinds],
            "class_weights": None, "epsilon": 1e-6}


def _stage(iterations: int, *kinds: str) -> dict:
    return {"loss": _loss(*kinds), "iterations": iterations}


def _sgd_patch() -> dict:
    return {"kind": "sgd", "lr": 0.01, "momentum": 0.9, "weight_decay": 5e-4,
            "warmup_iters": 5000, "poly_power": 0.9}


def _rtk_initial() -> dict:
    return {
        "arch": {
            "family": "unet", "encoder": "resnet34", "output_stride": 32,
            "max_pool_in_stem": True, "hlfe": False,
            "decoder_upsampling": "bilinear", "num_classes": 12,
            "encoder_weights": None,
        },
        "augment": {
            "crop_size": [56, 56],
            "resize_scale_range": [0.78, 2.0],
            "color": {"grayscale_prob": 0.1, "jitter_strength": 0.27},
            "geom_rtk": {"enabled": True, "perspective_magnitude": 0.1,
                         "hflip_prob": 0.5},
            "cutmix_prob": 0.0,
            "hflip_prob": 0.5,
            "pipeline": ["geom_rtk"],
        },
        "train": {
            "optimizer": {"kind": "adam", "lr": 1e-4, "momentum": 0.9,
                          "weight_decay": 0.0, "warmup_iters": 0,
                          "poly_power": 0.9},
            "batch_size": 8,
            "max_iterations": 14000,
            "stages": [_stage(7000, "ce"), _stage(7000, "wce")],
            "val_every": 2000,
            "checkpoint_every": 2000,
            "seed": 1234,
        },
        "ensemble": {
            "strategy": "single",
            "native": [72, 88],
            "scales": [[56, 72], [88, 112], [72, 88]],
            "vote_mode": "hard",
        },
    }


def _iters_patch(total: int, *stage_kinds) -> dict:
    per = total // len(stage_kinds)
    stages = [_stage(per, *kinds) for kinds in stage_kinds]
    stages[-1]["iterations"] = total - per * (len(stage_kinds) - 1)
    return {"max_iterations": total, "stages": stages}


def rtk_plan() -> Plan:
    two_stage = (("ce",), ("wce",))
    experiments = [
        Experiment("B: Iterations", "B", [
            Hypothesis("14k", {}),
            Hypothesis("100k", {"train": _iters_patch(100000, *two_stage)}),
            Hypothesis("200k", {"train": _iters_patch(200000, *two_stage)}),
        ]),
        Experiment("B: Single-stage", "B", [
            Hypothesis("WCE", {"train": _iters_patch(200000, ("wce",))}),
            Hypothesis("CE", {"train": _iters_patch(200000, ("ce",))}),
        ]),
        Experiment("T: DataAug", "T", [
            Hypothesis("None", {"augment": {"pipeline": []}}),
            Hypothesis("Cutmix80", {"augment": {"pipeline": ["cutmix"],
                                                "cutmix_prob": 0.8}}),
            Hypothesis("Cutmix50", {"augment": {"pipeline": ["cutmix"],
                                                "cutmix_prob": 0.5}}),
            Hypothesis("Resizing+Crop", {"augment": {"pipeline":
                                                     ["resize", "crop"]}}),
            Hypothesis("Crop+Color", {"augment": {"pipeline":
                                                  ["crop", "color"]}}),
            Hypothesis("Crop", {"augment": {"pipeline": ["crop"]}}),
        ]),
        Experiment("A: Encoder Depth", "A", [
            Hypothesis("ResNet-50", {"arch": {"encoder": "resnet50"}}),
            Hypothesis("ResNet-101", {"arch": {"encoder": "resnet101"}}),
        ]),
        Experiment("A: ResNet Variants", "A", [
            Hypothesis("ResNet-101 (incumbent)", {}),
            Hypothesis("Res2Net-101", {"arch": {"encoder": "res2net101"}}),
            Hypothesis("ResNeXt-101", {"arch": {"encoder": "resnext101"}}),
            Hypothesis("ResNeSt-101", {"arch": {"encoder": "resnest101"}}),
        ]),
        Experiment("A: Arch", "A", [
            Hypothesis("U-Net R101 (incumbent)", {}),
            Hypothesis("DL3+ R101", {"arch": {"family": "deeplabv3plus",
                                              "output_stride": 16}}),
            Hypothesis("DL3+ R50", {"arch": {"family": "deeplabv3plus",
                                             "encoder": "resnet50",
                                             "output_stride": 16}}),
        ], pin="DL3+ R50"),
        Experiment("A: OS", "A", [
            Hypothesis("OS 8", {"arch": {"output_stride": 8}}),
            Hypothesis("OS 4", {"arch": {"output_stride": 4}}),
        ]),
        Experiment("A: wo/ MP", "A", [
            Hypothesis("OS 4 wo/MP", {"arch": {"output_stride": 4,
                                               "max_pool_in_stem": False}}),
            Hypothesis("OS 8 wo/MP", {"arch": {"output_stride": 8,
                                               "max_pool_in_stem": False}}),
            Hypothesis("OS 16 wo/MP", {"arch": {"output_stride": 16,
                                                "max_pool_in_stem": False}}),
        ]),
        Experiment("A: ConvT", "A", [
            Hypothesis("Bilinear (incumbent)", {}),
            Hypothesis("Transposed conv",
                       {"arch": {"decoder_upsampling": "transposed_conv"}}),
        ]),
        Experiment("A: HLFE", "A", [
            Hypothesis("OS 16 (incumbent)", {}),
            Hypothesis("HLFE OS 4", {"arch": {"output_stride": 4,
                                              "hlfe": True}}),
            Hypothesis("HLFE OS 8", {"arch": {"output_stride": 8,
                                              "hlfe": True}}),
        ], pin="OS 16 (incumbent)"),
        Experiment("T: Cutmix", "T", [
            Hypothesis("Cutmix 50%", {"augment": {"pipeline": ["crop", "cutmix"],
                                                  "cutmix_prob": 0.5}}),
            Hypothesis("Cutmix 80%", {"augment": {"pipeline": ["crop", "cutmix"],
                                                  "cutmix_prob": 0.8}}),
        ]),
        Experiment("T: Optimizer", "T", [
            Hypothesis("Adam (incumbent)", {}),
            Hypothesis("SGD", {"train": {"optimizer": _sgd_patch()}}),
        ]),
        Experiment("T: Losses", "T", [
            Hypothesis("WCE", {"train": _iters_patch(200000, ("wce",))}),
            Hypothesis("mIoU", {"train": _iters_patch(200000, ("soft_miou",))}),
            Hypothesis("dice", {"train": _iters_patch(200000, ("soft_dice",))}),
            Hypothesis("CE+mIoU", {"train": _iters_patch(200000,
                                                         ("ce", "soft_miou"))}),
            Hypothesis("CE+dice", {"train": _iters_patch(200000,
                                                         ("ce", "soft_dice"))}),
            Hypothesis("CE (incumbent)", {}),
        ]),
        Experiment("P: Voting Ensemble", "P", [
            Hypothesis("Single Prediction", {"ensemble":
                                             {"strategy": "single"}}),
            Hypothesis("MultiScale+Flipped", {"ensemble":
                                              {"strategy":
                                               "multiscale_flipped"}}),
            Hypothesis("Flipped", {"ensemble": {"strategy": "flipped"}}),
        ]),
    ]
    return Plan(
        name="rtk_pisss",
        dataset={"synthetic": {"seed": 7, "n": 24, "dims": [72, 88],
                               "num_classes": 12}},
        initial_config=_rtk_initial(),
        experiments=experiments,
        notes=("Synthetic stand-in at quarter RTK scale. With real RTK data "
               "(352x288 images) swap the dataset section for a manifest and "
               "use crop_size [224, 224], ensemble native [288, 352], scales "
               "[[224, 288], [352, 448], [288, 352]]."),
    ).validate()


def tas500_plan() -> Plan:
    initial = _rtk_initial()
    initial["arch"].update({"family": "deeplabv3plus", "encoder": "resnet50",
                            "output_stride": 16, "num_classes": 10})
    initial["augment"].update({"crop_size": [52, 104], "pipeline": ["crop"]})
    initial["augment"]["geom_rtk"]["enabled"] = False
    initial["train"].update({
        "batch_size": 4,
        "max_iterations": 200000,
        "stages": [_stage(200000, "ce")],
    })
    initial["train"]["optimizer"]["lr"] = 5e-5
    initial["ensemble"].update({
        "native": [64, 208],
        "scales": [[48, 156], [64, 208], [80, 260]],
    })
    experiments = [
        Experiment("T: DataAug", "T", [
            Hypothesis("Crop+Color", {"augment": {"pipeline":
                                                  ["crop", "color"]}}),
            Hypothesis("Crop", {"augment": {"pipeline": ["crop"]}}),
            Hypothesis("Res+Crop+Color", {"augment": {"pipeline":
                                                      ["resize", "crop",
                                                       "color"]}}),
            Hypothesis("Res+Crop", {"augment": {"pipeline":
                                                ["resize", "crop"]}}),
        ]),
        Experiment("A: OS", "A", [
            Hypothesis("OS 16 (incumbent)", {}),
            Hypothesis("OS 32", {"arch": {"output_stride": 32}}),
            Hypothesis("OS 8", {"arch": {"output_stride": 8}}),
        ]),
        Experiment("T: HLFE", "T", [
            Hypothesis("No HLFE (incumbent)", {}),
            Hypothesis("HLFE", {"arch": {"hlfe": True}}),
        ]),
        Experiment("T: Cutmix", "T", [
            Hypothesis("No cutmix (incumbent)", {}),
            Hypothesis("Cutmix 80%", {"augment": {"pipeline":
                                                  ["resize", "crop", "cutmix"],
                                                  "cutmix_prob": 0.8}}),
        ]),
        Experiment("T: Losses", "T", [
            Hypothesis("CE+dice + SGD", {"train": {
                "optimizer": _sgd_patch(),
                **_iters_patch(200000, ("ce", "soft_dice")),
            }}),
        ]),
        Experiment("P: Voting Ensemble", "P", [
            Hypothesis("Single Prediction", {"ensemble":
                                             {"strategy": "single"}}),
            Hypothesis("Flipped", {"ensemble": {"strategy": "flipped"}}),
            Hypothesis("MultiScale+Flipped", {"ensemble":
                                              {"strategy":
                                               "multiscale_flipped"}}),
        ]),
    ]
    return Plan(
        name="tas500_pisss",
        dataset={"synthetic": {"seed": 11, "n": 12, "dims": [64, 208],
                               "num_classes": 10}},
        initial_config=initial,
        experiments=experiments,
        notes=("Synthetic stand-in; TAS500 images are 2026x620 trained on "
               "1024x512 crops. With real data use crop_size [512, 1024] and "
               "scale the ensemble resolutions to match."),
    ).validate()


def baseline_plan() -> Plan:
    return Plan(
        name="baseline",
        dataset={"synthetic": {"seed": 7, "n": 24, "dims": [72, 88],
                               "num_classes": 12}},
        initial_config=_rtk_initial(),
        experiments=[],
        notes="Two-stage starting recipe alone: U-Net/ResNet-34, Adam 1e-4, "
              "batch 8, GeomRTK, CE then WCE (7k + 7k iterations).",
    ).validate()


def preset_plans() -> dict[str, Plan]:
    return {"rtk_pisss": rtk_plan(), "tas500_pisss": tas500_plan(),
            "baseline": baseline_plan()}


PLAN_FILES = {"rtk_pisss": "rtk.json", "tas500_pisss": "tas500.json",
              "baseline": "baseline.json"}


def write_plan_files(directory) -> list[Path]:
    """Serialize the presets into <directory>/{rtk,tas500,baseline}.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, plan in preset_plans().items():
        path = directory / PLAN_FILES[name]
        path.write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True)
                        + "\n")
        written.append(path)
    return written
