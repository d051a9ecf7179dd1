"""Config-driven semantic-segmentation training and ablation harness."""

from .augment import AugmentConfig, apply_pipeline, cutmix, geom_rtk, \
    color_augment, random_crop, random_resize
from .dataset import (ClassTaxonomy, DatasetStats, Sample, dataset_statistics,
                      decode_color_mask, encode_color_mask, load_dataset,
                      make_synthetic_fixture)
from .ensemble import (EnsembleConfig, evaluate_checkpoints, predict,
                       predict_flipped, predict_multiscale_flipped)
from .errors import (ConfigError, DataError, IncompatibleCheckpoint,
                     InvalidSpec, PisssError, TrainingDiverged, UnknownColor)
from .introspect import OptimizationTrace, count_spurious_blobs, optimize_input
from .losses import (LossConfig, LossTerm, ce_loss, compound_loss,
                     soft_dice_loss, soft_miou_loss, wce_loss)
from .metrics import (ConfusionMatrix, MetricReport, bias_analysis, miou,
                      smoothed_validation_score)
from .models import ArchSpec, StridePlan, apply_hlfe, build_model, stride_plan
from .orchestrator import (Experiment, ExperimentLedger, Hypothesis,
                           HypothesisConfig, Plan, emit_report, load_plan,
                           resolve, run_experiment, run_plan, select_winner)
from .plans import preset_plans, write_plan_files
from .trainer import (OptimizerConfig, RunRecord, StageConfig, TrainConfig,
                      lr_at, resume, scale_iterations, train)

__version__ = "0.1.0"
