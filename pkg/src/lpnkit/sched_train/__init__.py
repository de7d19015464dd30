"""Restarted-schedule training: the schedule itself, synthetic data and a small trainer."""

from .schedule import IterativeSchedule, ScheduleState, format_lr, lr_at, read_trace_csv
from .toy import (ToyDataset, apply_augment, augment, augment_matrix, default_flip_pairs, make_toy_dataset,
                  targets_for, warp_image)
from .trainer import (TOY_CONFIG, TOY_SCHEDULE, EpochRecord, StageResult, StrategyReport, TrainConfig,
                      build_tiny_lpn, make_batch, mse_evaluator, run_strategy, tiny_lpn_spec, train_steps)

__all__ = [
    "IterativeSchedule", "ScheduleState", "format_lr", "lr_at", "read_trace_csv",
    "ToyDataset", "apply_augment", "augment", "augment_matrix", "default_flip_pairs", "make_toy_dataset",
    "targets_for", "warp_image",
    "TOY_CONFIG", "TOY_SCHEDULE", "EpochRecord", "StageResult", "StrategyReport", "TrainConfig",
    "build_tiny_lpn", "make_batch", "mse_evaluator", "run_strategy", "tiny_lpn_spec", "train_steps",
]
