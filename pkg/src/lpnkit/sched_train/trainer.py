"""Toy training loop and the staged restart strategy."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .. import autodiff as ad
from ..errors import FileFormatError, ScheduleError, WeightMismatchError
from ..layers import Module
from ..network import NetworkSpec, build_network
from ..weights import load_state, load_weights, save_weights
from .schedule import IterativeSchedule, ScheduleState, format_lr
from .toy import ToyDataset, augment, targets_for


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    optimizer: str = "adam"
    init_std: float = 0.001
    rotation: float = 40.0
    scale: float = 0.3
    flip_prob: float = 0.5
    loss: str = "mse"
    sigma: float = 2.0
    augment: bool = True
    use_visibility_mask: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.init_std <= 0 or self.sigma <= 0:
            raise ValueError("init_std and sigma must be positive")
        if not (0 <= self.rotation <= 180 and 0 <= self.scale < 1 and 0 <= self.flip_prob <= 1):
            raise ValueError(f"augmentation ranges out of bounds: {self}")
        if self.optimizer != "adam" or self.loss != "mse":
            raise ValueError("only the Adam optimizer and MSE loss are supported")


# desk-scale settings: no augmentation, one block per stage
TOY_CONFIG = TrainConfig(augment=False)
TOY_SCHEDULE = IterativeSchedule(milestones=(9, 12), stage_end_epoch=15, restart_epoch=6, num_stages=3)


def tiny_lpn_spec(num_joints=4, image_size=(64, 48), stage_blocks=(1, 1, 1, 1)) -> NetworkSpec:
    return NetworkSpec(family="lpn", depth=50, use_gc=True, num_joints=num_joints, input_size=tuple(image_size),
                       widths=(8, 16, 32, 64), head_channels=32, stage_blocks=tuple(stage_blocks))


def build_tiny_lpn(seed=0, config: TrainConfig = TOY_CONFIG, **kw):
    return build_network(tiny_lpn_spec(**kw), np.random.default_rng(seed), config.init_std)


def make_batch(data: ToyDataset, idx, config: TrainConfig, rng: np.random.Generator):
    """Images, target heatmaps and visibility mask for ``idx``, augmented when enabled."""
    if not config.augment:
        return data.images[idx], data.heatmaps[idx], data.visible[idx]
    imgs, maps, vis = [], [], []
    for i in idx:
        img, joints, _ = augment(data.images[i], data.joints[i], config, rng, data.flip_pairs)
        hm, ok = targets_for(joints, data.image_size, config.sigma)
        imgs.append(img)
        maps.append(hm)
        vis.append(ok)
    return np.stack(imgs), np.stack(maps), np.stack(vis)


def train_step(model: Module, opt: ad.Adam, images, targets, mask=None) -> float:
    opt.zero_grad()
    m = None if mask is None else mask[:, :, None, None].astype(images.dtype)
    loss = ad.mse_loss(model(images), targets, m)
    loss.backward()
    opt.step()
    return float(loss.data)


def iterate_batches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def train_steps(model: Module, data: ToyDataset, steps: int, config: TrainConfig = TOY_CONFIG,
                lr: float = 1e-3, seed: int = 0) -> list[float]:
    """Plain optimisation for a fixed number of steps; returns the per-step losses."""
    rng = np.random.default_rng(seed)
    opt = ad.Adam(model.parameters(), lr=lr)
    model.train()
    losses = []
    while len(losses) < steps:
        for idx in iterate_batches(len(data), config.batch_size, rng):
            imgs, maps, vis = make_batch(data, idx, config, rng)
            losses.append(train_step(model, opt, imgs, maps, vis if config.use_visibility_mask else None))
            if len(losses) == steps:
                break
    return losses


def mse_evaluator(data: ToyDataset, batch_size: int = 64) -> Callable[[Module], float]:
    """Validation metric: negative heatmap MSE in eval mode (higher is better)."""

    def evaluate(model: Module) -> float:
        was_training = model.training
        model.eval()
        total = 0.0
        with ad.no_grad():
            for i in range(0, len(data), batch_size):
                pred = model(data.images[i:i + batch_size]).data
                total += float(((pred - data.heatmaps[i:i + batch_size]) ** 2).sum())
        model.train(was_training)
        return -total / data.heatmaps.size

    return evaluate


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    lr: float
    train_loss: float
    val_metric: float


@dataclass
class StageResult:
    stage: int
    best_metric: float
    best_epoch: Optional[int]   # None: no epoch beat the checkpoint carried into the stage
    checkpoint: Optional[str]
    gain: float


@dataclass
class StrategyReport:
    stages: list[StageResult] = field(default_factory=list)
    log: list[EpochRecord] = field(default_factory=list)

    @property
    def final_metric(self) -> float:
        return self.stages[-1].best_metric

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "epoch", "lr", "train_loss", "val_metric"])
        for r in self.log:
            w.writerow([r.stage, r.epoch, format_lr(r.lr), f"{r.train_loss:.8g}", f"{r.val_metric:.8g}"])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'stage':>5}  {'best metric':>14}  {'gain':>12}  best epoch"]
        for s in self.stages:
            gain = "" if s.stage == 0 else f"{s.gain:+.6g}"
            epoch = "carried" if s.best_epoch is None else str(s.best_epoch)
            lines.append(f"{s.stage:>5}  {s.best_metric:>14.6g}  {gain:>12}  {epoch}")
        return "\n".join(lines)


def run_strategy(model: Module, data: ToyDataset, schedule: IterativeSchedule = TOY_SCHEDULE,
                 config: TrainConfig = TOY_CONFIG, evaluator: Optional[Callable[[Module], float]] = None,
                 seed: int = 0, out_dir=None, on_epoch: Optional[Callable[[EpochRecord], None]] = None
                 ) -> StrategyReport:
    """Train stage by stage, restarting each later stage from the previous stage's best weights.

    The best model of a stage is the highest validation metric seen at the end
    of an epoch; ties keep the earlier one. From stage 1 on, the weights carried
    in are scored first and count as a candidate, so a stage never reports a
    worse best than the one before it. With ``out_dir`` the best weights of each
    stage are written as ``stage{s}_best.lpnw`` and reloaded from disk.
    """
    if evaluator is None:
        raise ValueError("an evaluator is required")
    rng = np.random.default_rng(seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = StrategyReport()
    state = ScheduleState()
    best_state: Optional[dict] = None

    for stage in range(schedule.num_stages):
        best = -math.inf
        best_epoch = None
        if stage > 0:
            _restore(model, best_state, state.best_checkpoints.get(stage - 1))
            best = evaluator(model)
            best_state = _snapshot(model)
        opt = ad.Adam(model.parameters(), lr=schedule.base_lr)
        model.train()
        for epoch in schedule.epochs(stage):
            state.advance(schedule, stage, epoch)
            opt.lr = state.lr
            losses = []
            for idx in iterate_batches(len(data), config.batch_size, rng):
                imgs, maps, vis = make_batch(data, idx, config, rng)
                losses.append(train_step(model, opt, imgs, maps, vis if config.use_visibility_mask else None))
            metric = evaluator(model)
            rec = EpochRecord(stage, epoch, state.lr, float(np.mean(losses)), metric)
            report.log.append(rec)
            if on_epoch is not None:
                on_epoch(rec)
            if metric > best:
                best, best_epoch, best_state = metric, epoch, _snapshot(model)
        path = None
        if out is not None:
            path = str(out / f"stage{stage}_best.lpnw")
            _restore_to_file(model, best_state, path)
        state.best_metric = best
        state.best_checkpoints[stage] = path
        prev = report.stages[-1].best_metric if report.stages else best
        report.stages.append(StageResult(stage, best, best_epoch, path, best - prev))
    if best_state is not None:
        load_state(model, best_state)
    return report


def _snapshot(model: Module) -> dict:
    return {k: v.copy() for k, v in model.state_dict().items()}


def _restore(model, snapshot, path):
    try:
        if path is not None:
            load_weights(model, path)
        else:
            load_state(model, snapshot)
    except (OSError, FileFormatError, WeightMismatchError) as exc:
        raise ScheduleError(f"could not load the previous stage's best checkpoint {path!r}: {exc}") from exc


def _restore_to_file(model, snapshot, path):
    # write the stage's best weights without disturbing the live model
    live = _snapshot(model)
    load_state(model, snapshot)
    save_weights(model, path)
    load_state(model, live)
