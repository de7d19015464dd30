"""Piecewise-constant learning rate with periodic restarts."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

from ..errors import ScheduleError


@dataclass(frozen=True)
class IterativeSchedule:
    """Every stage uses the same milestone rule; later stages resume at ``restart_epoch``.

    Stage 0 trains epochs ``[0, stage_end_epoch)``, each later stage
    ``[restart_epoch, stage_end_epoch)``. A milestone applies from its own
    epoch on (epoch 90 already runs at the reduced rate).
    """

    base_lr: float = 1e-3
    milestones: tuple[int, ...] = (90, 120)
    gamma: float = 0.1
    stage_end_epoch: int = 150
    restart_epoch: int = 60
    num_stages: int = 7

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.base_lr <= 0 or self.gamma <= 0 or self.num_stages < 1:
            raise ScheduleError("base_lr, gamma and num_stages must be positive")
        if self.restart_epoch <= 0:
            raise ScheduleError("restart_epoch must be positive")
        points = (self.restart_epoch, *self.milestones, self.stage_end_epoch)
        if any(a >= b for a, b in zip(points, points[1:])):
            raise ScheduleError(f"need restart < milestones (increasing) < stage end, got {points}")

    def start_epoch(self, stage: int) -> int:
        self._check_stage(stage)
        return 0 if stage == 0 else self.restart_epoch

    def epochs(self, stage: int) -> range:
        return range(self.start_epoch(stage), self.stage_end_epoch)

    @property
    def total_epochs(self) -> int:
        return sum(len(self.epochs(s)) for s in range(self.num_stages))

    def lr_at(self, stage: int, epoch: int) -> float:
        start = self.start_epoch(stage)
        if epoch < start:
            raise ScheduleError(f"epoch {epoch} precedes the start of stage {stage} (epoch {start})")
        if epoch > self.stage_end_epoch:
            raise ScheduleError(f"epoch {epoch} is past the stage end ({self.stage_end_epoch})")
        k = sum(epoch >= m for m in self.milestones)
        return self.base_lr * self.gamma ** k

    def _check_stage(self, stage):
        if not 0 <= stage < self.num_stages:
            raise ScheduleError(f"stage {stage} outside [0, {self.num_stages})")

    def trace(self) -> list[tuple[int, int, float]]:
        return [(s, e, self.lr_at(s, e)) for s in range(self.num_stages) for e in self.epochs(s)]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "epoch", "lr"])
        for s, e, lr in self.trace():
            w.writerow([s, e, format_lr(lr)])
        return buf.getvalue()


def format_lr(lr: float) -> str:
    return f"{lr:.6g}"


def lr_at(schedule: IterativeSchedule, stage: int, epoch: int) -> float:
    return schedule.lr_at(stage, epoch)


def read_trace_csv(text: str) -> list[tuple[int, int, float]]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [(int(r["stage"]), int(r["epoch"]), float(r["lr"])) for r in rows]


@dataclass
class ScheduleState:
    """Where a strategy run currently is."""

    stage: int = 0
    epoch: int = 0
    lr: float = 0.0
    best_metric: float = float("-inf")
    best_checkpoints: dict[int, Optional[str]] = field(default_factory=dict)

    def advance(self, schedule: IterativeSchedule, stage: int, epoch: int) -> "ScheduleState":
        self.stage, self.epoch = stage, epoch
        self.lr = schedule.lr_at(stage, epoch)
        return self
