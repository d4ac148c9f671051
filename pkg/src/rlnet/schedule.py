"""Two-stage training schedule: learning rate and loss-weight annealing.

"Reaching epoch N" means the change is in effect from the start of
(0-indexed) epoch N. A ``desk_scale`` factor compresses stage lengths and
event epochs alike, rounding half up, so the waveform survives at toy size.
When two events land on the same scaled epoch they apply in their original
order.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import List, NamedTuple

from .errors import ConfigError

STAGE1_EPOCHS = 90
STAGE2_EPOCHS = 240
BASE_LR = 2e-4
STAGE1_LR_DROPS = (50, 65, 80)
STAGE1_LR_FACTOR = 5
STAGE2_LR_PERIOD = 30
STAGE2_LR_FACTOR = 2
THETA2_INITIAL = 0.05
THETA2_SWITCH = 20
STAGE1_LAM2_SWITCH = 30
STAGE1_LAM2 = 6.0
STAGE2_LAM2 = 0.6
THETA1_FINETUNE = 0.15
THETA2_FINAL = 0.15
LAM, LAM1, LAM3 = 0.01, 0.6, 0.6

CSV_FIELDS = ("stage", "epoch", "lr", "theta1", "theta2", "lambda", "lambda1", "lambda2", "lambda3")


@dataclass(frozen=True)
class HyperState:
    theta1: float
    theta2: float
    lam: float
    lam1: float
    lam2: float
    lam3: float
    lr: float
    stage: int = 1
    epoch: int = 0

    def __post_init__(self):
        for k in ("theta1", "theta2", "lam", "lam1", "lam2", "lam3"):
            v = getattr(self, k)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{k} must be finite and >= 0, got {v}")
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        limit = STAGE1_EPOCHS if self.stage == 1 else STAGE2_EPOCHS
        if not 0 <= self.epoch < limit:
            raise ConfigError(f"stage {self.stage} epoch {self.epoch} outside [0, {limit})")

    def to_dict(self) -> dict:
        return asdict(self)


class Event(NamedTuple):
    stage: int
    epoch: int  # scaled
    source_epoch: int  # as stated, unscaled
    key: str
    value: float  # new value; for "lr" the divisor


def scale_epoch(n: int, desk_scale: float) -> int:
    return int(math.floor(n * desk_scale + 0.5))


class Schedule:
    """Hyperparameter trajectory for both training stages."""

    def __init__(self, desk_scale: float = 1.0, base_lr: float = BASE_LR,
                 theta1_finetune: float = THETA1_FINETUNE, theta2_final: float = THETA2_FINAL):
        if not 0 < desk_scale <= 1:
            raise ConfigError(f"desk_scale must be in (0, 1], got {desk_scale}")
        if not base_lr > 0:
            raise ConfigError(f"base_lr must be positive, got {base_lr}")
        if theta1_finetune < 0 or theta2_final < 0:
            raise ConfigError("theta values must be non-negative")
        self.desk_scale = desk_scale
        self.base_lr = base_lr
        self.theta1_finetune = theta1_finetune
        self.theta2_final = theta2_final
        self.lengths = {1: max(1, scale_epoch(STAGE1_EPOCHS, desk_scale)),
                        2: max(1, scale_epoch(STAGE2_EPOCHS, desk_scale))}
        self._events = {1: self._stage_events(1), 2: self._stage_events(2)}

    def _stage_events(self, stage: int) -> List[Event]:
        raw = [(THETA2_SWITCH, "theta2", self.theta2_final)]
        if stage == 1:
            raw += [(e, "lr", STAGE1_LR_FACTOR) for e in STAGE1_LR_DROPS]
            raw.append((STAGE1_LAM2_SWITCH, "lam2", STAGE1_LAM2))
        else:
            raw += [(e, "lr", STAGE2_LR_FACTOR)
                    for e in range(STAGE2_LR_PERIOD, STAGE2_EPOCHS, STAGE2_LR_PERIOD)]
            raw += [(30 * k, "lam2", 0.0) for k in range(1, 7)]
            raw += [(30 * k + 15, "lam2", STAGE2_LAM2) for k in range(0, 6)]
        raw.sort(key=lambda t: t[0])
        events = [Event(stage, scale_epoch(e, self.desk_scale), e, k, v) for e, k, v in raw]
        return [ev for ev in events if ev.epoch < self.lengths[stage]]

    def events(self, stage: int) -> List[Event]:
        return list(self._events[stage])

    def state(self, stage: int, epoch: int) -> HyperState:
        if stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {stage}")
        if not 0 <= epoch < self.lengths[stage]:
            raise ConfigError(f"stage {stage} epoch {epoch} outside [0, {self.lengths[stage]})")
        v = {"theta1": 0.0 if stage == 1 else self.theta1_finetune, "theta2": THETA2_INITIAL,
             "lam2": 0.0, "lr": self.base_lr}
        for ev in self._events[stage]:
            if ev.epoch > epoch:
                continue
            if ev.key == "lr":
                v["lr"] /= ev.value
            else:
                v[ev.key] = ev.value
        return HyperState(theta1=v["theta1"], theta2=v["theta2"], lam=LAM, lam1=LAM1,
                          lam2=v["lam2"], lam3=LAM3, lr=v["lr"], stage=stage, epoch=epoch)

    def table(self) -> List[HyperState]:
        return [self.state(s, e) for s in (1, 2) for e in range(self.lengths[s])]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for h in self.table():
            w.writerow([h.stage, h.epoch] + [format_float(x) for x in
                                             (h.lr, h.theta1, h.theta2, h.lam, h.lam1, h.lam2, h.lam3)])
        return buf.getvalue()


def format_float(x: float) -> str:
    return f"{x:.6g}"


def stage1_state(epoch: int) -> HyperState:
    return Schedule().state(1, epoch)


def stage2_state(epoch: int) -> HyperState:
    return Schedule().state(2, epoch)


def apply_schedule(trainer, hp: HyperState):
    """Push ``hp`` into a trainer: optimizer learning rate and loss weights."""
    for group in trainer.optimizer.param_groups:
        group["lr"] = hp.lr
    trainer.hyper = hp
    return trainer
