"""Training loop driving the two-stage schedule."""
from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from .data import TrainSample, augment
from .losses import LossBreakdown, loss_all
from .network import RLNet
from .schedule import HyperState, Schedule, apply_schedule, format_float

log = logging.getLogger(__name__)

LOG_FIELDS = ("stage", "epoch", "lr", "theta1", "theta2", "lambda2",
              "l_f", "l_ssim", "l_e1", "l_e2", "l_c", "l_p", "l_all", "val_psnr")


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


class Trainer:
    """Adam, batch size 1; a fresh optimizer per stage, weights carried over.

    ``max_steps`` caps the total number of optimizer steps across stages.
    """

    def __init__(self, model: RLNet, schedule: Schedule, stages: Sequence[int] = (1, 2),
                 seed: int = 0, max_steps: Optional[int] = None, train_size: Optional[int] = None,
                 flip: bool = True):
        self.model = model
        self.schedule = schedule
        self.stages = tuple(stages)
        self.seed = seed
        self.max_steps = max_steps
        self.train_size = train_size
        self.flip = flip
        self.optimizer: Optional[torch.optim.Optimizer] = None
        self.hyper: Optional[HyperState] = None
        self.step = 0
        self.rows: List[dict] = []
        self.step_losses: List[dict] = []

    def _new_optimizer(self):
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=self.schedule.base_lr,
                                          betas=(0.9, 0.999))

    def _capped(self) -> bool:
        return self.max_steps is not None and self.step >= self.max_steps

    def train_step(self, sample: TrainSample) -> LossBreakdown:
        t = sample.tensors()
        hp = self.hyper
        bundle = self.model(t["rainy"], hp.theta1, t["residual_half"], t["residual_quarter"])
        lb = loss_all(bundle, t, hp, self.model.cfg)
        self.optimizer.zero_grad(set_to_none=True)
        lb.l_all.backward()
        self.optimizer.step()
        self.step += 1
        return lb

    def fit(self, train: Sequence[TrainSample], val: Sequence[TrainSample] = (),
            log_path=None) -> List[dict]:
        if not len(train):
            raise ValueError("training set is empty")
        from .evaluation import evaluate

        writer = None
        fh = None
        if log_path is not None:
            Path(log_path).parent.mkdir(parents=True, exist_ok=True)
            fh = open(log_path, "w", newline="")
            writer = csv.DictWriter(fh, LOG_FIELDS, lineterminator="\n")
            writer.writeheader()
        self.model.train()
        try:
            for stage in self.stages:
                self._new_optimizer()
                for epoch in range(self.schedule.lengths[stage]):
                    if self._capped():
                        break
                    apply_schedule(self, self.schedule.state(stage, epoch))
                    sums = dict.fromkeys(LossBreakdown.TERMS, 0.0)
                    n = 0
                    order = np.random.default_rng(_seed(self.seed, stage, epoch)).permutation(len(train))
                    for i in order:
                        if self._capped():
                            break
                        s = train[i]
                        if self.flip or self.train_size:
                            s = augment(s, _seed(self.seed, stage, epoch, int(i)), self.train_size,
                                        flip=None if self.flip else False)
                        terms = self.train_step(s).as_dict()
                        self.step_losses.append(terms)
                        for k, v in terms.items():
                            sums[k] += v
                        n += 1
                    row = {"stage": stage, "epoch": epoch}
                    hp = self.hyper
                    row.update({"lr": hp.lr, "theta1": hp.theta1, "theta2": hp.theta2, "lambda2": hp.lam2})
                    row.update({k: v / max(n, 1) for k, v in sums.items()})
                    row["val_psnr"] = (evaluate(self.model, val, theta1=hp.theta1).mean_psnr_db
                                       if len(val) else float("nan"))
                    self.model.train()
                    self.rows.append(row)
                    log.info("stage %d epoch %d  l_all %.4f  val_psnr %.2f", stage, epoch,
                             row["l_all"], row["val_psnr"])
                    if writer:
                        writer.writerow({k: (format_float(v) if isinstance(v, float) else v)
                                         for k, v in row.items()})
                        fh.flush()
        finally:
            if fh:
                fh.close()
        self.model.eval()
        return self.rows
