"""scikit-learn compatible wrapper around network construction and training."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import TrainSample, make_sample
from .evaluation import evaluate
from .network import RLNet, derain, load_checkpoint, save_checkpoint, variant
from .schedule import Schedule
from .training import Trainer
from .validation import check_image_pairs, check_images


class RLNetDerainer(TransformerMixin, BaseEstimator):
    """Rain removal estimator.

    ``fit(X, y)`` takes rainy images ``X`` and clean images ``y`` as
    ``(N, H, W, 3)`` arrays in [0, 1]; ``transform(X)`` returns derained
    images. ``score`` is the mean PSNR in dB.

    Parameters
    ----------
    variant : str
        Ablation variant, ``"M1"`` .. ``"M7"`` (M7 is the full network).
    base_channels, depth, se_reduction : int
        Network width, U-FFRB depth and SE reduction ratio.
    desk_scale : float
        Compresses both schedule stages; 1.0 is the full 90 + 240 epochs.
    stages : tuple of int
        Which training stages to run, in order.
    lr : float
        Initial learning rate of each stage.
    theta1 : float
        Threshold used in the fine-tuning stage and at inference.
    theta2 : float
        Transformation weight reached after the first annealing event.
    flags : dict or None
        Per-flag overrides of the variant, e.g. ``{"use_detector": False}``.
    detach_err : bool
        Stop gradients through the reconstructed error during rectification.
    keep_detector : bool
        Keep rectification active at inference; False drops it after training.
    max_steps : int or None
        Cap on the total number of optimizer steps.
    train_size : int or None
        Resize training pairs to this square size (multiple of 32).
    """

    def __init__(self, variant: str = "M7", base_channels: int = 16, depth: int = 2,
                 se_reduction: int = 16, desk_scale: float = 0.05, stages: Sequence[int] = (1, 2),
                 lr: float = 2e-4, theta1: float = 0.15, theta2: float = 0.15,
                 flags: Optional[dict] = None, detach_err: bool = False, keep_detector: bool = True,
                 max_steps: Optional[int] = None, train_size: Optional[int] = None,
                 seed: int = 0, log_path=None):
        self.variant = variant
        self.base_channels = base_channels
        self.depth = depth
        self.se_reduction = se_reduction
        self.desk_scale = desk_scale
        self.stages = stages
        self.lr = lr
        self.theta1 = theta1
        self.theta2 = theta2
        self.flags = flags
        self.detach_err = detach_err
        self.keep_detector = keep_detector
        self.max_steps = max_steps
        self.train_size = train_size
        self.seed = seed
        self.log_path = log_path

    def build_config(self):
        overrides = {k: v for k, v in (self.flags or {}).items() if v is not None}
        return variant(self.variant, base_channels=self.base_channels, depth=self.depth,
                       se_reduction=self.se_reduction, detach_err=self.detach_err, **overrides)

    def build_schedule(self) -> Schedule:
        return Schedule(self.desk_scale, self.lr, theta1_finetune=self.theta1, theta2_final=self.theta2)

    def fit(self, X, y, X_val=None, y_val=None):
        multiple = 1 if self.train_size else 32
        X, y = check_image_pairs(X, y, multiple)
        train = [make_sample(r, c, f"{i:04d}") for i, (r, c) in enumerate(zip(X, y))]
        val = []
        if X_val is not None:
            Xv, yv = check_image_pairs(X_val, y_val)
            val = [make_sample(r, c, f"val{i:04d}") for i, (r, c) in enumerate(zip(Xv, yv))]
        return self.fit_samples(train, val)

    def fit_samples(self, train: Sequence[TrainSample], val: Sequence[TrainSample] = ()):
        """Fit on prepared samples (as produced by the data module)."""
        torch.manual_seed(self.seed)
        model = RLNet(self.build_config())
        trainer = Trainer(model, self.build_schedule(), tuple(self.stages), self.seed,
                          self.max_steps, self.train_size)
        self.history_ = trainer.fit(train, val, self.log_path)
        self.step_losses_ = trainer.step_losses
        self.hyper_ = trainer.hyper
        self.theta1_ = trainer.hyper.theta1 if trainer.hyper is not None else 0.0
        self.model_ = model
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_images(X)
        out = np.stack([derain(self.model_, x, self.theta1_, self.keep_detector) for x in X])
        return out

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y) -> float:
        check_is_fitted(self, "model_")
        X, y = check_image_pairs(X, y)
        samples = [make_sample(r, c) for r, c in zip(X, y)]
        mode = "with_detector" if self.keep_detector else "without_detector"
        return evaluate(self.model_, samples, mode, self.theta1_).mean_psnr_db

    def save(self, path):
        check_is_fitted(self, "model_")
        hyper = self.hyper_.to_dict() if self.hyper_ is not None else {"theta1": self.theta1_}
        save_checkpoint(path, self.model_, hyper, extra={"params": _plain(self.get_params())})

    @classmethod
    def load(cls, path) -> "RLNetDerainer":
        model, payload = load_checkpoint(path)
        params = {k: v for k, v in payload.get("extra", {}).get("params", {}).items()
                  if k in cls._get_param_names()}
        est = cls(**params)
        est.model_ = model
        est.theta1_ = float(payload.get("hyper", {}).get("theta1", 0.0))
        est.hyper_ = None
        est.history_ = []
        return est


def _plain(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        if v is None or isinstance(v, (bool, int, float, str, list, dict)):
            out[k] = v
        else:
            out[k] = str(v)
    return out
