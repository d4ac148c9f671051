"""PSNR/SSIM metrics, evaluation reports and the toy sweep/ablation harness."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .data import RainParams, TrainSample, synthetic_dataset, write_image
from .errors import ConfigError, InputError
from .losses import ssim as _ssim
from .network import RLNet, VARIANTS, derain, load_checkpoint, variant
from .schedule import format_float

PSNR_CAP_DB = 100.0

# Full-scale Rain200H reference numbers (PSNR, SSIM); printed for context, never asserted.
REFERENCE_THETA1 = {"RLNet-": (27.57, 0.856), 0.03: (28.48, 0.877), 0.04: (28.57, 0.882),
                0.05: (28.87, 0.895), 0.06: (28.61, 0.881)}
REFERENCE_THETA2 = {0.05: (28.74, 0.889), 0.1: (28.81, 0.890), 0.15: (28.87, 0.895), 0.2: (28.85, 0.893)}
REFERENCE_ABLATION = {"M1": (26.91, 0.830), "M2": (27.13, 0.833), "M3": (27.42, 0.847),
                  "M4": (27.39, 0.846), "M5": (27.40, 0.847), "M6": (28.69, 0.881),
                  "M7": (28.87, 0.895)}


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"image shapes {a.shape} and {b.shape} differ")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB over all channels jointly, unit peak; capped at 100 dB."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def ssim(a, b) -> float:
    """Mean SSIM of two HxWx3 images (same definition as the training loss)."""
    a, b = _pair(a, b)
    ta = torch.from_numpy(a.transpose(2, 0, 1)[None].copy())
    tb = torch.from_numpy(b.transpose(2, 0, 1)[None].copy())
    return float(_ssim(ta, tb))


@dataclass
class EvalReport:
    per_image: List[Tuple[str, float, float]]
    mean_psnr_db: float
    mean_ssim: float
    wall_time_s: float = 0.0
    config_echo: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        # wall time is left out so reruns produce identical bytes
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("name", "psnr_db", "ssim"))
        for name, p, s in self.per_image:
            w.writerow((name, f"{p:.6f}", f"{s:.6f}"))
        w.writerow(("mean", f"{self.mean_psnr_db:.6f}", f"{self.mean_ssim:.6f}"))
        return buf.getvalue()

    def pretty(self) -> str:
        width = max([len(n) for n, _, _ in self.per_image] + [4])
        lines = [f"{'name':<{width}}  {'PSNR':>8}  {'SSIM':>7}"]
        lines += [f"{n:<{width}}  {p:8.3f}  {s:7.4f}" for n, p, s in self.per_image]
        lines.append(f"{'mean':<{width}}  {self.mean_psnr_db:8.3f}  {self.mean_ssim:7.4f}")
        lines.append(f"({len(self.per_image)} images, {self.wall_time_s:.2f}s)")
        return "\n".join(lines)


def evaluate(model: Union[RLNet, str, Path], dataset: Sequence[TrainSample],
             mode: str = "with_detector", theta1: Optional[float] = None,
             expect=None, image_dir=None) -> EvalReport:
    """Derain every sample and score it against its clean image.

    ``mode="without_detector"`` bypasses rectification at inference. A
    checkpoint path may be given instead of a model; its stored theta1 is
    used unless ``theta1`` is passed.
    """
    if mode not in ("with_detector", "without_detector"):
        raise ConfigError(f"mode must be 'with_detector' or 'without_detector', got {mode!r}")
    hyper = {}
    if not isinstance(model, RLNet):
        model, payload = load_checkpoint(model, expect)
        hyper = payload.get("hyper", {})
    if theta1 is None:
        theta1 = float(hyper.get("theta1", 0.0))
    if not len(dataset):
        raise InputError("evaluation dataset is empty")

    t0 = time.perf_counter()
    rows = []
    for i, s in enumerate(dataset):
        out = derain(model, s.rainy, theta1, detector_active=(mode == "with_detector"))
        name = s.name or f"{i:04d}"
        rows.append((name, psnr(out, s.clean), ssim(out, s.clean)))
        if image_dir is not None:
            Path(image_dir).mkdir(parents=True, exist_ok=True)
            write_image(Path(image_dir) / f"{Path(name).stem}.png", out)
    echo = {"config": model.cfg.to_dict(), "mode": mode, "theta1": theta1}
    return EvalReport(rows, float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows])),
                      time.perf_counter() - t0, echo)


@dataclass
class ToyConfig:
    """Shared settings for toy-scale sweeps and ablations."""
    n_train: int = 8
    n_val: int = 4
    image_size: int = 64
    base_channels: int = 8
    depth: int = 2
    desk_scale: float = 0.05
    stages: Tuple[int, ...] = (1, 2)
    lr: float = 2e-4
    max_steps: Optional[int] = None
    variant: str = "M7"
    theta1: float = 0.15
    theta2: float = 0.15
    seed: int = 0
    rain: RainParams = RainParams()

    def datasets(self):
        train = synthetic_dataset(self.n_train, self.image_size, self.rain, seed=self.seed)
        val = synthetic_dataset(self.n_val, self.image_size, self.rain, seed=self.seed + 1)
        return train, val

    def estimator(self, **overrides):
        from .estimator import RLNetDerainer
        params = dict(variant=self.variant, base_channels=self.base_channels, depth=self.depth,
                      desk_scale=self.desk_scale, stages=self.stages, lr=self.lr,
                      max_steps=self.max_steps, theta1=self.theta1, theta2=self.theta2,
                      seed=self.seed)
        params.update(overrides)
        return RLNetDerainer(**params)


def _train_and_score(est, train, val):
    est.fit_samples(train)
    report = evaluate(est.model_, val, theta1=est.theta1_)
    return report, est


def run_sweep(param: str, values: Iterable[float], toy: ToyConfig = ToyConfig()) -> List[dict]:
    """One toy training per value of theta1 or theta2, identical seeds and data."""
    if param not in ("theta1", "theta2"):
        raise ConfigError(f"sweep parameter must be theta1 or theta2, got {param!r}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    if any(not v > 0 for v in values):
        raise ConfigError(f"sweep values must be positive, got {values}")
    train, val = toy.datasets()
    rows = []
    for v in values:
        report, est = _train_and_score(toy.estimator(**{param: v}), train, val)
        rows.append({"param": param, "value": v, "psnr_db": report.mean_psnr_db,
                     "ssim": report.mean_ssim, "variant": toy.variant})
    return rows


def run_ablation(names: Iterable[str] = tuple(VARIANTS), toy: ToyConfig = ToyConfig()) -> List[dict]:
    """One toy training per ablation variant under shared seeds and data."""
    names = [n.upper() for n in names]
    for n in names:
        variant(n)  # validates the name
    train, val = toy.datasets()
    rows = []
    for n in names:
        report, est = _train_and_score(toy.estimator(variant=n), train, val)
        row = {"variant": n, "psnr_db": report.mean_psnr_db, "ssim": report.mean_ssim}
        row.update(est.model_.cfg.flags)
        rows.append(row)
    return rows


def table_to_csv(rows: List[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (format_float(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def format_table(rows: List[dict]) -> str:
    if not rows:
        return "(empty)"
    cols = list(rows[0])
    cells = [[format_float(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    out = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    out += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(out)
