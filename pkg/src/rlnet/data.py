"""Rain pair synthesis, loading, multi-scale ground truth and augmentation.

Images are ``H x W x 3`` float32 arrays in [0, 1].
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage, UnidentifiedImageError

from .errors import ConfigError, InputError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
MAX_SKIP_FRACTION = 0.10


@dataclass(frozen=True)
class RainParams:
    streak_count: int = 24
    length_px: Tuple[float, float] = (6.0, 16.0)
    angle_deg: Tuple[float, float] = (-15.0, 15.0)
    width_px: Tuple[float, float] = (0.4, 0.8)
    intensity: Tuple[float, float] = (0.35, 0.85)
    seed: int = 0

    def __post_init__(self):
        if self.streak_count < 0:
            raise ConfigError(f"streak_count must be >= 0, got {self.streak_count}")
        for name in ("length_px", "angle_deg", "width_px", "intensity"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} range ({lo}, {hi}) is empty")
        if self.length_px[0] <= 0 or self.width_px[0] <= 0:
            raise ConfigError("streak length and width must be positive")
        lo, hi = self.intensity
        if not (0 < lo and hi <= 1):
            raise ConfigError(f"intensity range ({lo}, {hi}) must lie in (0, 1]")

    def scaled_to(self, height: int, width: int) -> "RainParams":
        """Same streak density for an image of a different area than 64x64."""
        n = int(round(self.streak_count * height * width / 64 ** 2))
        return replace(self, streak_count=n)


@dataclass
class TrainSample:
    rainy: np.ndarray
    clean: np.ndarray
    residual: np.ndarray
    rainy_half: np.ndarray
    residual_half: np.ndarray
    residual_quarter: np.ndarray
    name: str = ""

    @property
    def shape(self):
        return self.rainy.shape

    def tensors(self) -> dict:
        """(1, 3, h, w) float tensors keyed like the sample fields."""
        out = {}
        for k in ("rainy", "clean", "residual", "rainy_half", "residual_half", "residual_quarter"):
            a = getattr(self, k)
            out[k] = torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1)))[None]
        return out


def downscale(img: np.ndarray, factor: float) -> np.ndarray:
    """Area-average an HxWxC image by 0.5 or 0.25."""
    steps = {0.5: 1, 0.25: 2}.get(factor)
    if steps is None:
        raise ConfigError(f"factor must be 0.5 or 0.25, got {factor}")
    a = np.asarray(img)
    m = 2 ** steps
    if a.shape[0] % m or a.shape[1] % m:
        raise InputError(f"image {a.shape[0]}x{a.shape[1]} not divisible by {m}")
    for _ in range(steps):
        a = ((a[0::2, 0::2] + a[1::2, 0::2]) + (a[0::2, 1::2] + a[1::2, 1::2])) * a.dtype.type(0.25)
    return a


def make_sample(rainy: np.ndarray, clean: np.ndarray, name: str = "") -> TrainSample:
    rainy = np.asarray(rainy, dtype=np.float32)
    clean = np.asarray(clean, dtype=np.float32)
    if rainy.shape != clean.shape:
        raise InputError(f"rainy {rainy.shape} and clean {clean.shape} differ ({name or 'pair'})")
    if rainy.ndim != 3 or rainy.shape[2] != 3:
        raise InputError(f"expected HxWx3 images, got {rainy.shape}")
    residual = np.clip(rainy - clean, 0, 1)
    return TrainSample(rainy=rainy, clean=clean, residual=residual,
                       rainy_half=downscale(rainy, 0.5),
                       residual_half=downscale(residual, 0.5),
                       residual_quarter=downscale(residual, 0.25), name=name)


def _upsample(grid: np.ndarray, size: int) -> np.ndarray:
    t = torch.from_numpy(grid.transpose(2, 0, 1)[None].astype(np.float32))
    t = F.interpolate(t, size=(size, size), mode="bicubic", align_corners=False)
    return t[0].numpy().transpose(1, 2, 0)


def procedural_clean(size: int, rng: np.random.Generator) -> np.ndarray:
    """Clean background: colour gradient, noise octaves and a few flat shapes."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / max(size - 1, 1)
    c0, c1 = rng.uniform(0.1, 0.8, 3), rng.uniform(0.1, 0.8, 3)
    ang = rng.uniform(0, 2 * np.pi)
    t = (np.cos(ang) * xx + np.sin(ang) * yy)
    t = (t - t.min()) / max(float(np.ptp(t)), 1e-6)
    img = c0 + (c1 - c0) * t[..., None]

    for octave, amp in ((4, 0.15), (8, 0.08), (16, 0.04)):
        g = min(octave, size)
        img = img + amp * (_upsample(rng.uniform(-1, 1, (g, g, 3)), size))

    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(0.05, 0.9, 3)
        cx, cy = rng.uniform(0, 1, 2)
        rx, ry = rng.uniform(0.08, 0.3, 2)
        if rng.random() < 0.5:
            mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1
        else:
            mask = (np.abs(xx - cx) <= rx) & (np.abs(yy - cy) <= ry)
        img[mask] = 0.35 * img[mask] + 0.65 * color
    return np.clip(img, 0.02, 0.9).astype(np.float32)


def rain_layer(height: int, width: int, p: RainParams, rng: np.random.Generator) -> np.ndarray:
    """Streak opacity map in [0, 1]: Gaussian-profile segments, alpha-composited."""
    transmit = np.ones((height, width), dtype=np.float64)
    for _ in range(p.streak_count):
        length = rng.uniform(*p.length_px)
        theta = np.deg2rad(rng.uniform(*p.angle_deg))
        w = rng.uniform(*p.width_px)
        alpha = rng.uniform(*p.intensity)
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        ux, uy = np.sin(theta), np.cos(theta)
        x0, y0 = cx - ux * length / 2, cy - uy * length / 2

        pad = length / 2 + 3 * w + 1
        xa, xb = max(0, int(cx - pad)), min(width, int(cx + pad) + 1)
        ya, yb = max(0, int(cy - pad)), min(height, int(cy + pad) + 1)
        if xa >= xb or ya >= yb:
            continue
        py, px = np.mgrid[ya:yb, xa:xb].astype(np.float64) + 0.5
        t = np.clip((px - x0) * ux + (py - y0) * uy, 0, length)
        d2 = (px - x0 - t * ux) ** 2 + (py - y0 - t * uy) ** 2
        transmit[ya:yb, xa:xb] *= 1 - alpha * np.exp(-d2 / (2 * w * w))
    return (1 - transmit).astype(np.float32)


def synthesize_rain(clean: np.ndarray, p: RainParams = RainParams(), name: str = "") -> TrainSample:
    """Add achromatic streaks to ``clean``; deterministic in ``p.seed``."""
    clean = np.asarray(clean, dtype=np.float32)
    if clean.min() < 0 or clean.max() > 1:
        raise InputError("clean image values must lie in [0, 1]")
    rng = np.random.default_rng(p.seed)
    layer = rain_layer(clean.shape[0], clean.shape[1], p, rng)
    rainy = np.clip(clean + layer[..., None], 0, 1)
    return make_sample(rainy, clean, name)


def synthetic_dataset(n: int, size: int = 64, params: RainParams = RainParams(),
                      seed: int = 0) -> List[TrainSample]:
    """``n`` procedural clean images with synthetic rain, reproducible from ``seed``."""
    if size % 4:
        raise ConfigError(f"image size must be divisible by 4, got {size}")
    params = params.scaled_to(size, size)
    out = []
    for i, child in enumerate(np.random.SeedSequence([seed, params.seed]).spawn(n)):
        rng = np.random.default_rng(child)
        clean = procedural_clean(size, rng)
        rain_seed = int(rng.integers(2 ** 31))
        out.append(synthesize_rain(clean, replace(params, seed=rain_seed), name=f"{i:04d}"))
    return out


def _resize(img: np.ndarray, size: int) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None]
    t = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False, antialias=True)
    return t[0].numpy().transpose(1, 2, 0).clip(0, 1)


def augment(sample: TrainSample, seed: int, size: Optional[int] = None,
            flip: Optional[bool] = None) -> TrainSample:
    """Random horizontal flip (p=0.5, or forced via ``flip``) then resize to ``size``."""
    if flip is None:
        flip = bool(np.random.default_rng(seed).random() < 0.5)
    rainy, clean = sample.rainy, sample.clean
    if flip:
        rainy, clean = rainy[:, ::-1], clean[:, ::-1]
    if size is not None and rainy.shape[:2] != (size, size):
        rainy, clean = _resize(rainy, size), _resize(clean, size)
    return make_sample(np.ascontiguousarray(rainy), np.ascontiguousarray(clean), sample.name)


def read_image(path: Path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def write_image(path: Path, img: np.ndarray):
    a = np.clip(np.rint(np.asarray(img) * 255), 0, 255).astype(np.uint8)
    PILImage.fromarray(a).save(path)


def _list_images(d: Path) -> dict:
    return {p.name: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def load_pairs(dir_rainy, dir_clean) -> List[TrainSample]:
    """Pair images by identical filename; samples come back in sorted name order.

    Images are cropped at the bottom/right to a multiple of 4 so the half
    and quarter scale fields exist.
    """
    dr, dc = Path(dir_rainy), Path(dir_clean)
    for d in (dr, dc):
        if not d.is_dir():
            raise InputError(f"not a directory: {d}")
    rainy, clean = _list_images(dr), _list_images(dc)
    only_r, only_c = sorted(set(rainy) - set(clean)), sorted(set(clean) - set(rainy))
    if only_r or only_c:
        raise InputError(f"unmatched files; missing clean for {only_r}, missing rainy for {only_c}")

    samples, skipped = [], []
    for name in sorted(rainy):
        try:
            r, c = read_image(rainy[name]), read_image(clean[name])
        except (UnidentifiedImageError, OSError) as exc:
            warnings.warn(f"skipping undecodable pair {name}: {exc}")
            skipped.append(name)
            continue
        if r.shape != c.shape:
            raise InputError(f"pair {name}: rainy is {r.shape[1]}x{r.shape[0]}, "
                             f"clean is {c.shape[1]}x{c.shape[0]}")
        h, w = r.shape[0] - r.shape[0] % 4, r.shape[1] - r.shape[1] % 4
        samples.append(make_sample(r[:h, :w], c[:h, :w], name))
    if rainy and len(skipped) > MAX_SKIP_FRACTION * len(rainy):
        raise InputError(f"{len(skipped)} of {len(rainy)} pairs undecodable: {skipped}")
    return samples


def save_sample(sample: TrainSample, directory) -> Path:
    """Write rainy.png, clean.png and residual.png into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k in ("rainy", "clean", "residual"):
        write_image(d / f"{k}.png", getattr(sample, k))
    return d


def load_sample(directory) -> TrainSample:
    d = Path(directory)
    return make_sample(read_image(d / "rainy.png"), read_image(d / "clean.png"), d.name)
