"""Full deraining network, ablation variants and checkpoint I/O."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import KERNEL_SIZES, BlockConfig, MultiStream, SPPRefine, Upsample, conv
from .errors import ConfigError, ContractError, InputError
from .feedback import (CompensatorOutput, EmbeddingHead, ErrorDetector, FeatureCompensator,
                       error_from_detector, rectify)

SIZE_MULTIPLE = 32
CHECKPOINT_FORMAT = "rlnet-checkpoint"
CHECKPOINT_VERSION = 1

VARIANT_FLAGS = ("use_ffrb", "use_multistream", "use_embedding", "use_detector", "use_le2",
                 "use_compensator")
# Ablation lattice: which components each variant enables, in VARIANT_FLAGS order
VARIANTS = {
    "M1": (False, False, False, False, False, False),
    "M2": (True, False, False, False, False, False),
    "M3": (True, True, False, False, False, False),
    "M4": (True, True, True, False, False, False),
    "M5": (True, True, True, True, False, False),
    "M6": (True, True, True, True, True, False),
    "M7": (True, True, True, True, True, True),
}


@dataclass(frozen=True)
class AblationConfig:
    use_ffrb: bool = True
    use_multistream: bool = True
    use_embedding: bool = True
    use_detector: bool = True
    use_le2: bool = True
    use_compensator: bool = True
    base_channels: int = 32
    depth: int = 2
    se_reduction: int = 16
    gn_max_groups: int = 8
    detector_depth: int = 1
    detach_err: bool = False

    def __post_init__(self):
        if self.use_le2 and not self.use_detector:
            raise ConfigError("use_le2 requires use_detector")
        if self.use_detector and not self.use_embedding:
            raise ConfigError("use_detector requires use_embedding")
        if self.use_compensator and self.depth < 2:
            raise ConfigError("use_compensator needs depth >= 2 to inject the quarter-scale embedding")
        if self.base_channels < 1 or self.depth < 0:
            raise ConfigError("base_channels must be positive and depth non-negative")

    @property
    def block(self) -> BlockConfig:
        return BlockConfig(3, self.base_channels, self.gn_max_groups, self.se_reduction)

    @property
    def flags(self) -> dict:
        return {k: getattr(self, k) for k in VARIANT_FLAGS}

    def replace(self, **kw) -> "AblationConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AblationConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown AblationConfig keys: {sorted(unknown)}")
        return cls(**d)


def variant(name: str, **overrides) -> AblationConfig:
    """Ablation configuration for one of M1..M7."""
    try:
        flags = VARIANTS[name.upper()]
    except (KeyError, AttributeError):
        raise InputError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None
    return AblationConfig(**dict(zip(VARIANT_FLAGS, flags)), **overrides)


@dataclass
class ForwardBundle:
    residual_final: torch.Tensor
    embedding_half: Optional[torch.Tensor] = None
    embedding_quarter: Optional[torch.Tensor] = None
    detector: Optional[torch.Tensor] = None
    rectified: Optional[torch.Tensor] = None
    compensator: Optional[CompensatorOutput] = None


class _RestoringClamp(torch.autograd.Function):
    """clamp(x, 0, 1) whose backward still lets a gradient step pull a value back into range."""

    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x.clamp(0, 1)

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        blocked = ((x < 0) & (g > 0)) | ((x > 1) & (g < 0))
        return g.masked_fill(blocked, 0)


def restoring_clamp(x):
    return _RestoringClamp.apply(x)


class RLNet(nn.Module):
    def __init__(self, cfg: AblationConfig = AblationConfig()):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        bc = cfg.block
        kernels = KERNEL_SIZES if cfg.use_multistream else (3,)
        inject = {1: 3, 2: 3} if cfg.use_compensator else None

        self.head = conv(3, c, 3)
        self.compensator = FeatureCompensator(c, bc) if cfg.use_compensator else None
        self.streams = MultiStream(c, bc, cfg.depth, kernels, "ffrb" if cfg.use_ffrb else "res", inject)
        self.fuse = conv(self.streams.out_channels, c, 1)
        if cfg.use_embedding:
            self.embedding = EmbeddingHead(c, bc)
            self.condition = Upsample(3, c)
            self.condition_fuse = conv(2 * c, c, 1)
        else:
            self.embedding = None
        self.detector = ErrorDetector(c, bc, cfg.detector_depth) if cfg.use_detector else None
        self.refine = SPPRefine(c, max_groups=cfg.gn_max_groups)
        self.tail = conv(c, 3, 3)
        with torch.no_grad():
            # start with a near-zero residual so early steps do not saturate the clamp
            self.tail.weight.mul_(0.1)
            self.tail.bias.zero_()

    def forward(self, rainy, theta1: float = 0.0, residual_half=None, residual_quarter=None,
                detector_active: bool = True) -> ForwardBundle:
        check_input(rainy)
        comp = None
        injections = None
        if self.compensator is not None:
            comp = self.compensator(rainy, residual_half, residual_quarter)
            injections = {1: comp.embedding_half, 2: comp.embedding_quarter}

        feats = F.relu(self.head(rainy))
        feats = F.relu(self.fuse(self.streams(feats, injections)))

        bundle = ForwardBundle(residual_final=None, compensator=comp)
        if self.embedding is not None:
            emb = self.embedding(feats)
            bundle.embedding_half = emb
            if comp is not None:
                bundle.embedding_quarter = comp.embedding_quarter
            rect = emb
            if self.detector is not None:
                d = self.detector(F.avg_pool2d(rainy, 2), emb)
                bundle.detector = d
                if detector_active and theta1 > 0:
                    err = error_from_detector(d, theta1)
                    if self.cfg.detach_err:
                        err = err.detach()
                    rect = rectify(emb, err)
            bundle.rectified = rect
            cond = F.relu(self.condition(rect))
            feats = F.relu(self.condition_fuse(torch.cat([feats, cond], dim=1)))

        bundle.residual_final = restoring_clamp(self.tail(self.refine(feats)))
        return bundle


def check_input(rainy: torch.Tensor):
    if rainy.dim() != 4 or rainy.shape[1] != 3:
        raise InputError(f"expected (N, 3, H, W) tensor, got {tuple(rainy.shape)}")
    h, w = rainy.shape[-2:]
    if h % SIZE_MULTIPLE or w % SIZE_MULTIPLE:
        ph, pw = (-h) % SIZE_MULTIPLE, (-w) % SIZE_MULTIPLE
        raise InputError(f"input {h}x{w} must be divisible by {SIZE_MULTIPLE}; pad by "
                         f"{ph} rows and {pw} columns (derain() does this automatically)")


def rlnet_forward(model: RLNet, rainy, theta1: float = 0.0, truths=None,
                  detector_active: bool = True) -> ForwardBundle:
    """Run the network; ``truths`` is an optional ``(residual_half, residual_quarter)`` pair."""
    rh, rq = truths if truths is not None else (None, None)
    return model(rainy, theta1, rh, rq, detector_active)


def image_to_tensor(img: np.ndarray) -> torch.Tensor:
    """HxWx3 (or NxHxWx3) array -> (N, 3, H, W) float tensor."""
    a = np.asarray(img, dtype=np.float32)
    if a.ndim == 3:
        a = a[None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2)))


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    a = t.detach().cpu().numpy().transpose(0, 2, 3, 1)
    return a[0] if a.shape[0] == 1 else a


def pad_to_multiple(x: torch.Tensor, m: int = SIZE_MULTIPLE):
    h, w = x.shape[-2:]
    ph, pw = (-h) % m, (-w) % m
    if ph == 0 and pw == 0:
        return x, (h, w)
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode), (h, w)


@torch.no_grad()
def derain(model: RLNet, rainy: np.ndarray, theta1: float = 0.0,
           detector_active: bool = True) -> np.ndarray:
    """Clean estimate ``clamp(rainy - residual, 0, 1)`` for an HxWx3 image of any size."""
    was_training = model.training
    model.eval()
    x = image_to_tensor(rainy)
    xp, (h, w) = pad_to_multiple(x)
    residual = model(xp, theta1, detector_active=detector_active).residual_final[..., :h, :w]
    model.train(was_training)
    return tensor_to_image((x - residual).clamp(0, 1))


def architecture_keys(cfg: AblationConfig) -> dict:
    """Config entries that determine the parameter layout."""
    d = cfg.to_dict()
    d.pop("detach_err")
    return d


def save_checkpoint(path: Union[str, Path], model: RLNet, hyper: Optional[dict] = None,
                    extra: Optional[dict] = None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "hyper": dict(hyper or {}),
        "extra": dict(extra or {}),
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: Union[str, Path], expect: Optional[AblationConfig] = None):
    """Return ``(model, payload)``; raises ConfigError on format or config mismatch."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not an RLNet checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = AblationConfig.from_dict(payload["config"])
    if expect is not None and architecture_keys(expect) != architecture_keys(cfg):
        diff = {k: (v, architecture_keys(cfg)[k]) for k, v in architecture_keys(expect).items()
                if architecture_keys(cfg)[k] != v}
        raise ConfigError(f"checkpoint config incompatible (expected, stored): {diff}")
    model = RLNet(cfg)
    model.load_state_dict(payload["state_dict"])
    return model, payload
