"""Error detector, rectification and feature compensator.

The detector regresses ``theta1 / |R - phi1|`` truncated at 1 (sigmoid
output), so its prediction ``d`` can be turned back into an absolute error
``theta1 / d - theta1``. That error, signed by the confidence map
``1 - 2 * phi1``, is subtracted from the half-scale embedding.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import FFRB, UFFRB, BlockConfig, Upsample, conv
from .errors import ConfigError, ContractError

# detector outputs are floored here before the reciprocal in error_from_detector
DETECTOR_FLOOR = 1e-4


def error_from_detector(d: torch.Tensor, theta1: float, floor: float = DETECTOR_FLOOR) -> torch.Tensor:
    """Absolute error map ``theta1 / d - theta1`` from a detector output ``d``."""
    if not theta1 > 0:
        raise ConfigError(f"theta1 must be positive, got {theta1}")
    return theta1 / d.clamp(min=floor) - theta1


def rectify(embedding: torch.Tensor, err: torch.Tensor) -> torch.Tensor:
    """Rectified embedding ``phi1 - err * (1 - 2 * phi1)``; not re-clamped."""
    if embedding.shape != err.shape:
        raise ContractError(f"embedding {tuple(embedding.shape)} and error {tuple(err.shape)} differ")
    return embedding - err * (1 - 2 * embedding)


def detector_target(embedding: torch.Tensor, residual_half: torch.Tensor, theta1: float) -> torch.Tensor:
    """Truncated error reciprocal ``theta1 / max(|R - phi1|, theta1)``, detached.

    The absolute error is treated as a constant: no gradient reaches the
    embedding through the target. ``theta1 == 0`` yields an all-zero target.
    """
    if theta1 < 0:
        raise ConfigError(f"theta1 must be non-negative, got {theta1}")
    with torch.no_grad():
        if theta1 == 0:
            return torch.zeros_like(embedding)
        abs_err = (residual_half - embedding).abs()
        return theta1 / abs_err.clamp(min=theta1)


class EmbeddingHead(nn.Module):
    """Full-scale features -> 3-channel half-scale residual embedding in (0, 1)."""

    def __init__(self, channels: int, cfg: BlockConfig):
        super().__init__()
        self.down = conv(channels, channels, 3, stride=2)
        self.body = FFRB(channels, cfg.with_kernel(3))
        self.out = conv(channels, 3, 3)

    def forward(self, feats):
        return torch.sigmoid(self.out(self.body(F.relu(self.down(feats)))))


class ErrorDetector(nn.Module):
    """Half-scale rainy image + embedding -> sigmoid map predicting truncated reciprocals."""

    def __init__(self, channels: int, cfg: BlockConfig, depth: int = 1):
        super().__init__()
        self.head = conv(6, channels, 3)
        self.body = UFFRB(channels, cfg.with_kernel(3), depth)
        self.out = conv(channels, 3, 3)

    def forward(self, rainy_half, embedding):
        if rainy_half.shape != embedding.shape:
            raise ContractError(f"rainy_half {tuple(rainy_half.shape)} and embedding "
                                f"{tuple(embedding.shape)} must match")
        h = F.relu(self.head(torch.cat([rainy_half, embedding], dim=1)))
        return torch.sigmoid(self.out(self.body(h)))


class Transform(nn.Module):
    """omega_i: learned transformation of a residual truth map (unbounded output)."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = conv(3, channels, 3)
        self.conv2 = conv(channels, 3, 3)

    def forward(self, r):
        return self.conv2(F.relu(self.conv1(r)))


@dataclass
class CompensatorOutput:
    embedding_half: torch.Tensor
    embedding_quarter: torch.Tensor
    omega_half: Optional[torch.Tensor] = None
    omega_quarter: Optional[torch.Tensor] = None

    @property
    def training_mode(self) -> bool:
        return self.omega_half is not None


class FeatureCompensator(nn.Module):
    """Light encoder-decoder predicting transformed residuals at 1/2 and 1/4 scale."""

    def __init__(self, channels: int, cfg: BlockConfig):
        super().__init__()
        c3 = cfg.with_kernel(3)
        self.head = conv(3, channels, 3)
        self.down1 = conv(channels, channels, 3, stride=2)
        self.enc1 = FFRB(channels, c3)
        self.down2 = conv(channels, channels, 3, stride=2)
        self.enc2 = FFRB(channels, c3)
        self.up = Upsample(channels, channels)
        self.merge = conv(2 * channels, channels, 1)
        self.dec1 = FFRB(channels, c3)
        self.out_quarter = conv(channels, 3, 3)
        self.out_half = conv(channels, 3, 3)
        self.omega_half = Transform(channels)
        self.omega_quarter = Transform(channels)

    def forward(self, rainy, residual_half=None, residual_quarter=None) -> CompensatorOutput:
        if (residual_half is None) != (residual_quarter is None):
            raise ContractError("residual truths must be supplied together or not at all")
        h0 = F.relu(self.head(rainy))
        h1 = self.enc1(F.relu(self.down1(h0)))
        h2 = self.enc2(F.relu(self.down2(h1)))
        d1 = self.dec1(self.merge(torch.cat([self.up(h2), h1], dim=1)))
        out = CompensatorOutput(
            embedding_half=torch.sigmoid(self.out_half(d1)),
            embedding_quarter=torch.sigmoid(self.out_quarter(h2)),
        )
        if residual_half is not None:
            for name, r, ref in (("half", residual_half, out.embedding_half),
                                 ("quarter", residual_quarter, out.embedding_quarter)):
                if r.shape != ref.shape:
                    raise ContractError(f"residual_{name} {tuple(r.shape)} does not match "
                                        f"embedding {tuple(ref.shape)}")
            out.omega_half = self.omega_half(residual_half)
            out.omega_quarter = self.omega_quarter(residual_quarter)
        return out


def compensator_target(residual: torch.Tensor, omega: torch.Tensor, theta2: float) -> torch.Tensor:
    """Transformed residual ``R + theta2 * omega(R) * R``."""
    return residual + theta2 * omega * residual
