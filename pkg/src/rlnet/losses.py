"""Loss terms and the differentiable SSIM they rely on.

Every norm is reduced by the mean over all entries, so loss weights do not
depend on image size.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import torch
import torch.nn.functional as F

from .errors import ConfigError, ContractError, InputError
from .feedback import CompensatorOutput, compensator_target, detector_target

if TYPE_CHECKING:
    from .network import AblationConfig, ForwardBundle
    from .schedule import HyperState

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ContractError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def mae(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape(a, b, "mae")
    return (a - b).abs().mean()


def loss_e1(embedding_half, residual_half):
    return mae(residual_half, embedding_half)


def loss_e2(detector, embedding_half, residual_half, theta1: float):
    """MAE between the detector output and the fixed truncated error reciprocal."""
    if not theta1 > 0:
        raise ConfigError(f"theta1 must be positive, got {theta1}")
    return mae(detector, detector_target(embedding_half, residual_half, theta1))


def loss_c(comp: CompensatorOutput, residual_half, residual_quarter, theta2: float):
    if not comp.training_mode:
        raise ContractError("compensator loss needs training-mode output (residual truths supplied)")
    return (mae(compensator_target(residual_half, comp.omega_half, theta2), comp.embedding_half)
            + mae(compensator_target(residual_quarter, comp.omega_quarter, theta2), comp.embedding_quarter))


def loss_p(comp: CompensatorOutput):
    if not comp.training_mode:
        raise ContractError("transform regularizer needs training-mode output")
    return comp.omega_half.pow(2).mean() + comp.omega_quarter.pow(2).mean()


def loss_f(residual_final, residual):
    return mae(residual, residual_final)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA,
                    dtype=torch.float32) -> torch.Tensor:
    ax = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-ax ** 2 / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype)


def ssim_map(a: torch.Tensor, b: torch.Tensor, window: int = SSIM_WINDOW,
             sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Local SSIM over valid window positions, per channel. Inputs are (N, C, H, W)."""
    _same_shape(a, b, "ssim")
    if a.dim() != 4:
        raise InputError(f"ssim expects (N, C, H, W) tensors, got {tuple(a.shape)}")
    h, w = a.shape[-2:]
    if h < window or w < window:
        raise InputError(f"ssim window {window} larger than image {h}x{w}")
    ch = a.shape[1]
    k = gaussian_window(window, sigma, a.dtype).to(a.device).expand(ch, 1, window, window)

    def filt(x):
        return F.conv2d(x, k, groups=ch)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(a: torch.Tensor, b: torch.Tensor, **kw) -> torch.Tensor:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, unit dynamic range)."""
    return ssim_map(a, b, **kw).mean()


def loss_ssim(clean, rainy, residual_final):
    return -ssim(clean, (rainy - residual_final).clamp(0, 1))


@dataclass
class LossBreakdown:
    l_f: torch.Tensor
    l_ssim: torch.Tensor
    l_e1: torch.Tensor
    l_e2: torch.Tensor
    l_c: torch.Tensor
    l_p: torch.Tensor
    l_all: torch.Tensor
    weights: dict = field(default_factory=dict)

    TERMS = ("l_f", "l_ssim", "l_e1", "l_e2", "l_c", "l_p", "l_all")

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in self.TERMS}

    def recombine(self) -> float:
        w = self.weights
        d = self.as_dict()
        return (d["l_f"] + d["l_ssim"] + w["lam"] * d["l_p"] + w["lam1"] * d["l_e1"]
                + w["lam2"] * d["l_e2"] + w["lam3"] * d["l_c"])


def loss_all(bundle: "ForwardBundle", sample: dict, hp: "HyperState",
             cfg: "AblationConfig") -> LossBreakdown:
    """Weighted total loss; terms of inactive modules are zero.

    ``sample`` holds tensors keyed ``rainy``, ``clean``, ``residual``,
    ``residual_half`` and ``residual_quarter``.
    """
    r = bundle.residual_final
    zero = r.new_zeros(())
    l_f = loss_f(r, sample["residual"])
    l_s = loss_ssim(sample["clean"], sample["rainy"], r)
    l_e1 = l_e2 = l_c = l_p = zero

    if cfg.use_embedding:
        if bundle.embedding_half is None:
            raise ContractError("embedding is enabled but the bundle has no embedding_half")
        l_e1 = loss_e1(bundle.embedding_half, sample["residual_half"])
    if cfg.use_detector and cfg.use_le2:
        if bundle.detector is None:
            raise ContractError("L_e2 is enabled but the bundle has no detector output")
        target = detector_target(bundle.embedding_half, sample["residual_half"], hp.theta1)
        l_e2 = mae(bundle.detector, target)
    if cfg.use_compensator:
        if bundle.compensator is None:
            raise ContractError("compensator is enabled but the bundle has no compensator output")
        l_c = loss_c(bundle.compensator, sample["residual_half"], sample["residual_quarter"], hp.theta2)
        l_p = loss_p(bundle.compensator)

    total = l_f + l_s + hp.lam * l_p + hp.lam1 * l_e1 + hp.lam2 * l_e2 + hp.lam3 * l_c
    weights = {"lam": hp.lam, "lam1": hp.lam1, "lam2": hp.lam2, "lam3": hp.lam3,
               "theta1": hp.theta1, "theta2": hp.theta2}
    return LossBreakdown(l_f, l_s, l_e1, l_e2, l_c, l_p, total, weights)
