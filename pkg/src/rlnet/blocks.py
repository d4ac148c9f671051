"""Reusable convolutional building blocks.

All modules take and return ``(N, C, H, W)`` tensors and preserve the
spatial size of their input (zero "same" padding), except where a block
explicitly changes scale (the strided downsampling inside :class:`UFFRB`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

KERNEL_SIZES = (3, 5, 7)
SPP_FACTORS = (4, 8, 16, 32)


def gn_groups(channels: int, max_groups: int = 8) -> int:
    """Largest group count <= ``max_groups`` that divides ``channels``."""
    if channels < 1:
        raise ConfigError(f"channel count must be positive, got {channels}")
    for g in range(min(max_groups, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


@dataclass(frozen=True)
class BlockConfig:
    kernel_size: int = 3
    base_channels: int = 32
    gn_groups: int = 8
    se_reduction: int = 16

    def __post_init__(self):
        if self.kernel_size not in KERNEL_SIZES:
            raise ConfigError(f"kernel_size must be one of {KERNEL_SIZES}, got {self.kernel_size}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be positive, got {self.base_channels}")
        if self.gn_groups < 1 or self.se_reduction < 1:
            raise ConfigError("gn_groups and se_reduction must be positive")

    def with_kernel(self, k: int) -> "BlockConfig":
        return BlockConfig(k, self.base_channels, self.gn_groups, self.se_reduction)


def conv(cin: int, cout: int, k: int, stride: int = 1, bias: bool = True) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=bias)


def group_norm(channels: int, max_groups: int, affine: bool = True) -> nn.GroupNorm:
    return nn.GroupNorm(gn_groups(channels, max_groups), channels, affine=affine)


class ResGNBlock(nn.Module):
    """x + GN(conv(ReLU(GN(conv(x)))))."""

    def __init__(self, channels: int, kernel_size: int = 3, max_groups: int = 8):
        super().__init__()
        if kernel_size not in KERNEL_SIZES:
            raise ConfigError(f"kernel_size must be one of {KERNEL_SIZES}, got {kernel_size}")
        self.channels = channels
        self.conv1 = conv(channels, channels, kernel_size)
        self.gn1 = group_norm(channels, max_groups)
        self.conv2 = conv(channels, channels, kernel_size)
        self.gn2 = group_norm(channels, max_groups)

    def forward(self, x):
        _check_channels(x, self.channels)
        h = F.relu(self.gn1(self.conv1(x)))
        return x + self.gn2(self.conv2(h))


class SEBlock(nn.Module):
    """Squeeze-and-excitation channel gate: sigmoid(FC(ReLU(FC(GAP(x))))) * x."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        # narrow toy widths fall below the reduction ratio; keep at least one unit
        hidden = max(1, channels // reduction)
        self.channels = channels
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def weights(self, x):
        _check_channels(x, self.channels)
        s = x.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(s))))

    def forward(self, x):
        w = self.weights(x)
        return x * w[:, :, None, None]


class FFRB(nn.Module):
    """Feature fusion residual block: SE(ReLU(GN(Conv(Res(x)))))."""

    def __init__(self, channels: int, cfg: BlockConfig):
        super().__init__()
        k = cfg.kernel_size
        self.res = ResGNBlock(channels, k, cfg.gn_groups)
        self.conv = conv(channels, channels, k)
        self.gn = group_norm(channels, cfg.gn_groups)
        self.se = SEBlock(channels, cfg.se_reduction)

    def forward(self, x):
        return self.se(F.relu(self.gn(self.conv(self.res(x)))))


def make_block(kind: str, channels: int, cfg: BlockConfig) -> nn.Module:
    if kind == "ffrb":
        return FFRB(channels, cfg)
    if kind == "res":
        return ResGNBlock(channels, cfg.kernel_size, cfg.gn_groups)
    raise ConfigError(f"unknown block kind {kind!r}")


class Upsample(nn.Module):
    """Nearest-neighbour x2 followed by a same-size conv."""

    def __init__(self, cin: int, cout: int, k: int = 3):
        super().__init__()
        self.conv = conv(cin, cout, k)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class UFFRB(nn.Module):
    """U-shaped encoder-decoder of FFRBs at a fixed kernel size.

    ``inject`` maps a scale level (1 = half, 2 = quarter, ...) to the number
    of extra channels concatenated at that level. Injection at level
    ``depth`` happens before the bottleneck block; shallower levels inject
    in the decoder, after the skip merge.
    """

    def __init__(self, channels: int, cfg: BlockConfig, depth: int = 2,
                 block: str = "ffrb", inject: Optional[Dict[int, int]] = None):
        super().__init__()
        if depth < 0:
            raise ConfigError(f"depth must be >= 0, got {depth}")
        inject = dict(inject or {})
        bad = [lvl for lvl in inject if not 1 <= lvl <= depth]
        if bad:
            raise ConfigError(f"injection levels {bad} outside 1..{depth}")
        k = cfg.kernel_size
        self.depth = depth
        self.inject_levels = tuple(sorted(inject))
        self.use_skips = True
        self.enc = nn.ModuleList([make_block(block, channels, cfg) for _ in range(depth + 1)])
        self.down = nn.ModuleList([conv(channels, channels, k, stride=2) for _ in range(depth)])
        self.up = nn.ModuleList([Upsample(channels, channels, k) for _ in range(depth)])
        self.merge = nn.ModuleList([conv(2 * channels, channels, 1) for _ in range(depth)])
        self.dec = nn.ModuleList([make_block(block, channels, cfg) for _ in range(depth)])
        self.inj = nn.ModuleDict({str(lvl): conv(channels + c, channels, 1) for lvl, c in inject.items()})

    def forward(self, x, injections: Optional[Dict[int, torch.Tensor]] = None):
        injections = injections or {}
        missing = set(self.inject_levels) - set(injections)
        if missing:
            raise ConfigError(f"missing injections for levels {sorted(missing)}")
        check_divisible(x, 2 ** self.depth, "U-FFRB input")
        if self.depth == 0:
            return self.enc[0](x)

        skips = []
        h = x
        for lvl in range(self.depth):
            h = self.enc[lvl](h)
            skips.append(h)
            h = self.down[lvl](h)
        h = self._inject(h, self.depth, injections)
        h = self.enc[self.depth](h)
        for lvl in reversed(range(self.depth)):
            h = self.up[lvl](h)
            skip = skips[lvl] if self.use_skips else torch.zeros_like(skips[lvl])
            h = self.merge[lvl](torch.cat([h, skip], dim=1))
            if lvl > 0:
                h = self._inject(h, lvl, injections)
            h = self.dec[lvl](h)
        return h

    def _inject(self, h, lvl, injections):
        if lvl not in self.inject_levels:
            return h
        e = injections[lvl]
        if e.shape[-2:] != h.shape[-2:]:
            raise ConfigError(f"injection at level {lvl} has size {tuple(e.shape[-2:])}, "
                              f"expected {tuple(h.shape[-2:])}")
        return self.inj[str(lvl)](torch.cat([h, e], dim=1))


class MultiStream(nn.Module):
    """Channel-wise concatenation of one U-FFRB per kernel size."""

    def __init__(self, channels: int, cfg: BlockConfig, depth: int = 2,
                 kernels: Sequence[int] = KERNEL_SIZES, block: str = "ffrb",
                 inject: Optional[Dict[int, int]] = None):
        super().__init__()
        self.kernels = tuple(kernels)
        self.streams = nn.ModuleList(
            [UFFRB(channels, cfg.with_kernel(k), depth, block, inject) for k in self.kernels])
        self.out_channels = channels * len(self.kernels)

    def forward(self, x, injections=None):
        outs = [s(x, injections) for s in self.streams]
        sizes = {tuple(o.shape[-2:]) for o in outs}
        if len(sizes) != 1:
            raise RuntimeError(f"stream outputs disagree on spatial size: {sizes}")
        return torch.cat(outs, dim=1)


class SPPRefine(nn.Module):
    """Down-up pyramid (average pool, point conv, nearest upsample) + residual blocks."""

    def __init__(self, channels: int, n_res: int = 7, factors: Sequence[int] = SPP_FACTORS,
                 max_groups: int = 8):
        super().__init__()
        self.factors = tuple(factors)
        branch = max(1, channels // 4)
        self.branches = nn.ModuleList([nn.Conv2d(channels, branch, 1) for _ in self.factors])
        self.fuse = nn.Conv2d(channels + branch * len(self.factors), channels, 1)
        self.res = nn.Sequential(*[ResGNBlock(channels, 3, max_groups) for _ in range(n_res)])

    def pyramid(self, x):
        check_divisible(x, max(self.factors), "SPP input")
        feats = []
        for f, pw in zip(self.factors, self.branches):
            pooled = F.avg_pool2d(x, f)
            feats.append(F.interpolate(pw(pooled), scale_factor=f, mode="nearest"))
        return torch.cat(feats + [x], dim=1)

    def forward(self, x):
        return self.res(F.relu(self.fuse(self.pyramid(x))))


def check_divisible(x: torch.Tensor, m: int, what: str = "input"):
    h, w = x.shape[-2:]
    if h % m or w % m:
        raise ConfigError(f"{what} size {h}x{w} is not divisible by {m}")


def _check_channels(x, c):
    if x.dim() != 4 or x.shape[1] != c:
        raise ConfigError(f"expected (N, {c}, H, W) input, got {tuple(x.shape)}")

