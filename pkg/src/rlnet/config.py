"""Flat ``key = value`` run configuration.

Precedence, lowest first: built-in defaults (scaled by ``desk_scale`` where
marked), config file, command-line flags, ``--set`` overrides. Explicitly
given values are never rescaled.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

from .errors import ConfigError

COMMANDS = ("gen-data", "train", "derain", "eval", "sweep", "ablate", "schedule-dump")
ENV_OUT = "RLNET_OUT"
DEFAULT_OUT = "rlnet_out"

FULL_IMAGE_SIZE = 512
FULL_CHANNELS = 32
FULL_N_TRAIN = 160
FULL_N_VAL = 40


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_bool(s: str) -> Optional[bool]:
    return None if s.strip().lower() in ("", "none", "auto") else _bool(s)


def _opt_int(s: str) -> Optional[int]:
    return None if s.strip().lower() in ("", "none", "0") else int(s)


def _int_list(s: str) -> tuple:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _float_list(s: str) -> tuple:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _name_list(s: str) -> tuple:
    return tuple(x.strip().upper() for x in s.split(",") if x.strip())


def _str(s: str) -> str:
    return s.strip()


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], object]
    default: object
    help: str
    scaled: bool = False


REGISTRY: Dict[str, Key] = {
    # run
    "command": Key(_str, None, "one of " + ", ".join(COMMANDS)),
    "seed": Key(int, 0, "global seed"),
    "desk_scale": Key(float, 1.0, "shrinks epochs, dataset size, image size and widths"),
    "input": Key(_str, None, "input directory or image"),
    "out": Key(_str, None, f"output directory (default ${ENV_OUT} or ./{DEFAULT_OUT})"),
    "checkpoint": Key(_str, None, "checkpoint file"),
    # network
    "variant": Key(_str, "M7", "ablation variant M1..M7"),
    "use_ffrb": Key(_opt_bool, None, "override the variant's FFRB flag"),
    "use_multistream": Key(_opt_bool, None, "override the variant's multi-stream flag"),
    "use_embedding": Key(_opt_bool, None, "override the variant's embedding flag"),
    "use_detector": Key(_opt_bool, None, "override the variant's error-detector flag"),
    "use_le2": Key(_opt_bool, None, "override the variant's detector-loss flag"),
    "use_compensator": Key(_opt_bool, None, "override the variant's compensator flag"),
    "base_channels": Key(int, FULL_CHANNELS, "network width", scaled=True),
    "depth": Key(int, 2, "U-FFRB depth"),
    "se_reduction": Key(int, 16, "SE reduction ratio"),
    "gn_max_groups": Key(int, 8, "upper bound on group-norm groups"),
    "detach_err": Key(_bool, False, "stop gradients through the reconstructed error"),
    "keep_detector": Key(_bool, True, "keep rectification at inference"),
    # schedule
    "lr": Key(float, 2e-4, "initial learning rate of each stage"),
    "theta1": Key(float, 0.15, "fine-tuning threshold, also used at inference"),
    "theta2": Key(float, 0.15, "transformation weight after its annealing event"),
    "stages": Key(_int_list, (1, 2), "training stages to run, e.g. 1,2"),
    "max_steps": Key(_opt_int, None, "cap on optimizer steps (0 = none)"),
    # data
    "image_size": Key(int, FULL_IMAGE_SIZE, "training image size", scaled=True),
    "n_train": Key(int, FULL_N_TRAIN, "synthetic training pairs", scaled=True),
    "n_val": Key(int, FULL_N_VAL, "synthetic validation pairs", scaled=True),
    "streak_count": Key(int, 24, "rain streaks per 64x64 area"),
    "length_min": Key(float, 6.0, "streak length range (px)"),
    "length_max": Key(float, 16.0, ""),
    "angle_min": Key(float, -15.0, "streak angle range from vertical (deg)"),
    "angle_max": Key(float, 15.0, ""),
    "width_min": Key(float, 0.4, "streak Gaussian width range (px)"),
    "width_max": Key(float, 0.8, ""),
    "intensity_min": Key(float, 0.35, "streak opacity range"),
    "intensity_max": Key(float, 0.85, ""),
    # harness
    "sweep_param": Key(_str, "theta1", "theta1 or theta2"),
    "sweep_values": Key(_float_list, (0.03, 0.04, 0.05, 0.06), "comma-separated values"),
    "ablate_variants": Key(_name_list, ("M1", "M2", "M3", "M4", "M5", "M6", "M7"), "variants to train"),
    "write_images": Key(_bool, False, "eval: also write derained PNGs"),
}

PATH_KEYS = ("input", "out", "checkpoint")


def scaled_default(key: str, desk_scale: float):
    if key == "image_size":
        return max(64, 32 * round(FULL_IMAGE_SIZE * desk_scale / 32))
    if key == "base_channels":
        return max(8, round(FULL_CHANNELS * desk_scale))
    if key == "n_train":
        return max(1, round(FULL_N_TRAIN * desk_scale))
    if key == "n_val":
        return max(1, round(FULL_N_VAL * desk_scale))
    return REGISTRY[key].default


@dataclass
class RunConfig:
    command: str
    seed: int
    desk_scale: float
    input: Optional[Path]
    out: Path
    checkpoint: Optional[Path]
    settings: Dict[str, object] = field(default_factory=dict)
    explicit: frozenset = frozenset()

    def __getitem__(self, key):
        return self.settings[key]


def read_config_file(path) -> Dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from None
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{n}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def parse_overrides(items: List[str]) -> Dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _parse_value(key: str, raw) -> object:
    if key not in REGISTRY:
        raise ConfigError(f"unknown config key {key!r}")
    if not isinstance(raw, str):
        return raw
    try:
        return REGISTRY[key].parse(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None


def parse_config(config_file=None, flags: Optional[Dict[str, object]] = None,
                 overrides: Optional[List[str]] = None, env=None) -> RunConfig:
    """Resolve a RunConfig from an optional file, flag values and ``key=value`` overrides."""
    env = os.environ if env is None else env
    raw: Dict[str, object] = {}
    if config_file is not None:
        raw.update(read_config_file(config_file))
    raw.update({k: v for k, v in (flags or {}).items() if v is not None})
    raw.update(parse_overrides(overrides))

    values = {k: _parse_value(k, v) for k, v in raw.items()}
    desk = values.get("desk_scale", REGISTRY["desk_scale"].default)
    if not 0 < desk <= 1:
        raise ConfigError(f"bad value for 'desk_scale': {desk} (must be in (0, 1])")

    settings = {}
    for k, key in REGISTRY.items():
        if k in values:
            settings[k] = values[k]
        else:
            settings[k] = scaled_default(k, desk) if key.scaled else key.default

    command = settings["command"]
    if command is None:
        raise ConfigError("missing required key 'command'")
    if command not in COMMANDS:
        raise ConfigError(f"bad value for 'command': {command!r}; expected one of {COMMANDS}")
    if settings["image_size"] % 32 or settings["image_size"] < 32:
        raise ConfigError(f"bad value for 'image_size': {settings['image_size']} (multiple of 32 needed)")
    if settings["sweep_param"] not in ("theta1", "theta2"):
        raise ConfigError(f"bad value for 'sweep_param': {settings['sweep_param']!r}")

    out = settings["out"] or env.get(ENV_OUT) or DEFAULT_OUT
    cfg = RunConfig(command=command, seed=settings["seed"], desk_scale=desk,
                    input=Path(settings["input"]) if settings["input"] else None,
                    out=Path(out),
                    checkpoint=Path(settings["checkpoint"]) if settings["checkpoint"] else None,
                    settings=settings, explicit=frozenset(values))
    _check_paths(cfg)
    return cfg


def _check_paths(cfg: RunConfig):
    needs = {"derain": ("checkpoint", "input"), "eval": ("checkpoint",)}
    for key in needs.get(cfg.command, ()):
        p = getattr(cfg, key)
        if p is None:
            raise ConfigError(f"missing required path {key!r} for command {cfg.command!r}")
        if not p.exists():
            raise ConfigError(f"{key!r} path does not exist: {p}")
    if cfg.input is not None and not cfg.input.exists():
        raise ConfigError(f"'input' path does not exist: {cfg.input}")


def describe_keys() -> str:
    width = max(map(len, REGISTRY))
    return "\n".join(f"  {k:<{width}}  {key.help}" for k, key in REGISTRY.items() if key.help)
