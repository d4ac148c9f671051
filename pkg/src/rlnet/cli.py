"""Command-line entry point: ``rlnet --command <name> [options]``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from .config import COMMANDS, ENV_OUT, RunConfig, describe_keys, parse_config
from .data import (IMAGE_SUFFIXES, RainParams, load_pairs, read_image, save_sample,
                   synthetic_dataset, write_image)
from .errors import ConfigError, InputError, RLNetError
from .estimator import RLNetDerainer
from .evaluation import (REFERENCE_ABLATION, REFERENCE_THETA1, REFERENCE_THETA2, ToyConfig, evaluate,
                         format_table, run_ablation, run_sweep, table_to_csv)
from .network import derain
from .schedule import Schedule

log = logging.getLogger("rlnet")

FLAG_KEYS = ("command", "seed", "desk_scale", "input", "out", "checkpoint")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rlnet", description="Single-image deraining with error feedback.",
        epilog="config keys (--set key=value or config file):\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--command", choices=COMMANDS)
    p.add_argument("--seed", type=int)
    p.add_argument("--desk-scale", dest="desk_scale", type=float)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./rlnet_out)")
    p.add_argument("--checkpoint")
    p.add_argument("--input")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def rain_params(cfg: RunConfig) -> RainParams:
    s = cfg.settings
    return RainParams(streak_count=s["streak_count"], length_px=(s["length_min"], s["length_max"]),
                      angle_deg=(s["angle_min"], s["angle_max"]),
                      width_px=(s["width_min"], s["width_max"]),
                      intensity=(s["intensity_min"], s["intensity_max"]), seed=cfg.seed)


def make_estimator(cfg: RunConfig, **extra) -> RLNetDerainer:
    s = cfg.settings
    flags = {k: s[k] for k in ("use_ffrb", "use_multistream", "use_embedding", "use_detector",
                               "use_le2", "use_compensator") if s[k] is not None}
    return RLNetDerainer(variant=s["variant"], base_channels=s["base_channels"], depth=s["depth"],
                         se_reduction=s["se_reduction"], desk_scale=cfg.desk_scale,
                         stages=s["stages"], lr=s["lr"], theta1=s["theta1"], theta2=s["theta2"],
                         flags=flags or None, detach_err=s["detach_err"],
                         keep_detector=s["keep_detector"], max_steps=s["max_steps"],
                         train_size=s["image_size"], seed=cfg.seed, **extra)


def toy_config(cfg: RunConfig) -> ToyConfig:
    s = cfg.settings
    return ToyConfig(n_train=s["n_train"], n_val=s["n_val"], image_size=s["image_size"],
                     base_channels=s["base_channels"], depth=s["depth"], desk_scale=cfg.desk_scale,
                     stages=s["stages"], lr=s["lr"], max_steps=s["max_steps"], variant=s["variant"],
                     theta1=s["theta1"], theta2=s["theta2"], seed=cfg.seed, rain=rain_params(cfg))


def _pair_dirs(root: Path):
    return root / "rainy", root / "clean"


def _datasets(cfg: RunConfig):
    """Training and validation samples from ``input`` or, without it, synthetic data."""
    s = cfg.settings
    if cfg.input is None:
        return (synthetic_dataset(s["n_train"], s["image_size"], rain_params(cfg), cfg.seed),
                synthetic_dataset(s["n_val"], s["image_size"], rain_params(cfg), cfg.seed + 1))
    root = cfg.input
    train_root = root / "train" if (root / "train").is_dir() else root
    train = load_pairs(*_pair_dirs(train_root))
    if (root / "val").is_dir():
        val = load_pairs(*_pair_dirs(root / "val"))
    else:
        val = synthetic_dataset(s["n_val"], s["image_size"], rain_params(cfg), cfg.seed + 1)
    return train, val


def _eval_dataset(cfg: RunConfig):
    s = cfg.settings
    if cfg.input is None:
        return synthetic_dataset(s["n_val"], s["image_size"], rain_params(cfg), cfg.seed + 1)
    root = cfg.input / "val" if (cfg.input / "val").is_dir() else cfg.input
    return load_pairs(*_pair_dirs(root))


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def cmd_gen_data(cfg: RunConfig) -> int:
    s = cfg.settings
    splits = {"train": synthetic_dataset(s["n_train"], s["image_size"], rain_params(cfg), cfg.seed),
              "val": synthetic_dataset(s["n_val"], s["image_size"], rain_params(cfg), cfg.seed + 1)}
    for split, samples in splits.items():
        rdir, cdir = _pair_dirs(cfg.out / split)
        rdir.mkdir(parents=True, exist_ok=True)
        cdir.mkdir(parents=True, exist_ok=True)
        for smp in samples:
            write_image(rdir / f"{smp.name}.png", smp.rainy)
            write_image(cdir / f"{smp.name}.png", smp.clean)
            save_sample(smp, cfg.out / "samples" / split / smp.name)
    print(f"wrote {len(splits['train'])} train and {len(splits['val'])} val pairs to {cfg.out}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    train, val = _datasets(cfg)
    if not train:
        raise InputError("no training pairs found")
    est = make_estimator(cfg, log_path=cfg.out / "train_log.csv")
    est.fit_samples(train, val)
    ckpt = cfg.checkpoint or cfg.out / "checkpoint.pt"
    est.save(ckpt)
    last = est.history_[-1] if est.history_ else {}
    print(f"trained {len(est.step_losses_)} steps; checkpoint {ckpt}; "
          f"final val PSNR {last.get('val_psnr', float('nan')):.3f} dB")
    return 0


def cmd_derain(cfg: RunConfig) -> int:
    est = RLNetDerainer.load(cfg.checkpoint)
    est.keep_detector = cfg.settings["keep_detector"]
    src = cfg.input
    files = ([src] if src.is_file() else
             [p for p in sorted(src.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES])
    out_dir = cfg.out / "derained"
    out_dir.mkdir(parents=True, exist_ok=True)
    for f in files:
        img = read_image(f)
        write_image(out_dir / f"{f.stem}.png", derain(est.model_, img, est.theta1_, est.keep_detector))
    print(f"derained {len(files)} images into {out_dir}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    data = _eval_dataset(cfg)
    mode = "with_detector" if cfg.settings["keep_detector"] else "without_detector"
    image_dir = cfg.out / "eval_images" if cfg.settings["write_images"] else None
    theta1 = cfg.settings["theta1"] if "theta1" in cfg.explicit else None
    report = evaluate(cfg.checkpoint, data, mode, theta1=theta1, image_dir=image_dir)
    _write(cfg.out / "eval.csv", report.to_csv())
    print(report.pretty())
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    s = cfg.settings
    rows = run_sweep(s["sweep_param"], s["sweep_values"], toy_config(cfg))
    _write(cfg.out / "sweep.csv", table_to_csv(rows))
    print(format_table(rows))
    ref = REFERENCE_THETA1 if s["sweep_param"] == "theta1" else REFERENCE_THETA2
    print("\nfull-scale reference (Rain200H, not comparable at toy scale):")
    print("  " + "  ".join(f"{k}: {p:.2f}/{q:.3f}" for k, (p, q) in ref.items()))
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    rows = run_ablation(cfg.settings["ablate_variants"], toy_config(cfg))
    _write(cfg.out / "ablation.csv", table_to_csv(rows))
    print(format_table(rows))
    print("\nfull-scale reference (Rain200H, not comparable at toy scale):")
    print("  " + "  ".join(f"{k}: {p:.2f}/{q:.3f}" for k, (p, q) in REFERENCE_ABLATION.items()))
    return 0


def cmd_schedule_dump(cfg: RunConfig) -> int:
    s = cfg.settings
    text = Schedule(cfg.desk_scale, s["lr"], s["theta1"], s["theta2"]).to_csv()
    if "out" in cfg.explicit or ENV_OUT in os.environ:
        _write(cfg.out / "schedule.csv", text)
    else:
        sys.stdout.write(text)
    return 0


COMMAND_FUNCS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "derain": cmd_derain,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "schedule-dump": cmd_schedule_dump,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: getattr(args, k) for k in FLAG_KEYS}
    try:
        cfg = parse_config(args.config, flags, args.overrides)
        return COMMAND_FUNCS[cfg.command](cfg)
    except RLNetError as exc:
        cmd = flags.get("command") or "rlnet"
        print(f"rlnet {cmd}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
