"""Command-line interface.

One executable with subcommands covering the whole pipeline: resample,
augment, tokenize, synth, train, eval, ablate-temp, ablate-interp, report.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure
(non-finite training loss). Every subcommand that writes an output directory
echoes its merged settings there as `effective.cfg`.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .augment import CutMixConfig, LabeledImage, cutmix
from .config import (
    ConfigError,
    RunConfig,
    read_config_file,
    write_effective_config,
)
from .data_io import DataError, load_dataset, split, synth_dataset
from .images import ImageBuffer, ImageFormatError, load_image, save_image
from .metrics import multiclass_roc, topk_accuracy, write_roc_csv, write_roc_svg
from .model import (
    CheckpointError,
    PatchClassifier,
    count_params,
    estimate_flops,
    flops_formula,
    model_from_checkpoint,
)
from .resample import KERNEL_NAMES, KernelSpec, compare_kernels, resample
from .seeding import substream
from .tokenizer import num_patches, spt_concat
from .training import NonFiniteLossError, evaluate, train

__all__ = ["main"]

TEMP_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(f"{self.prog}: {message}")


def _parse_size(text: str) -> tuple[int, int]:
    """`HxW` -> (height, width)."""
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise UsageError(f"--size must look like HxW, got {text!r}")
    try:
        h, w = int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError(f"--size must hold integers, got {text!r}")
    if h < 1 or w < 1:
        raise UsageError(f"--size must be positive, got {text!r}")
    return h, w


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_sets(pairs: list[str] | None) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _load_square_dataset(data_dir):
    data = load_dataset(data_dir)
    stacked = data.stacked().astype(np.float32)
    _, h, w, _ = stacked.shape
    if h != w:
        raise DataError(f"model needs square images, got {h}x{w}")
    return data.manifest, stacked


def _split_arrays(manifest, stacked, seed):
    assignment = split(manifest, seed)
    out = {}
    for name in ("train", "val", "test"):
        idx = assignment.indices(name)
        out[name] = (stacked[idx], manifest.labels[idx])
    return assignment, out


# ---------------------------------------------------------------- commands


def cmd_resample(args) -> int:
    img = load_image(args.inp)
    h, w = _parse_size(args.size)
    out = resample(img, h, w, KernelSpec.from_name(args.kernel))
    save_image(args.out, out)
    return 0


def cmd_augment(args) -> int:
    if args.pairs < 0:
        raise UsageError(f"--pairs must be >= 0, got {args.pairs}")
    data = load_dataset(args.inp)
    if len(data.manifest) < 2:
        raise DataError("augment needs at least 2 source images")
    num_classes = data.manifest.num_classes
    eye = np.eye(num_classes)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = substream(args.seed, "cutmix")
    cfg = CutMixConfig(alpha=args.alpha, seed=args.seed)

    rows = []
    for n in range(args.pairs):
        i, j = rng.integers(0, len(data.manifest), size=2)
        a = LabeledImage(data.images[i], eye[data.manifest.labels[i]])
        b = LabeledImage(data.images[j], eye[data.manifest.labels[j]])
        mixed, _ = cutmix(a, b, cfg, rng)
        name = f"aug_{n:05d}.png"
        save_image(out_dir / name, mixed.image)
        rows.append((name, mixed.label))

    header = "path,label," + ",".join(f"p{k}" for k in range(num_classes))
    with open(out_dir / "labels.csv", "w", newline="\n", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for name, label in rows:
            hard = int(np.argmax(label))
            soft = ",".join(repr(float(v)) for v in label)
            fh.write(f"{name},{hard},{soft}\n")
    write_effective_config(
        out_dir,
        {
            "command": "augment",
            "alpha": repr(args.alpha),
            "seed": str(args.seed),
            "pairs": str(args.pairs),
        },
    )
    return 0


def cmd_tokenize(args) -> int:
    img = load_image(args.inp).to_rgb()
    if img.height != img.width:
        raise DataError(f"tokenize needs a square image, got {img.height}x{img.width}")
    try:
        n = num_patches(img.height, args.patch)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    elements = args.patch * args.patch * img.channels
    info = {
        "image_size": img.height,
        "channels": img.channels,
        "patch_size": args.patch,
        "mode": args.mode,
        "num_patches": n,
        "patch_elements": elements,
    }
    if args.mode == "spt":
        info["concat_channels"] = img.channels * 5
        info["embedded_patch_elements"] = elements * 5
    print(json.dumps(info, sort_keys=True))

    if args.dump_grid:
        base = img if args.mode == "vanilla" else spt_concat(img, args.patch)
        px = base.pixels[:, :, :3].copy()
        marker = np.array([1.0, 0.15, 0.15])
        for k in range(0, img.height + 1, args.patch):
            px[min(k, img.height - 1), :, :] = marker
            px[:, min(k, img.width - 1), :] = marker
        save_image(args.dump_grid, ImageBuffer(px))
    return 0


def cmd_synth(args) -> int:
    manifest = synth_dataset(args.classes, args.per_class, args.size, args.seed, args.out)
    write_effective_config(
        args.out,
        {
            "command": "synth",
            "classes": str(args.classes),
            "per_class": str(args.per_class),
            "size": str(args.size),
            "seed": str(args.seed),
        },
    )
    print(
        json.dumps(
            {"out": str(args.out), "images": len(manifest), "classes": args.classes},
            sort_keys=True,
        )
    )
    return 0


def _merged_run_config(args, num_classes: int, image_size: int) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = _parse_sets(getattr(args, "set", None))
    if getattr(args, "mode", None):
        overrides["patch_mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    return RunConfig.merged(
        file_values,
        overrides,
        num_classes=num_classes,
        image_size=image_size,
        channels=3,
    )


def _run_training(run: RunConfig, manifest, stacked, out_path: Path, quiet=False):
    out_dir = out_path.parent if out_path.parent != Path("") else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(out_dir, run.to_mapping())
    _, arrays = _split_arrays(manifest, stacked, run.train.seed)
    x_train, y_train = arrays["train"]
    x_val, y_val = arrays["val"]
    model = PatchClassifier(run.model, rng=substream(run.train.seed, "init"))
    last_path = out_path.with_name(out_path.stem + ".last" + out_path.suffix)
    emit = None if quiet else lambda line: print(line, flush=True)
    history = train(
        model,
        x_train,
        y_train,
        x_val,
        y_val,
        run.train,
        history_path=out_dir / "history.jsonl",
        best_path=out_path,
        last_path=last_path,
        emit=emit,
    )
    return model, history


def cmd_train(args) -> int:
    manifest, stacked = _load_square_dataset(args.data)
    run = _merged_run_config(args, manifest.num_classes, stacked.shape[1])
    out_path = Path(args.out)
    _, history = _run_training(run, manifest, stacked, out_path)
    vals = [h["val_acc"] for h in history if h["val_acc"] is not None]
    summary = {
        "best_val_acc": max(vals) if vals else None,
        "final_train_acc": history[-1]["train_acc"] if history else None,
        "checkpoint": str(out_path),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    model = model_from_checkpoint(args.ckpt)
    manifest, stacked = _load_square_dataset(args.data)
    if stacked.shape[1] != model.cfg.image_size:
        raise DataError(
            f"checkpoint expects {model.cfg.image_size}px images, data is "
            f"{stacked.shape[1]}px"
        )
    if manifest.num_classes != model.cfg.num_classes:
        raise DataError(
            f"checkpoint has {model.cfg.num_classes} classes, data has "
            f"{manifest.num_classes}"
        )
    if args.split == "all":
        x, y = stacked, manifest.labels
    else:
        _, arrays = _split_arrays(manifest, stacked, args.seed)
        x, y = arrays[args.split]
    if len(x) == 0:
        raise DataError(f"split {args.split!r} is empty")
    _, probs = evaluate(model, x, y, batch_size=args.batch)
    curves = multiclass_roc(probs, y)
    metrics = {
        "n": int(len(x)),
        "split": args.split,
        "top1": topk_accuracy(probs, y, 1),
        # k clamps to K, so top5 on a 3-class problem is trivially 1.0
        "top5": topk_accuracy(probs, y, min(5, model.cfg.num_classes)),
        "auc": [None if c is None else c.auc for c in curves],
    }
    out_dir = Path(args.roc_out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_roc_csv(curves, out_dir)
    write_roc_svg(curves, out_dir / "roc.svg")
    (out_dir / "metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    cfg_map = {k: _fmt(v) for k, v in asdict(model.cfg).items()}
    cfg_map.update(
        {"command": "eval", "ckpt": str(args.ckpt), "eval_split": args.split,
         "eval_seed": str(args.seed)}
    )
    write_effective_config(out_dir, cfg_map)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_ablate_temp(args) -> int:
    manifest, stacked = _load_square_dataset(args.data)
    run = _merged_run_config(args, manifest.num_classes, stacked.shape[1])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(out_dir, run.to_mapping())

    rows = []
    for mult in TEMP_MULTIPLIERS:
        sub = RunConfig.merged(
            run.to_mapping(), {"temperature_multiplier": repr(mult)}
        )
        sub_dir = out_dir / f"temp_{mult}"
        _, history = _run_training(
            sub, manifest, stacked, sub_dir / "model.ckpt", quiet=True
        )
        vals = [h["val_acc"] for h in history if h["val_acc"] is not None]
        best = max(vals) if vals else float("nan")
        rows.append((mult, best))
        print(json.dumps({"multiplier": mult, "val_top1": best}, sort_keys=True))

    with open(out_dir / "ablate_temp.csv", "w", newline="\n", encoding="utf-8") as fh:
        fh.write("multiplier,val_top1\n")
        for mult, best in rows:
            fh.write(f"{mult!r},{best!r}\n")
    return 0


def _bandlimited_pattern(size: int) -> ImageBuffer:
    """Smooth low-frequency test card: a few sinusoids well under Nyquist."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = (
        0.5
        + 0.16 * np.sin(2 * np.pi * 2.0 * xx)
        + 0.16 * np.cos(2 * np.pi * 3.0 * yy)
        + 0.14 * np.sin(2 * np.pi * (2.0 * xx + 1.0 * yy))
    )
    return ImageBuffer(np.clip(img, 0.0, 1.0)[..., None])


def cmd_ablate_interp(args) -> int:
    h, w = _parse_size(args.size)
    sources: list[ImageBuffer] = []
    for path in args.inp or []:
        sources.append(load_image(path))
    if args.pattern:
        sources.append(_bandlimited_pattern(args.pattern))

    totals = {name: {"psnr": [], "seconds": 0.0} for name in KERNEL_NAMES}
    for img in sources:
        for report in compare_kernels(img, h, w):
            totals[report.name]["psnr"].append(report.psnr)
            totals[report.name]["seconds"] += report.seconds

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "ablate_interp.csv", "w", newline="\n", encoding="utf-8") as fh:
        fh.write("kernel,psnr,seconds\n")
        if sources:
            for name in KERNEL_NAMES:
                mean_psnr = float(np.mean(totals[name]["psnr"]))
                fh.write(f"{name},{mean_psnr!r},{totals[name]['seconds']!r}\n")
    write_effective_config(
        out_dir,
        {
            "command": "ablate-interp",
            "size": args.size,
            "pattern": str(args.pattern or 0),
            "inputs": ";".join(str(p) for p in (args.inp or [])),
        },
    )
    return 0


def cmd_report(args) -> int:
    model = model_from_checkpoint(args.ckpt)
    cfg = model.cfg
    rng = np.random.default_rng(0)
    batch = rng.random(
        (args.batch, cfg.image_size, cfg.image_size, cfg.channels),
        dtype=np.float32,
    )
    for _ in range(args.warmup):
        model.forward_images(batch)
    start = time.perf_counter()
    for _ in range(args.passes):
        model.forward_images(batch)
    elapsed = time.perf_counter() - start
    report = {
        "params": count_params(model),
        "flops": estimate_flops(model),
        "flops_formula": flops_formula(model),
        "batch": args.batch,
        "passes": args.passes,
        "throughput_images_per_sec": args.passes * args.batch / elapsed,
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in asdict(cfg).items()},
    }
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="patchformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("resample", help="rescale one image")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", required=True, help="HxW")
    p.add_argument("--kernel", default="lanczos3", choices=KERNEL_NAMES)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("augment", help="write CutMix-augmented copies of a dataset")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--pairs", type=int, required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("tokenize", help="patch arithmetic and grid visualization")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--mode", choices=("vanilla", "spt"), default="vanilla")
    p.add_argument("--dump-grid", default=None)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("synth", help="generate the synthetic blob dataset")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=400)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--mode", choices=("vanilla", "spt"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True, help="best-checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--roc-out", required=True)
    p.add_argument("--split", choices=("all", "train", "val", "test"), default="all")
    p.add_argument("--seed", type=int, default=0, help="split seed (match training)")
    p.add_argument("--batch", type=int, default=64)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-temp", help="train at each temperature multiplier")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--mode", choices=("vanilla", "spt"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate_temp)

    p = sub.add_parser("ablate-interp", help="compare resampling kernels")
    p.add_argument("--in", dest="inp", action="append", default=None)
    p.add_argument("--pattern", type=int, default=0,
                   help="add a generated band-limited pattern of this size")
    p.add_argument("--size", required=True, help="target HxW")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate_interp)

    p = sub.add_parser("report", help="parameter count, FLOPs, throughput")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--passes", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ImageFormatError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
