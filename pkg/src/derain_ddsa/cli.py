"""Command-line interface: ``derain-ddsa {train|derain|eval|gen-data|check-grad}``.

Every command is a pure function of its flags, config, input files, and seed.
Exit codes: 0 success, 1 gradient-check failure, 2 invalid config or flags,
3 training diverged (non-finite loss), 4 unreadable/undecodable image,
5 checkpoint/config mismatch, 6 unmatched input files.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .checkpoint import (
    CheckpointError, load_checkpoint, model_from_checkpoint,
)
from .config import ConfigError, dump_config, load_config
from .data import ImagePair, make_dataset
from .gradcheck import run_suite
from .image_io import (
    ImageError, crop_to, load_image, pad_to_multiple, save_image,
)
from .metrics import psnr, rgb_to_y, ssim
from .model import DerainModel, ModelConfig, paper_config
from .training import (
    TrainConfig, TrainingDiverged, paper_train_config, train_loop,
)

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_BAD_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_BAD_IMAGE = 4
EXIT_MISMATCH = 5
EXIT_UNMATCHED = 6

LARGE_IMAGE_SIDE = 64


class UnmatchedFilesError(RuntimeError):
    """Input file sets do not pair up; carries the offending names."""

    def __init__(self, message: str, names: list[str]):
        super().__init__(message)
        self.names = names


def _presets(name: str) -> tuple[ModelConfig, TrainConfig]:
    if name == "paper":
        return paper_config(), paper_train_config()
    return ModelConfig(), TrainConfig()


def _resolve_configs(args) -> tuple[ModelConfig, TrainConfig]:
    model_base, train_base = _presets(getattr(args, "preset", "desk"))
    if getattr(args, "config", None):
        model_cfg, train_cfg = load_config(
            args.config, model_base=model_base, train_base=train_base
        )
    else:
        model_cfg, train_cfg = model_base, train_base
    if getattr(args, "seed", None) is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    return model_cfg, train_cfg


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_pairs(data_dir: Path) -> list[ImagePair]:
    rainy_files = sorted(data_dir.glob("*_rainy.png"))
    if not rainy_files:
        raise UnmatchedFilesError(
            f"no *_rainy.png files found in {data_dir}", []
        )
    missing = [
        r.name for r in rainy_files
        if not (data_dir / r.name.replace("_rainy.png", "_clean.png")).exists()
    ]
    if missing:
        raise UnmatchedFilesError(
            f"{len(missing)} rainy image(s) have no *_clean.png mate", missing
        )
    return [
        ImagePair(
            rainy=load_image(r),
            clean=load_image(data_dir / r.name.replace("_rainy.png", "_clean.png")),
        )
        for r in rainy_files
    ]


def cmd_train(args) -> int:
    resume_state = None
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        if ckpt.train_config is None:
            raise CheckpointError(
                f"{args.resume} was not written by training; cannot resume"
            )
        model_cfg, train_cfg = ckpt.model_config, ckpt.train_config
        if args.config:
            file_model, file_train = load_config(args.config)
            if file_model != model_cfg or file_train != train_cfg:
                raise CheckpointError(
                    f"config {args.config} does not match the one stored in "
                    f"{args.resume}; resume continues the original run"
                )
        model = model_from_checkpoint(ckpt)
        resume_state = ckpt.resume_state()
    else:
        model_cfg, train_cfg = _resolve_configs(args)
        model = DerainModel(model_cfg, seed=train_cfg.seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(dump_config(model_cfg, train_cfg))
    pairs = _load_pairs(Path(args.data))

    loss_path = out_dir / "loss.csv"
    fresh = not (args.resume and loss_path.exists() and loss_path.stat().st_size)
    with open(loss_path, "w" if fresh else "a") as fh:
        if fresh:
            fh.write("step,lr,loss\n")

        def on_step(step: int, lr: float, loss: float) -> None:
            fh.write(f"{step},{lr!r},{loss!r}\n")
            fh.flush()

        train_loop(model, pairs, train_cfg, out_dir=out_dir,
                   resume=resume_state, on_step=on_step)
    print(f"trained to step {train_cfg.total_steps}; artifacts in {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# derain
# ---------------------------------------------------------------------------


def _derain_one(model: DerainModel, src: Path, dst: Path) -> None:
    img = load_image(src)
    _, h, w = img.shape
    if max(h, w) > LARGE_IMAGE_SIDE:
        print(
            f"warning: {src.name} is {h}x{w}; this desk-scale CPU model is "
            f"intended for images up to {LARGE_IMAGE_SIDE}px per side and "
            f"will be slow",
            file=sys.stderr,
        )
    factor = 2 ** model.cfg.levels
    try:
        padded, orig = pad_to_multiple(img, factor)
    except ValueError as exc:
        raise ImageError(f"{src}: cannot pad to a multiple of {factor}: {exc}")
    with T.no_grad():
        out = model.forward(Tensor(padded[np.newaxis]))
    restored = np.clip(crop_to(out.data[0], orig), 0.0, 1.0)
    dst.parent.mkdir(parents=True, exist_ok=True)
    save_image(dst, restored)


def cmd_derain(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    if args.config:
        file_model, _ = load_config(args.config)
        if file_model != ckpt.model_config:
            raise CheckpointError(
                f"config {args.config} does not match the architecture stored "
                f"in {args.ckpt}"
            )
    model = model_from_checkpoint(ckpt)
    src = Path(args.inp)
    out = Path(args.out)
    if src.is_dir():
        files = sorted(src.glob("*.png"))
        if not files:
            raise UnmatchedFilesError(f"no .png files found in {src}", [])
        for f in files:
            _derain_one(model, f, out / f.name)
        print(f"derained {len(files)} image(s) into {out}")
    else:
        dst = out / src.name if out.is_dir() else out
        _derain_one(model, src, dst)
        print(f"derained {src} -> {dst}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    pred_dir, truth_dir = Path(args.inp), Path(args.gt)
    pred_names = {p.name for p in pred_dir.glob("*.png")}
    truth_names = {p.name for p in truth_dir.glob("*.png")}
    only_pred = sorted(pred_names - truth_names)
    only_truth = sorted(truth_names - pred_names)
    if only_pred or only_truth:
        for name in only_pred:
            print(f"unmatched: {name} (no ground truth)", file=sys.stderr)
        for name in only_truth:
            print(f"unmatched: {name} (no prediction)", file=sys.stderr)
        raise UnmatchedFilesError(
            "prediction and ground-truth directories do not pair up",
            only_pred + only_truth,
        )
    matched = sorted(pred_names)
    if not matched:
        raise UnmatchedFilesError("no .png files to evaluate", [])

    rows = []
    for name in matched:
        pred = load_image(pred_dir / name)
        truth = load_image(truth_dir / name)
        try:
            yp, yt = rgb_to_y(pred), rgb_to_y(truth)
            rows.append((name, psnr(yp, yt), ssim(yp, yt)))
        except ValueError as exc:
            raise ImageError(f"{name}: {exc}")

    lines = ["image,psnr,ssim"]
    lines += [f"{name},{p!r},{s!r}" for name, p, s in rows]
    mean_p = float(np.mean([p for _, p, _ in rows]))
    mean_s = float(np.mean([s for _, _, s in rows]))
    lines.append(f"MEAN,{mean_p!r},{mean_s!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {len(rows)} row(s) + MEAN to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise ConfigError(f"--count must be >= 1, got {args.count}")
    if args.size < 1:
        raise ConfigError(f"--size must be >= 1, got {args.size}")
    if args.severity < 0:
        raise ConfigError(f"--severity must be >= 0, got {args.severity}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    pairs = make_dataset(rng, args.count, args.size, args.size, args.severity)
    for i, pair in enumerate(pairs):
        save_image(out_dir / f"pair{i:04d}_rainy.png", pair.rainy)
        save_image(out_dir / f"pair{i:04d}_clean.png", pair.clean)
    print(f"wrote {2 * len(pairs)} files to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# check-grad
# ---------------------------------------------------------------------------


def cmd_check_grad(args) -> int:
    results = run_suite(seed=args.seed if args.seed is not None else 0)
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(
            f"{status}  {r.name:36s} entries={r.entries_checked:4d}  "
            f"max_rel_err={r.max_rel_err:.3e}  tol={r.tolerance:g}"
        )
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    return EXIT_GRADCHECK if failed else EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="derain-ddsa",
        description="Dynamic dual self-attention deraining at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on rainy/clean PNG pairs")
    p.add_argument("--config", help="JSON config overriding the preset")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk",
                   help="base hyperparameter set (default: desk)")
    p.add_argument("--data", required=True,
                   help="directory of pairNNNN_rainy.png / pairNNNN_clean.png")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("derain", help="remove rain from PNG image(s)")
    p.add_argument("--ckpt", required=True, help="trained checkpoint")
    p.add_argument("--in", dest="inp", required=True,
                   help="input PNG file or directory")
    p.add_argument("--out", required=True, help="output PNG file or directory")
    p.add_argument("--config", help="optional config cross-checked "
                   "against the checkpoint")
    p.set_defaults(fn=cmd_derain)

    p = sub.add_parser("eval", help="PSNR/SSIM of predictions vs ground truth")
    p.add_argument("--in", dest="inp", required=True,
                   help="directory of predicted PNGs")
    p.add_argument("--gt", required=True,
                   help="directory of ground-truth PNGs (matched by filename)")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gen-data", help="generate synthetic rainy/clean pairs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=4, help="number of pairs")
    p.add_argument("--size", type=int, default=48, help="square image side")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--severity", type=float, default=0.5,
                   help="rain density; 0 gives rainy == clean")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("check-grad",
                       help="finite-difference check of every layer")
    p.add_argument("--seed", type=int, help="data seed for the checks")
    p.set_defaults(fn=cmd_check_grad)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ImageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_IMAGE
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except UnmatchedFilesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for name in exc.names:
            print(f"  {name}", file=sys.stderr)
        return EXIT_UNMATCHED


if __name__ == "__main__":
    sys.exit(main())
