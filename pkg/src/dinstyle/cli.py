"""Command-line entry point.

Exit codes: 0 success, 2 bad arguments or configuration, 3 I/O or data
errors, 4 checkpoint or architecture mismatch, 5 non-finite training loss.
Every failure prints a single diagnostic line to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from typing import Optional, Sequence

import numpy as np

from . import checkpoint
from .autodiff import ShapeError
from .config import ConfigError, load_config, normalize_conv_type
from .flops import compare_architectures, count_flops
from .gradchecks import REGISTRY, run_scope
from .images import ImageError, load_image, save_image
from .stylenet import (
    ArchitectureMismatch,
    StyleCode,
    StyleNet,
    StyleNetConfig,
    build_default_network,
    build_vgg_slice,
    config_from_tensors,
)
from .trainer import DataError, NonFiniteLossError, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CHECKPOINT = 4
EXIT_NONFINITE = 5

CONV_CHOICES = ("standard", "deformable", "spatially-adaptive")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # one-line diagnostic instead of argparse's usage dump
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_size(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)[xX](\d+)", text.strip())
    if not m or int(m.group(1)) < 1 or int(m.group(2)) < 1:
        raise argparse.ArgumentTypeError(f"invalid size {text!r}; expected HxW with positive integers, e.g. 512x512")
    return int(m.group(1)), int(m.group(2))


# ---------------------------------------------------------------------------
# helpers


def _load_tensors(path: str) -> dict[str, np.ndarray]:
    try:
        return checkpoint.load(path)
    except checkpoint.CheckpointError as exc:
        raise CliError(EXIT_CHECKPOINT, f"{path}: {exc}") from exc
    except OSError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc.strerror or exc}") from exc


def _load_net(path: str, conv_type: Optional[str] = None) -> StyleNet:
    tensors = _load_tensors(path)
    try:
        config = config_from_tensors(tensors)
        if conv_type is not None and normalize_conv_type(conv_type) != config.conv_type:
            raise ArchitectureMismatch(
                f"weights were trained for conv type {config.conv_type!r}, not {normalize_conv_type(conv_type)!r}"
            )
        return StyleNet.from_tensors(tensors, config)
    except ArchitectureMismatch as exc:
        raise CliError(EXIT_CHECKPOINT, f"{path}: {exc}") from exc


def _load_image(path: str):
    try:
        return load_image(path)
    except (ImageError, OSError) as exc:
        raise CliError(EXIT_IO, str(exc)) from exc


def _check_code(code: StyleCode, net: StyleNet, path: str) -> None:
    cfg = net.config
    if len(code.levels) != cfg.din_levels:
        raise CliError(EXIT_CHECKPOINT, f"{path}: style code has {len(code.levels)} levels, network has {cfg.din_levels}")
    for k, (p, c) in enumerate(zip(code.levels, cfg.level_widths())):
        if p.conv_type != cfg.conv_type or p.channels != c:
            raise CliError(EXIT_CHECKPOINT, f"{path}: style code level {k} does not match the network")


def _write_image(path: str, img) -> None:
    try:
        save_image(path, img)
    except OSError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_stylize(args) -> int:
    net = _load_net(args.weights, args.conv_type)
    content = _load_image(args.content)
    try:
        if args.style_code:
            try:
                code = StyleCode.load(args.style_code)
            except checkpoint.CheckpointError as exc:
                raise CliError(EXIT_CHECKPOINT, f"{args.style_code}: {exc}") from exc
            except OSError as exc:
                raise CliError(EXIT_IO, f"{args.style_code}: {exc.strerror or exc}") from exc
            _check_code(code, net, args.style_code)
        else:
            style = _load_image(args.style)
            # round the code through storage precision so this path and the
            # --style-code path produce identical pixels
            code = net.precompute(style, os.path.basename(args.style)).narrowed()
        out = net.apply_style(content, code)
    except ArchitectureMismatch as exc:
        raise CliError(EXIT_CHECKPOINT, str(exc)) from exc
    except ShapeError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    _write_image(args.out, out)
    return EXIT_OK


def cmd_precompute(args) -> int:
    net = _load_net(args.weights)
    style = _load_image(args.style)
    try:
        code = net.precompute(style, os.path.basename(args.style))
    except ShapeError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    try:
        code.save(args.out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"{args.out}: {exc.strerror or exc}") from exc
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise CliError(EXIT_USAGE, f"{args.config}: {exc}") from exc
    except OSError as exc:
        raise CliError(EXIT_IO, f"{args.config}: {exc.strerror or exc}") from exc
    if args.steps is not None:
        if args.steps <= 0:
            raise CliError(EXIT_USAGE, "--steps must be positive")
        cfg.steps = args.steps
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.resume_from is not None:
        cfg.resume_from = args.resume_from
    try:
        result = train(cfg)
    except NonFiniteLossError as exc:
        raise CliError(EXIT_NONFINITE, str(exc)) from exc
    except DataError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    except checkpoint.CheckpointError as exc:
        raise CliError(EXIT_CHECKPOINT, str(exc)) from exc
    except ArchitectureMismatch as exc:
        raise CliError(EXIT_CHECKPOINT, str(exc)) from exc
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    last = result.log[-1] if result.log else None
    if last:
        print(f"trained to step {last[0]}: content {last[1]:.6g} style {last[2]:.6g} total {last[3]:.6g}")
    for path in result.checkpoints:
        print(f"checkpoint {path}")
    return EXIT_OK


def _network_config(args) -> StyleNetConfig:
    cfg = StyleNetConfig(
        base_width=args.base_width,
        din_levels=args.levels,
        conv_type=normalize_conv_type(args.conv_type),
        din_kernel=args.din_kernel,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    return cfg


def cmd_analyze(args) -> int:
    h, w = args.size
    cfg = _network_config(args)
    try:
        ours = build_default_network(cfg)
        vgg = build_vgg_slice("relu4_1")
        if args.arch == "both":
            cmp = compare_architectures({"vgg-relu4_1": vgg, "default": ours}, (h, w), section="encoder")
            sys.stdout.write(count_flops(ours, (h, w)).to_text("default network"))
            sys.stdout.write("\n")
            sys.stdout.write(cmp.to_text())
            report = count_flops(ours, (h, w))
        else:
            spec = vgg if args.arch == "vgg-relu4_1" else ours
            report = count_flops(spec, (h, w))
            sys.stdout.write(report.to_text(args.arch))
    except ShapeError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    if args.csv:
        try:
            with open(args.csv, "w", encoding="utf-8") as fh:
                fh.write(report.to_csv())
        except OSError as exc:
            raise CliError(EXIT_IO, f"{args.csv}: {exc.strerror or exc}") from exc
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = run_scope(args.scope, args.seed)
    for r in reports:
        print(r.line())
    failed = [r.name for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return EXIT_OK if not failed else 1


def cmd_init_weights(args) -> int:
    net = StyleNet(_network_config(args), seed=args.seed)
    try:
        checkpoint.save(args.out, net.state_tensors())
    except OSError as exc:
        raise CliError(EXIT_IO, f"{args.out}: {exc.strerror or exc}") from exc
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_arch_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--base-width", type=int, default=32, help="channels of the outermost level (default 32)")
    p.add_argument("--levels", type=int, default=3, help="number of DIN levels, 1 to 3 (default 3)")
    p.add_argument("--conv-type", choices=CONV_CHOICES, default="standard")
    p.add_argument("--din-kernel", type=int, default=1, help="odd DIN kernel size (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dinstyle", description="Dynamic instance normalization style transfer toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stylize", help="render a content image in a style")
    p.add_argument("--content", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--style")
    g.add_argument("--style-code")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--conv-type", choices=CONV_CHOICES, help="assert the DIN variant stored in the weights")
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("precompute", help="store the DIN parameters of a style")
    p.add_argument("--style", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.add_argument("--out-dir", help="override the configured output directory")
    p.add_argument("--resume-from", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="print FLOP tables")
    p.add_argument("--arch", choices=("default", "vgg-relu4_1", "both"), default="both")
    p.add_argument("--size", type=parse_size, default=(512, 512), help="input size HxW (default 512x512)")
    p.add_argument("--csv", help="also write per-layer rows as CSV")
    _add_arch_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", help="run finite-difference gradient checks")
    p.add_argument("--scope", choices=sorted(REGISTRY), default="ops")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("init-weights", help="write freshly initialized network weights")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_arch_args(p)
    p.set_defaults(func=cmd_init_weights)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"dinstyle {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
