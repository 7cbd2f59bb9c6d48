"""``lsksvd`` command line.

Every :class:`~lsksvd.pipeline.PipelineConfig` key can be set in a
``key = value`` file passed with ``--config`` and overridden by a flag of the
same name (``--patch-size 8``, ``--mu 25`` ...).
"""

import argparse
import logging
import sys
from dataclasses import fields

import numpy as np

from lsksvd import pipeline
from lsksvd.imaging import write_image, write_mask
from lsksvd.pipeline import PipelineConfig, load_config
from lsksvd.synth import gen_synthetic


def _add_config_flags(parser):
    group = parser.add_argument_group("configuration")
    group.add_argument("--config", help="key = value configuration file")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        default = PipelineConfig.__dataclass_fields__[f.name].default
        kind = type(default)
        if kind is bool:
            group.add_argument(flag, dest=f.name, type=_bool, default=None, metavar="BOOL")
        else:
            group.add_argument(flag, dest=f.name, type=kind, default=None, metavar=kind.__name__.upper())


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _config(args):
    overrides = {f.name: getattr(args, f.name, None) for f in fields(PipelineConfig)}
    return load_config(args.config, **overrides)


def _train(args):
    summary = pipeline.cmd_train(args.image, args.fg_mask, args.bg_mask, args.out_dir, _config(args))
    for key in ("train_1", "test_1", "train_2", "test_2"):
        print(f"{key} = {summary[key]}")
    print(f"dict1 = {summary['dict1']}")
    print(f"dict2 = {summary['dict2']}")
    return 0


def _validate(args):
    config = _config(args)
    roc, passed = pipeline.cmd_validate(
        args.dict1, args.dict2, args.image, args.fg_mask, args.bg_mask, config, roc_path=args.roc
    )
    print(f"auc = {roc.auc!r}")
    print(f"min_auc = {config.min_auc!r}")
    print(f"passed = {passed}")
    return 0 if passed else 1


def _segment(args):
    report = pipeline.cmd_segment(
        args.image, args.dict1, args.dict2, args.out_dir, _config(args), gt_mask_path=args.gt_mask
    )
    sys.stdout.write(report.to_text())
    return 0


def _compare(args):
    if args.gt_mask is None:
        print("compare needs --gt-mask", file=sys.stderr)
        return 2
    table = pipeline.cmd_compare(args.image, args.dict1, args.dict2, args.out_dir, args.gt_mask, _config(args))
    print("method iou")
    for method, value in table.items():
        print(f"{method} {value:.4f}")
    return 0


def _synth(args):
    import os

    image, fg = gen_synthetic(args.width, args.height, blobs=args.blobs, seed=args.seed, blur=args.blur)
    os.makedirs(args.out_dir, exist_ok=True)
    write_image(os.path.join(args.out_dir, "image.png"), image)
    write_mask(os.path.join(args.out_dir, "fg_mask.png"), fg)
    write_mask(os.path.join(args.out_dir, "bg_mask.png"), ~fg)
    print(f"foreground_fraction = {float(np.mean(fg)):.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="lsksvd", description="Level-set KSVD texture segmentation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn foreground/background dictionaries")
    p.add_argument("--image", required=True)
    p.add_argument("--fg-mask", required=True)
    p.add_argument("--bg-mask", required=True)
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_train)

    p = sub.add_parser("validate", help="ROC/AUC of the patch classifier on the held-out split")
    p.add_argument("--dict1", required=True)
    p.add_argument("--dict2", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--fg-mask", required=True)
    p.add_argument("--bg-mask", required=True)
    p.add_argument("--roc", help="write ROC rows to this file")
    _add_config_flags(p)
    p.set_defaults(func=_validate)

    for name, func, help_ in (
        ("segment", _segment, "segment an image"),
        ("compare", _compare, "compare against Chan-Vese baselines"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--image", required=True)
        p.add_argument("--dict1", required=True)
        p.add_argument("--dict2", required=True)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--gt-mask")
        _add_config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("synth", help="generate a synthetic two-texture image and its masks")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--blobs", type=int, default=3)
    p.add_argument("--blur", type=float, default=0.0)
    p.set_defaults(func=_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"lsksvd {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
