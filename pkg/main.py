# [file name]: main.py
#!/usr/bin/env python3
"""
fairfid - FID/KID evaluation with explicit, antialiased image preprocessing

Command-line entry point. Status lines go to stderr, results to stdout or --out.
Exit codes: 0 success, 2 incomparable inputs, 1 any other error.
"""

import argparse
import sys
import traceback

import config
import pipeline
from errors import FairFidError, IncomparableError
from resample import VARIANTS


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit 1; exit code 2 means incomparable inputs."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"❌ {self.prog}: {message}\n")


def _csv_list(cast):
    def parse(text):
        try:
            return tuple(cast(item.strip()) for item in text.split(',') if item.strip())
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from e
    return parse


def _variant(text):
    if text not in VARIANTS:
        raise argparse.ArgumentTypeError(f"unknown resizer '{text}' (choose from {', '.join(VARIANTS)})")
    return text


def _variant_list(text):
    return tuple(_variant(v) for v in _csv_list(str)(text))


def _common_parent(settings):
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--extractor", choices=("toy", "inception"), default=settings['extractor'],
                        help="feature extractor (default: %(default)s)")
    parent.add_argument("--model", default=settings['model'],
                        help="TorchScript Inception file (or FAIRFID_INCEPTION_MODEL)")
    parent.add_argument("--fid-size", type=int, default=settings['fid_size'],
                        help="extractor input size in pixels (default: %(default)s)")
    parent.add_argument("--resizer", type=_variant, default=settings['resizer'],
                        help="FID resize on the reference side (default: %(default)s)")
    parent.add_argument("--workers", type=int, default=settings['workers'], help="worker threads")
    parent.add_argument("--seed", type=int, default=0)
    parent.add_argument("--out", default=None, help="output file or directory (default: stdout)")
    parent.add_argument("--format", dest="fmt", choices=("csv", "json"), default=None,
                        help="output format (default: json for fid/kid reports, csv for tables)")
    parent.add_argument("--quiet", action="store_true", help="no status lines on stderr")
    return parent


def _chain_parent():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--eval-resizer", type=_variant, default=None,
                        help="FID resize on the eval side (default: same as --resizer)")
    parent.add_argument("--data-resizer", type=_variant, default=None,
                        help="dataset resize applied before quantization")
    parent.add_argument("--data-size", type=int, default=None, help="dataset resize target (default: --fid-size)")
    parent.add_argument("--no-quantize", action="store_true", help="keep float pixels after the dataset resize")
    parent.add_argument("--jpeg-quality", type=int, default=None, help="JPEG roundtrip on the reference side")
    parent.add_argument("--eval-jpeg-quality", type=int, default=None,
                        help="JPEG roundtrip on the eval side (default: same as --jpeg-quality)")
    return parent


def build_parser(settings=None) -> argparse.ArgumentParser:
    settings = settings or config.load_user_settings()
    common = _common_parent(settings)
    chain = _chain_parent()

    parser = UsageParser(prog="fairfid", description="Consistent FID/KID evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", parents=[common, chain], help="compute and cache feature statistics")
    p.add_argument("inputs", nargs=1, metavar="DIR")

    p = sub.add_parser("fid", parents=[common, chain], help="Frechet distance between two sides")
    p.add_argument("inputs", nargs=2, metavar="DIR_OR_CACHE")

    p = sub.add_parser("kid", parents=[common, chain], help="kernel distance between two image dirs")
    p.add_argument("inputs", nargs=2, metavar="DIR")
    p.add_argument("--subsets", type=int, default=None, help="average over this many random subsets")
    p.add_argument("--subset-size", type=int, default=None)

    p = sub.add_parser("heatmap", parents=[common], help="pairwise FID between resizer variants")
    p.add_argument("inputs", nargs=1, metavar="DIR")
    p.add_argument("--variants", type=_variant_list, default=VARIANTS)
    p.add_argument("--png", default=None, help="also draw the matrix to this PNG")

    p = sub.add_parser("resizers", parents=[common], help="FID/KID/PSNR of each resizer against --resizer")
    p.add_argument("inputs", nargs=1, metavar="DIR")
    p.add_argument("--variants", type=_variant_list, default=VARIANTS)

    sweep = sub.add_parser("sweep", help="JPEG quality or resize ratio sweeps")
    sweep_sub = sweep.add_subparsers(dest="sweep", required=True)
    p = sweep_sub.add_parser("jpeg", parents=[common], help="FID/KID/PSNR against JPEG quality")
    p.add_argument("inputs", nargs=1, metavar="DIR")
    p.add_argument("reference", nargs="?", default=None, metavar="REF_DIR_OR_CACHE",
                   help="separate reference set (default: the lossless copies of DIR)")
    p.add_argument("--qualities", type=_csv_list(int), default=config.JPEG_QUALITIES)
    p = sweep_sub.add_parser("ratio", parents=[common], help="FID against two-step resize ratio")
    p.add_argument("inputs", nargs=1, metavar="DIR")
    p.add_argument("--ratios", type=_csv_list(float), default=config.RESIZE_RATIOS)
    p.add_argument("--variants", type=_variant_list, default=config.RATIO_VARIANTS)

    p = sub.add_parser("diagnose", parents=[common], help="aliasing diagnostics on test patterns")
    p.add_argument("--size", type=int, default=256, help="pattern size in pixels")
    p.add_argument("--factor", type=int, default=8, help="downscale factor")
    p.add_argument("--variants", type=_variant_list, default=VARIANTS)

    p = sub.add_parser("psnr", parents=[common], help="mean PSNR between two image dirs")
    p.add_argument("inputs", nargs=2, metavar="DIR")

    p = sub.add_parser("compare", parents=[common], help="check two reports for matching provenance")
    p.add_argument("inputs", nargs=2, metavar="REPORT")

    p = sub.add_parser("corpus", parents=[common], help="write the seeded synthetic corpus")
    p.add_argument("--count", type=int, default=config.SYNTHETIC_COUNT)
    p.add_argument("--size", type=int, default=config.SYNTHETIC_SIZE)

    p = sub.add_parser("config", help="show or persist default settings")
    config_sub = p.add_subparsers(dest="action", required=True)
    config_sub.add_parser("show")
    p = config_sub.add_parser("set")
    p.add_argument("key", choices=config.SETTING_KEYS)
    p.add_argument("value")
    return parser


def make_run_config(args) -> pipeline.RunConfig:
    command = args.command if args.command != "sweep" else f"sweep-{args.sweep}"
    run = pipeline.RunConfig(
        command=command,
        inputs=list(getattr(args, "inputs", []) or []),
        extractor=args.extractor,
        model=args.model,
        out=args.out,
        fmt=args.fmt or pipeline.default_format(command),
        png=getattr(args, "png", None),
        reference=getattr(args, "reference", None),
        seed=args.seed,
        workers=args.workers,
        fid_size=args.fid_size,
        resizer=args.resizer,
        variants=tuple(getattr(args, "variants", ()) or ()),
        qualities=tuple(getattr(args, "qualities", config.JPEG_QUALITIES)),
        ratios=tuple(getattr(args, "ratios", config.RESIZE_RATIOS)),
        subsets=getattr(args, "subsets", None),
        subset_size=getattr(args, "subset_size", None),
        count=getattr(args, "count", config.SYNTHETIC_COUNT),
        size=getattr(args, "size", config.SYNTHETIC_SIZE),
        factor=getattr(args, "factor", 8),
    )
    if hasattr(args, "eval_resizer"):
        data = dict(data_resizer=args.data_resizer, data_size=args.data_size, quantize_data=not args.no_quantize)
        run.ref_chain = pipeline.build_chain(args.fid_size, args.resizer, jpeg_quality=args.jpeg_quality, **data)
        eval_quality = args.eval_jpeg_quality if args.eval_jpeg_quality is not None else args.jpeg_quality
        run.eval_chain = pipeline.build_chain(args.fid_size, args.eval_resizer or args.resizer,
                                              jpeg_quality=eval_quality, **data)
    return run


def run_config_command(args) -> int:
    settings = config.load_user_settings()
    if args.action == "show":
        print(f"# {config.settings_path()}")
        for key in config.SETTING_KEYS:
            print(f"{key} = {settings.get(key)}")
        return 0

    value = args.value
    if args.key in ("workers", "fid_size"):
        value = int(value)
    elif args.key == "resizer" and value not in VARIANTS:
        raise ValueError(f"unknown resizer '{value}'")
    elif args.key == "extractor" and value not in ("toy", "inception"):
        raise ValueError(f"unknown extractor '{value}'")
    settings[args.key] = value
    if not config.save_user_settings(settings):
        print(f"❌ Could not write {config.settings_path()}", file=sys.stderr)
        return 1
    config.log(f"✓ {args.key} = {value} saved to {config.settings_path()}")
    return 0


def main(argv=None) -> int:
    """Main application entry point."""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # usage errors exit 1 through UsageParser, --help exits 0
        return 1 if e.code else 0
    if getattr(args, "quiet", False):
        config.set_quiet(True)

    try:
        if args.command == "config":
            return run_config_command(args)
        run = make_run_config(args)
        result = pipeline.COMMANDS[run.command](run)
        if run.command in pipeline.REPORT_COMMANDS:
            pipeline.emit_report(result, run.out, run.fmt)
        return 0

    except IncomparableError as e:
        print(f"❌ Incomparable: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("\n👋 Interrupted.", file=sys.stderr)
        return 1
    except (FairFidError, OSError, ValueError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"\n❌ Unexpected error: {e}", file=sys.stderr)
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
