"""hybp command line: encode, decode, eval, synth, ablate."""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace

from . import container
from .errors import ChecksumError, FormatError, OptimizationError
from .evaluation import METHODS, evaluate_sequence, write_eval_csv
from .frameio import read_sequence, synth_sequence, write_sequence
from .genprior import OptimizerConfig
from .pipeline import EncoderSettings, decode, default_seed, encode_sequence
from .refine import RefineConfig
from .toycodec import CodecConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_CHECKSUM = 5
EXIT_DIVERGED = 6
EXIT_BUDGET = 7

ALLOCATION_FIELDS = ("gop", "qp", "latent_bytes", "legacy_bytes", "total_bytes", "within_budget")
SYNTH_KINDS = ("translate", "rotate-gradient", "noise", "checker-pan")


def _kbps_list(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("bitrates must be positive")
    return values


def _add_codec_args(p):
    p.add_argument("--bitrate", type=float, default=90.0, help="target kbps (default: %(default)s)")
    p.add_argument("--gop", type=int, default=8, help="GOP length")
    p.add_argument("--b-frames", action="store_true", help="code odd frames as B-frames")
    p.add_argument("--qp-max", type=int, default=51)
    p.add_argument("--latent-dim", type=int, default=1024)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--seed", type=int, default=None, help="generator seed (default: $HYBP_SEED or 42)")
    p.add_argument("--invert-iters", type=int, default=800)
    p.add_argument("--refine-iters", type=int, default=400)
    p.add_argument("--i-frame-weight", type=float, default=1.0)
    p.add_argument("--outer-passes", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1, help="GOP-parallel encode workers")


def _add_mode_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--no-refine", dest="mode", action="store_const", const="no-refine")
    g.add_argument("--no-two-stage", dest="mode", action="store_const", const="no-two-stage")
    g.add_argument("--traditional-only", dest="mode", action="store_const", const="traditional")
    g.add_argument("--prompt-only", dest="mode", action="store_const", const="prompt-only")
    p.set_defaults(mode="hybrid")


def build_parser():
    parser = argparse.ArgumentParser(prog="hybp", description="Hybrid generative-keyframe video codec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a .rawv/.y4m file into a HYBP stream")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--csv", help="per-GOP allocation CSV")
    _add_codec_args(p)
    _add_mode_flags(p)

    p = sub.add_parser("decode", help="decode a HYBP stream to .rawv/.y4m")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--stitched", action="store_true", help="decode via a stitched lossless-I stream")
    p.add_argument("--no-pipeline", action="store_true", help="run generator and decoder sequentially")
    p.add_argument("--timing-csv")

    p = sub.add_parser("eval", help="compare methods over a bitrate sweep")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--bitrates", type=_kbps_list, default=[75.0, 90.0, 105.0], help="comma-separated kbps")
    p.add_argument("--methods", default=",".join(METHODS))
    _add_codec_args(p)

    p = sub.add_parser("synth", help="write a synthetic test sequence")
    p.add_argument("kind", choices=SYNTH_KINDS)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fps", type=float, default=30.0)

    p = sub.add_parser("ablate", help="full pipeline vs no-refine / no-two-stage / prompt-only")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_codec_args(p)
    return parser


def _settings(args, mode=None):
    codec = CodecConfig(gop_length=args.gop, b_frames_enabled=args.b_frames, qp_max=args.qp_max)
    return EncoderSettings(
        bitrate_bps=args.bitrate * 1000.0,
        mode=mode or getattr(args, "mode", "hybrid"),
        codec=codec,
        d=args.latent_dim,
        hidden=args.hidden,
        seed=args.seed,
        opt=OptimizerConfig(iters=args.invert_iters),
        refine=RefineConfig(
            iters=args.refine_iters, i_frame_weight=args.i_frame_weight, outer_passes=args.outer_passes
        ),
        jobs=args.jobs,
    )


def cmd_encode(args):
    seq = read_sequence(args.input)
    result = encode_sequence(seq, _settings(args))
    with open(args.output, "wb") as fh:
        fh.write(result.stream)
    feasible = True
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ALLOCATION_FIELDS)
            for i, a in enumerate(result.allocations):
                w.writerow([i, a.qp, a.latent_bytes, a.legacy_bytes, a.total_bytes, str(a.within_budget).lower()])
    for i, a in enumerate(result.allocations):
        if not a.within_budget:
            feasible = False
            print(f"warning: GOP {i} exceeds its budget ({a.total_bytes} > {a.budget_bytes:.0f} bytes)", file=sys.stderr)
    return EXIT_OK if feasible else EXIT_BUDGET


def cmd_decode(args):
    with open(args.input, "rb") as fh:
        data = fh.read()
    video, timing = decode(data, stitched=args.stitched, pipelined=not args.no_pipeline)
    write_sequence(video, args.output)
    if args.timing_csv:
        with open(args.timing_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["gop", "generate_s", "stitch_s", "decode_s"])
            w.writeheader()
            for row in timing.rows():
                w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return EXIT_OK


def cmd_eval(args):
    seq = read_sequence(args.input)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise _UsageError(f"unknown methods: {', '.join(sorted(unknown))}")
    rows = evaluate_sequence(seq, args.bitrates, methods, _settings(args))
    write_eval_csv(rows, args.output)
    return EXIT_OK


def cmd_synth(args):
    seed = default_seed() if args.seed is None else args.seed
    seq = synth_sequence(args.kind, args.width, args.height, args.frames, seed=seed, fps=args.fps)
    write_sequence(seq, args.output)
    return EXIT_OK


def cmd_ablate(args):
    seq = read_sequence(args.input)
    base = _settings(args)
    rows = []
    for mode in ("hybrid", "no-refine", "no-two-stage", "prompt-only"):
        rows += evaluate_sequence(seq, [args.bitrate], [mode], replace(base, mode=mode))
    write_eval_csv(rows, args.output)
    return EXIT_OK


class _UsageError(Exception):
    pass


COMMANDS = {"encode": cmd_encode, "decode": cmd_decode, "eval": cmd_eval, "synth": cmd_synth, "ablate": cmd_ablate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.error(str(exc))
    except ChecksumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKSUM
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OptimizationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
