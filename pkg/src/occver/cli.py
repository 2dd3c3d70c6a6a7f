"""Command-line interface: ``occver verify | occlude | build-onn | emit-smt | bench``.

Exit codes: 0 robust (or success), 1 non-robust, 2 inconclusive, 64 usage
or input error.
"""
from __future__ import annotations

import argparse
import json
import os
import re
import sys

import numpy as np

from . import __version__
from .bench import ManifestError, load_manifest, parse_color, parse_size, run_bench, write_outputs
from .imageio import ImageFormatError, load_image, save_image
from .model import NetworkFormatError, classify, identity_network, load_network
from .naive import UnsupportedModeError, build_naive, emit_smtlib
from .occlusion import Multiform, OcclusionSpec, Placement, occlude
from .onn import PositionRegion, build_onn, export_composed
from .orchestrator import (INCONCLUSIVE, NONROBUST, ROBUST, VerificationConfig, default_workers,
                           verify_occlusion_robustness)

EXIT_ROBUST = 0
EXIT_NONROBUST = 1
EXIT_INCONCLUSIVE = 2
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text):
    try:
        return parse_size(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _color(text):
    try:
        return parse_color(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _nonneg(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _pair(text):
    m = re.fullmatch(r"\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected A,B, got {text!r}")
    return float(m.group(1)), float(m.group(2))


def _occlusion_flags(p, need_color=True):
    p.add_argument("--occ-size", type=_size, required=True, metavar="WxH")
    p.add_argument("--color", type=_color, default=None if need_color else "uniform:0",
                   required=need_color, metavar="uniform:MU|multiform:EPS")
    p.add_argument("--positions", choices=("int", "real"), default="int")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="occver", description="Occlusion robustness verification for ReLU networks.")
    parser.add_argument("--version", action="version", version=f"occver {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify", help="verify one image against an occlusion")
    v.add_argument("--net", required=True)
    v.add_argument("--image", required=True)
    _occlusion_flags(v)
    v.add_argument("--split", type=_size, default=(1, 1), metavar="KMxKN")
    v.add_argument("--timeout", type=_nonneg, default=60.0, help="seconds per query")
    v.add_argument("--global-timeout", type=_nonneg, default=None)
    v.add_argument("--workers", type=_positive_int, default=None)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--sort-labels", type=_on_off, default=True, metavar="on|off")
    v.add_argument("--encoding", choices=("pairwise", "omnn"), default="pairwise")
    v.add_argument("--out", default="occver-out", help="directory for reports and counterexamples")

    o = sub.add_parser("occlude", help="apply one occlusion and write the image")
    o.add_argument("--image", required=True)
    _occlusion_flags(o)
    o.add_argument("--at", type=_pair, required=True, metavar="A,B")
    o.add_argument("--delta", type=float, default=0.0,
                   help="multiform: delta added to every occluded pixel")
    o.add_argument("--out", required=True)

    b = sub.add_parser("build-onn", help="export the occlusion network (optionally composed)")
    b.add_argument("--image", required=True)
    _occlusion_flags(b)
    b.add_argument("--net", help="classifier to compose with the occlusion network")
    b.add_argument("--out", required=True, help="network file to write")
    b.add_argument("--manifest", help="JSON description of the inputs (default: OUT.json)")

    e = sub.add_parser("emit-smt", help="write the direct SMT-LIB2 encoding")
    e.add_argument("--net", required=True)
    e.add_argument("--image", required=True)
    _occlusion_flags(e)
    e.add_argument("--region", type=float, nargs=4, metavar=("A_LO", "A_HI", "B_LO", "B_HI"))
    e.add_argument("--out", default="-")

    r = sub.add_parser("bench", help="run a benchmark manifest")
    r.add_argument("--manifest", required=True)
    r.add_argument("--out", default="occver-bench")
    return parser


def _spec(args) -> OcclusionSpec:
    w, h = args.occ_size
    return OcclusionSpec(w, h, args.color, args.positions)


def _cmd_verify(args) -> int:
    f = load_network(args.net)
    x = load_image(args.image)
    spec = _spec(args)
    k_m, k_n = args.split
    cfg = VerificationConfig(k_m=k_m, k_n=k_n, timeout_per_query=args.timeout,
                             workers=args.workers or default_workers(),
                             label_sorting=args.sort_labels, seed=args.seed,
                             global_timeout=args.global_timeout, encoding=args.encoding)
    report = verify_occlusion_robustness(f, x, spec, cfg)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    text = report.to_text()
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"{report.overall}: {len(report.records)}/{report.total_queries} queries, "
          f"TO {report.timeout_percent:.2f}%")
    if report.overall == NONROBUST:
        cx = report.counterexample
        ext = ".pgm" if x.c == 1 else ".ppm"
        save_image(cx.image, os.path.join(args.out, "counterexample" + ext))
        save_image(cx.image, os.path.join(args.out, "counterexample.img"))
        meta = cx.to_dict()
        meta["network"] = os.path.abspath(args.net)
        meta["image"] = os.path.abspath(args.image)
        with open(os.path.join(args.out, "counterexample.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        print(f"counterexample at a={cx.a:g}, b={cx.b:g}: label {cx.original_label} -> "
              f"{cx.adversarial_label}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return {ROBUST: EXIT_ROBUST, NONROBUST: EXIT_NONROBUST,
            INCONCLUSIVE: EXIT_INCONCLUSIVE}[report.overall]


def _cmd_occlude(args) -> int:
    x = load_image(args.image)
    spec = _spec(args)
    a, b = args.at
    deltas = None
    if isinstance(spec.coloring, Multiform):
        deltas = np.full(x.pixels.shape, args.delta)
    elif args.delta:
        raise UsageError("--delta needs a multiform colour")
    save_image(occlude(x, spec, Placement(a, b, deltas)), args.out)
    return 0


def _cmd_build_onn(args) -> int:
    x = load_image(args.image)
    spec = _spec(args)
    bundle = build_onn(x, spec)
    manifest = args.manifest or args.out + ".json"
    f = load_network(args.net) if args.net else identity_network(bundle.onn.output_dim)
    export_composed(bundle, f, args.out, manifest)
    return 0


def _cmd_emit_smt(args) -> int:
    f = load_network(args.net)
    x = load_image(args.image)
    spec = _spec(args)
    region = PositionRegion(*args.region) if args.region else None
    q = classify(f, x.flat())
    text = emit_smtlib(build_naive(x, f, spec, region, q))
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def _cmd_bench(args) -> int:
    manifest = load_manifest(args.manifest)
    result = run_bench(manifest)
    sys.stdout.write(write_outputs(result, args.out))
    return 0


_COMMANDS = {"verify": _cmd_verify, "occlude": _cmd_occlude, "build-onn": _cmd_build_onn,
             "emit-smt": _cmd_emit_smt, "bench": _cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, ManifestError, NetworkFormatError, ImageFormatError,
            UnsupportedModeError, ValueError, OSError) as exc:
        print(f"occver {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
