"""Command line interface.

Subcommands:
  synthesize     run the pipeline on a capture manifest
  gen-synthetic  write a synthetic dataset with exact ground truth
  eval           score synthesized frames against ground truth
  flow           estimate optical flow between two images
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import apply_ablation, apply_overrides, load_config
from .errors import FramefuseError
from .flow import estimate_flow, write_flow
from .images import load_image
from .pipeline import evaluate_directories, run_pipeline
from .synthetic import SceneSpec, generate_synthetic, scene_from_json

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="framefuse",
        description="High-speed video synthesis from asynchronous camera arrays",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="enable debug logging"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_syn = sub.add_parser("synthesize", help="synthesize frames from a manifest")
    p_syn.add_argument("--manifest", required=True, help="capture manifest JSON")
    p_syn.add_argument("--config", default=None, help="TOML configuration file")
    p_syn.add_argument("--out", required=True, help="output directory")
    p_syn.add_argument(
        "--flows", default=None, help="directory of precomputed flow files"
    )
    p_syn.add_argument(
        "--gt", default=None, help="directory of ground-truth frames for metrics"
    )
    p_syn.add_argument(
        "--ablate",
        choices=["opf", "spm", "lab"],
        default=None,
        help="disable one stage: opf=flow validation, spm=region merging, "
        "lab=label optimization",
    )
    p_syn.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config field (repeatable)",
    )

    p_gen = sub.add_parser("gen-synthetic", help="generate a synthetic dataset")
    p_gen.add_argument("--spec", default=None, help="scene spec JSON (defaults used if omitted)")
    p_gen.add_argument("--out", required=True, help="output directory")

    p_eval = sub.add_parser("eval", help="score frames against ground truth")
    p_eval.add_argument("--pred", required=True, help="directory with frame_*.png")
    p_eval.add_argument("--gt", required=True, help="directory with gt_*.png")
    p_eval.add_argument("--report", required=True, help="where to write the JSON report")

    p_flow = sub.add_parser("flow", help="estimate flow between two images")
    p_flow.add_argument("--a", required=True, help="first image")
    p_flow.add_argument("--b", required=True, help="second image")
    p_flow.add_argument("--out", required=True, help="output flow file")
    return parser


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise FramefuseError(f"override {pair!r} is not KEY=VALUE")
        key, raw = pair.split("=", 1)
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synthesize":
            cfg = load_config(args.config)
            cfg = apply_overrides(cfg, _parse_overrides(args.set))
            cfg = apply_ablation(cfg, args.ablate)
            report = run_pipeline(
                args.manifest,
                args.out,
                cfg,
                flows_dir=args.flows,
                gt_dir=args.gt,
            )
            print(
                f"synthesized {len(report['tasks'])} frame(s) to {args.out} "
                f"({report['seconds_per_frame']:.2f}s per frame)"
            )
        elif args.command == "gen-synthetic":
            spec = scene_from_json(args.spec) if args.spec else SceneSpec()
            summary = generate_synthetic(spec, args.out)
            print(
                f"wrote {summary['frames']} frames and "
                f"{len(summary['tasks'])} task ground truths to {args.out}"
            )
        elif args.command == "eval":
            summary = evaluate_directories(args.pred, args.gt)
            path = Path(args.report)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
            print(
                f"mean SSIM {summary['mean_ssim']:.4f} over "
                f"{len(summary['frames'])} frame(s); report at {path}"
            )
        elif args.command == "flow":
            field = estimate_flow(load_image(args.a), load_image(args.b))
            write_flow(field, args.out)
            print(f"wrote flow field {field.shape[1]}x{field.shape[0]} to {args.out}")
    except FramefuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
