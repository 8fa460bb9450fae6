"""Command line entry point.

    lifegraph <stage> --config <path> [--threads N] [--output-dir <path>]

Stages: synth, extract-stays, detect-places, build-graph, factorize,
cluster, analyze, compare-baseline, pipeline. Exit codes: 0 ok, 1 config
error, 2 missing upstream artifact, 3 invariant violation or data error.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .corpus import ParseError
from .errors import ConfigError, InvariantError, MissingArtifactError
from .pipeline import STAGES, run_stage

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MISSING = 2
EXIT_INVARIANT = 3

_STAGE_CHOICES = [*STAGES, "pipeline"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lifegraph",
        description="Cluster life patterns from raw GPS trajectories.")
    parser.add_argument("stage", choices=_STAGE_CHOICES,
                        help="pipeline stage to run ('pipeline' runs synth/ingest through analyze)")
    parser.add_argument("--config", required=True, help="path to the run configuration file")
    parser.add_argument("--output-dir", default=None,
                        help="artifact directory (overrides [run] output_dir)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for per-user stages; does not change results")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(args.config)
        counts = run_stage(args.stage, cfg, output_dir=args.output_dir, threads=args.threads)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: missing-artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (InvariantError, ParseError, ValueError, OSError) as exc:
        print(f"error: invariant: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    summary = " ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    print(f"{args.stage}: ok {summary}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
