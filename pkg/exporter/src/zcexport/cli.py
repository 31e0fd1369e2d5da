"""Command line for export jobs.

    zcexport --models models.py --labels labels.csv --out DIR
             [--pattern RCB] [--batch-size 1] [--noise-scale 0.1]
             [--input-hw 8] [--input-channels 3] [--seed 0]
             [--dataset-name exported] [--space exported]

``models.py`` must define build_models() returning [(id, torch module), ...];
``labels.csv`` needs columns id,accuracy.
"""

from __future__ import annotations

import argparse
import sys

from .capture import DEFAULT_NOISE_SCALE, PatternNotFound
from .export import ExportJob, export, load_labels_csv, load_models_file


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zcexport",
                                description="Export torch-model statistics "
                                            "into the zcforge dataset format")
    p.add_argument("--models", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pattern", default="RCB", choices=("RCB", "CBR"))
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--noise-scale", type=float, default=DEFAULT_NOISE_SCALE)
    p.add_argument("--input-hw", type=int, default=8)
    p.add_argument("--input-channels", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset-name", default="exported")
    p.add_argument("--space", default="exported")
    return p


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        models = load_models_file(args.models)
        labels = load_labels_csv(args.labels)
        job = ExportJob(models=models, labels=labels, out_dir=args.out,
                        dataset_name=args.dataset_name, space=args.space,
                        pattern=args.pattern, batch_size=args.batch_size,
                        noise_scale=args.noise_scale,
                        input_channels=args.input_channels,
                        input_hw=args.input_hw, seed=args.seed)
        path = export(job)
    except (ValueError, OSError, PatternNotFound) as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
