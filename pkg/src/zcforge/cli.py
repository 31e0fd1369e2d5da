"""Command-line entry point binding all modules.

Exit codes: 0 ok, 2 configuration problem, 3 data problem, 4 numeric or
search failure. Output files are written under a ``.partial`` name and
renamed only when complete.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import genstats, search, statsgen
from .config import RunConfig
from .errors import (ConfigError, ExecutionFailure, FormatError, InitExhausted,
                     InsufficientRecords, InsufficientSpaces, ManifestMismatch,
                     NumericalFailure, OverlapError, ParseError, ShapeMismatch,
                     SpaceTooSmall, VariationExhausted, ZcforgeError)
from .evolve import Individual, run_evolution
from .program import format_program, parse_program
from .scoring import (score_network, tau_with_failures, rho_with_failures,
                      top_decile_tau)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_CONFIG_ERRORS = (ConfigError, ParseError)
_DATA_ERRORS = (FormatError, ManifestMismatch, OverlapError, InsufficientRecords,
                InsufficientSpaces, SpaceTooSmall, FileNotFoundError)
_NUMERIC_ERRORS = (NumericalFailure, InitExhausted, VariationExhausted,
                   ExecutionFailure, ShapeMismatch)


def _atomic_write(path: Path, text: str):
    tmp = Path(str(path) + ".partial")
    tmp.write_text(text)
    os.replace(tmp, path)


def _load_program(path: str):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"program file {p} does not exist")
    return parse_program(p.read_text())


# --- commands -------------------------------------------------------------------

def cmd_gen_stats(args) -> int:
    cfg = RunConfig.from_file(args.config)
    paths = genstats.generate_datasets(cfg, args.out)
    for split, path in paths.items():
        summary = ds.validate_dataset(path)
        print(f"{split}: {path} ({summary['records']} records, "
              f"{summary['spaces']} spaces)")
    return EXIT_OK


def cmd_evolve(args) -> int:
    cfg = RunConfig.from_file(args.config)
    td = ds.read_dataset(args.data)
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    resume = run_dir / "checkpoint.json" if args.resume else None
    if resume is not None and not resume.exists():
        raise ConfigError(f"--resume requested but {resume} does not exist")

    result = run_evolution(cfg.evolution_config(), td,
                           log_path=run_dir / "log.jsonl",
                           checkpoint_path=run_dir / "checkpoint.json",
                           resume_from=resume)

    for i, ind in enumerate(result.hall_of_fame.entries):
        _atomic_write(run_dir / f"hof_{i}.prog", format_program(ind.program))
    _atomic_write(run_dir / "final_population.json", json.dumps(
        [ind.to_record() for ind in result.final_population], indent=1))
    _atomic_write(run_dir / "run_meta.json", json.dumps({
        "config": cfg.raw,
        "data_dir": str(Path(args.data).resolve()),
        "dataset_ids": result.dataset_ids,
        "hall_of_fame": [ind.to_record() for ind in result.hall_of_fame.entries],
    }, indent=1))
    best = result.hall_of_fame.best
    print(f"run complete: best fitness {best.fitness:.4f}")
    print(f"best program:\n{format_program(best.program)}", end="")
    return EXIT_OK


def cmd_score(args) -> int:
    prog = _load_program(args.program)
    td = ds.read_dataset(args.data)
    results, accs = [], []
    for rec in td.all_records():
        r = score_network(prog, rec)
        results.append(r)
        accs.append(rec.accuracy)
        print(f"{rec.id}\t{'failed' if r.failed else repr(r.score)}")
    print(f"# tau\t{tau_with_failures(results, accs)!r}")
    print(f"# rho\t{rho_with_failures(results, accs)!r}")
    if args.top_decile:
        td_tau = top_decile_tau(results, accs)
        print(f"# top_decile_tau\t{'failed' if td_tau is None else repr(td_tau)}")
    return EXIT_OK


def cmd_test(args) -> int:
    run_dir = Path(args.run)
    meta_path = run_dir / "run_meta.json"
    if not meta_path.exists():
        raise FormatError(f"{run_dir} is not a run directory (no run_meta.json)")
    meta = json.loads(meta_path.read_text())
    final_population = [Individual.from_record(r) for r in json.loads(
        (run_dir / "final_population.json").read_text())]
    from .evolve import HallOfFame
    hof = HallOfFame(max(3, len(meta["hall_of_fame"])))
    hof.entries = [Individual.from_record(r) for r in meta["hall_of_fame"]]

    test_td = ds.read_dataset(args.data)
    reports = search.test_programs(final_population, hof, test_td,
                                   meta["dataset_ids"])
    payload = []
    for rep in reports:
        payload.append({"name": rep.name, "program": rep.program_text,
                        "per_space": rep.per_space, "pooled": rep.pooled})
        print(f"{rep.name}\tpooled_tau={rep.pooled['tau']:.4f}\t"
              f"pooled_rho={rep.pooled['rho']:.4f}")
        for space, stats in sorted(rep.per_space.items()):
            print(f"  {space}\ttau={stats['tau']:.4f}\trho={stats['rho']:.4f}")
    _atomic_write(run_dir / "test_report.json", json.dumps(payload, indent=1))
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = RunConfig.from_file(args.config)
    prog = _load_program(args.program)
    repeats = args.repeats or int(cfg.raw["sweep"]["repeats"])
    cells = search.analyze_program(prog, cfg.sweep_spec(), repeats, cfg.seed)
    lines = ["hw\tdepth\tkernel\tchannels\trepeats\tfailures\tmean\tstd\tmedian"]
    for c in cells:
        lines.append(f"{c.hw}\t{c.depth}\t{c.kernel}\t{c.channels}\t"
                     f"{c.repeats}\t{c.failures}\t{c.mean!r}\t{c.std!r}\t{c.median!r}")
    table = "\n".join(lines) + "\n"
    if args.out:
        _atomic_write(Path(args.out), table)
        print(f"wrote {args.out}")
    else:
        print(table, end="")
    if args.plot_out:
        # x/y/series columns for external plotting: score vs channel count,
        # one series per (hw, depth, kernel) combination
        rows = ["x\ty\tseries"]
        for c in cells:
            rows.append(f"{c.channels}\t{c.median!r}\t"
                        f"hw{c.hw}-d{c.depth}-k{c.kernel}")
        _atomic_write(Path(args.plot_out), "\n".join(rows) + "\n")
        print(f"wrote {args.plot_out}")
    return EXIT_OK


def cmd_nas_search(args) -> int:
    cfg = RunConfig.from_file(args.config)
    prog = _load_program(args.program)
    nas = cfg.raw["nas"]
    space = cfg.nas_space()
    rng = random.Random(cfg.seed)

    if nas["accuracy"] == "params":
        max_params = statsgen.param_count(statsgen.ToyArch(
            pattern=space.pattern, in_hw=space.in_hw,
            channels=(max(space.channel_choices),) * max(space.depth_choices),
            kernels=(max(space.kernel_choices),) * max(space.depth_choices),
            num_classes=space.num_classes))

        def accuracy_fn(arch):
            return statsgen.param_count(arch) / max_params
    elif nas["accuracy"] == "train":
        lab = cfg.raw["labeling"]

        def accuracy_fn(arch):
            arng = np.random.Generator(np.random.PCG64(
                statsgen.derive_seed(cfg.seed, hash(arch.channels) & 0xFFFF)))
            params = statsgen.init_params(arch, arng)
            data = statsgen.synth_classification_data(
                arch, statsgen.TaskConfig(train_size=lab["train_size"],
                                          test_size=lab["test_size"],
                                          noise=lab["noise"]), arng)
            return statsgen.train_and_label(arch, params, data,
                                            epochs=int(lab["epochs"]),
                                            lr=float(lab["lr"]), rng=arng,
                                            batch_size=int(lab["batch_size"]))
    else:
        raise ConfigError(f"nas.accuracy must be 'params' or 'train', "
                          f"got {nas['accuracy']!r}")

    result = search.aging_evolution(prog, space, budget=int(nas["budget"]),
                                    pop=int(nas["pop"]), sample=int(nas["sample"]),
                                    rng=rng, accuracy_fn=accuracy_fn)
    print("eval\tbest_true_accuracy")
    for i, acc in enumerate(result.trajectory):
        print(f"{i + 1}\t{acc!r}")
    print(f"# best arch: {json.dumps(result.best_arch.describe())}")
    return EXIT_OK


def cmd_validate_data(args) -> int:
    summary = ds.validate_dataset(args.dir)
    print(f"ok: {summary['records']} records, {summary['spaces']} spaces, "
          f"{summary['blocks']} blocks")
    return EXIT_OK


# --- wiring ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zcforge",
        description="Evolve and analyze zero-cost network-scoring programs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-stats", help="build toy spaces, label, write dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_stats)

    p = sub.add_parser("evolve", help="run the evolutionary search")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true",
                   help="continue from the run's checkpoint")
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("score", help="score every network in a dataset")
    p.add_argument("--program", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--top-decile", action="store_true")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("test", help="held-out test of a finished run")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_test)

    p = sub.add_parser("analyze", help="architecture-parameter sweep of a program")
    p.add_argument("--program", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--repeats", type=int, default=0)
    p.add_argument("--out", default="")
    p.add_argument("--plot-out", default="",
                   help="also emit x/y/series columns for external plotting")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("nas-search", help="aging-evolution NAS with a proxy")
    p.add_argument("--program", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_nas_search)

    p = sub.add_parser("validate-data", help="integrity-check a dataset")
    p.add_argument("dir")
    p.set_defaults(fn=cmd_validate_data)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ZcforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
