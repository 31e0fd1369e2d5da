"""Dataset generation: sample toy spaces, capture statistics, attach labels.

Labels come either from genuinely training each network for a few epochs
("train" mode) or from a planted rule ("planted" mode): accuracy is a fixed
strictly increasing function of the per-network mean over blocks of the mean
absolute value of one statistic slot. Planted datasets give the search an
exact recoverability oracle.

Generation is an embarrassingly parallel map over architectures with
per-network seeds derived from the master seed, so the parallelism degree
never changes the output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import statsgen
from .config import RunConfig
from .dataset import NetworkRecord, write_dataset
from .statsgen import (BlockStats, SpaceSpec, TaskConfig, ToyArch,
                       param_count, flop_count)


@dataclass
class _Captured:
    record_id: str
    space: str
    arch: ToyArch
    blocks: List[BlockStats]
    accuracy: Optional[float]  # None until planted labels are assigned
    planted_stat: float


def planted_statistic(blocks: List[BlockStats], slot: str) -> float:
    return float(np.mean([np.mean(np.abs(b.tensors[slot])) for b in blocks]))


def planted_accuracy_map(values: List[float]) -> Tuple[float, float]:
    """Center/scale of the strictly increasing statistic -> accuracy map."""
    arr = np.asarray(values, dtype=np.float64)
    center = float(np.median(arr))
    mad = float(np.median(np.abs(arr - center)))
    scale = 2.0 * 1.4826 * mad
    if scale <= 0 or not math.isfinite(scale):
        scale = float(arr.std()) or 1.0
    return center, scale


def planted_accuracy(value: float, center: float, scale: float) -> float:
    return 0.5 + 0.4 * math.tanh((value - center) / scale)


def _capture_one(space: SpaceSpec, arch: ToyArch, record_id: str, seed: int,
                 cfg: RunConfig) -> _Captured:
    lab = cfg.raw["labeling"]
    sg = cfg.raw["statsgen"]
    dtype = np.float64 if sg["precision"] == "f64" else np.float32
    rng = np.random.Generator(np.random.PCG64(seed))
    params = statsgen.init_params(arch, rng, dtype=dtype)

    task = TaskConfig(train_size=lab["train_size"], test_size=lab["test_size"],
                      noise=lab["noise"])
    data = statsgen.synth_classification_data(arch, task, rng)
    x_train, y_train = data[0], data[1]
    batch = int(sg["batch_size"])
    x_cap, y_cap = x_train[:batch], y_train[:batch]

    blocks = statsgen.capture_stats(arch, params, x_cap, y_cap, rng,
                                    noise_scale=float(sg["noise_scale"]),
                                    dtype=dtype)
    accuracy = None
    if lab["mode"] == "train":
        accuracy = statsgen.train_and_label(
            arch, params, data, epochs=int(lab["epochs"]), lr=float(lab["lr"]),
            rng=rng, batch_size=int(lab["batch_size"]))
    stat = planted_statistic(blocks, lab["planted_slot"])
    return _Captured(record_id=record_id, space=space.name, arch=arch,
                     blocks=blocks, accuracy=accuracy, planted_stat=stat)


def generate_datasets(cfg: RunConfig, out_dir) -> Dict[str, Path]:
    """Build the evolution pool (and optionally a disjoint test pool) for
    every configured space and write them as datasets.

    Returns {"evolution": path} plus {"test": path} when a test pool was
    requested."""
    out = Path(out_dir)
    spaces = cfg.spaces()
    pool = int(cfg.raw["pool_per_space"])
    test_pool = int(cfg.raw["test_pool_per_space"])
    lab = cfg.raw["labeling"]
    workers = max(1, cfg.raw["workers"]) if cfg.raw["workers"] else None

    jobs = []
    for si, space in enumerate(spaces):
        arch_rng = np.random.Generator(np.random.PCG64(
            statsgen.derive_seed(cfg.seed, si, 0)))
        archs = statsgen.sample_space(space, pool + test_pool, arch_rng)
        for ai, arch in enumerate(archs):
            split = "ev" if ai < pool else "te"
            idx = ai if ai < pool else ai - pool
            record_id = f"{space.name}-{split}-{idx:04d}"
            seed = statsgen.derive_seed(cfg.seed, si, 1, ai)
            jobs.append((space, arch, record_id, seed))

    def run_job(job):
        return _capture_one(job[0], job[1], job[2], job[3], cfg)

    with ThreadPoolExecutor(max_workers=workers) as pool_exec:
        captured = list(pool_exec.map(run_job, jobs))

    if lab["mode"] == "planted":
        center, scale = planted_accuracy_map([c.planted_stat for c in captured])
        for c in captured:
            c.accuracy = planted_accuracy(c.planted_stat, center, scale)

    def to_record(c: _Captured) -> NetworkRecord:
        return NetworkRecord(
            id=c.record_id, space=c.space,
            dataset_name=cfg.raw["dataset_name"], accuracy=c.accuracy,
            meta={"params": param_count(c.arch), "flops": flop_count(c.arch),
                  "arch": c.arch.describe()},
            _blocks=c.blocks)

    ev_records = [to_record(c) for c in captured if "-ev-" in c.record_id]
    te_records = [to_record(c) for c in captured if "-te-" in c.record_id]

    paths = {"evolution": write_dataset(ev_records, out / "evolution")}
    if te_records:
        paths["test"] = write_dataset(te_records, out / "test")
    return paths
