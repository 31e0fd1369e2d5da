"""Downstream consumers of a discovered proxy: aging-evolution NAS over the
toy space, the held-out test protocol, and program-behaviour sweeps.

Aging evolution keeps a FIFO population; each step scores a mutated copy of
the proxy-best member of a random tournament and evicts the oldest member.
Only the proxy ever drives selection -- true accuracy is consulted purely
for reporting the best-so-far trajectory.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import statsgen
from .dataset import TaskDataset
from .errors import OverlapError
from .evolve import HallOfFame, Individual
from .program import ExprProgram, format_program
from .scoring import (ScoreResult, rho_with_failures, score_blocks,
                      tau_with_failures)
from .statsgen import SpaceSpec, ToyArch


# --- proxy evaluation on a fresh architecture ----------------------------------

def capture_and_score(proxy: ExprProgram, arch: ToyArch, seed: int,
                      batch_size: int = 1,
                      noise_scale: float = statsgen.DEFAULT_NOISE_SCALE) -> ScoreResult:
    """Zero-cost evaluation: initialize, run the three capture passes on a
    synthetic input batch, and apply the proxy. No training ever happens."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = statsgen.init_params(arch, rng)
    x = rng.standard_normal(
        (batch_size, arch.in_channels, arch.in_hw, arch.in_hw)).astype(np.float32)
    y = rng.integers(0, arch.num_classes, size=batch_size)
    blocks = statsgen.capture_stats(arch, params, x, y, rng, noise_scale=noise_scale)
    return score_blocks(proxy, blocks)


# --- aging evolution ------------------------------------------------------------

@dataclass
class NasRunResult:
    evaluations_used: int
    trajectory: List[float]  # best true accuracy after each evaluation
    best_arch: ToyArch
    best_accuracy: float


def _mutable_fields(spec: SpaceSpec, arch: ToyArch) -> List[tuple]:
    fields = []
    if len(spec.channel_choices) > 1:
        fields += [("channels", i) for i in range(arch.depth)]
    if len(spec.kernel_choices) > 1:
        fields += [("kernel", i) for i in range(arch.depth)]
    if arch.depth + 1 in spec.depth_choices:
        fields.append(("depth", +1))
    if arch.depth - 1 in spec.depth_choices:
        fields.append(("depth", -1))
    return fields


def mutate_arch(spec: SpaceSpec, arch: ToyArch, rng: random.Random) -> ToyArch:
    """Resample exactly one of: one block's channels, one block's kernel, or
    the depth (one block added or removed)."""
    fields = _mutable_fields(spec, arch)
    if not fields:
        return arch
    kind, where = fields[rng.randrange(len(fields))]
    channels, kernels = list(arch.channels), list(arch.kernels)
    if kind == "channels":
        options = [c for c in spec.channel_choices if c != channels[where]]
        channels[where] = options[rng.randrange(len(options))]
    elif kind == "kernel":
        options = [k for k in spec.kernel_choices if k != kernels[where]]
        kernels[where] = options[rng.randrange(len(options))]
    elif where > 0:
        channels.append(spec.channel_choices[rng.randrange(len(spec.channel_choices))])
        kernels.append(spec.kernel_choices[rng.randrange(len(spec.kernel_choices))])
    else:
        channels.pop()
        kernels.pop()
    return ToyArch(pattern=spec.pattern, in_hw=spec.in_hw,
                   channels=tuple(channels), kernels=tuple(kernels),
                   num_classes=spec.num_classes)


def random_arch(spec: SpaceSpec, rng: random.Random) -> ToyArch:
    """One architecture uniform over the spec's grid."""
    per_block = len(spec.channel_choices) * len(spec.kernel_choices)
    weights = [per_block ** d for d in spec.depth_choices]
    r = rng.randrange(sum(weights))
    depth = spec.depth_choices[-1]
    for d, w in zip(spec.depth_choices, weights):
        if r < w:
            depth = d
            break
        r -= w
    channels = tuple(spec.channel_choices[rng.randrange(len(spec.channel_choices))]
                     for _ in range(depth))
    kernels = tuple(spec.kernel_choices[rng.randrange(len(spec.kernel_choices))]
                    for _ in range(depth))
    return ToyArch(pattern=spec.pattern, in_hw=spec.in_hw, channels=channels,
                   kernels=kernels, num_classes=spec.num_classes)


def aging_evolution(proxy: ExprProgram, space_spec: SpaceSpec, budget: int,
                    pop: int, sample: int, rng: random.Random,
                    accuracy_fn: Callable[[ToyArch], float],
                    proxy_score_fn: Optional[Callable[[ToyArch, int], float]] = None
                    ) -> NasRunResult:
    """Standard aging evolution guided by proxy scores.

    ``accuracy_fn`` supplies the true accuracy for trajectory reporting only.
    A failing proxy score ranks below every finite one."""
    if budget < pop:
        raise ValueError(f"budget {budget} smaller than population {pop}")
    base_seed = rng.randrange(2 ** 62)

    def default_score(arch: ToyArch, index: int) -> float:
        result = capture_and_score(proxy, arch, statsgen.derive_seed(base_seed, index))
        return result.score if not result.failed else -math.inf

    score_fn = proxy_score_fn or default_score

    population = deque()
    trajectory: List[float] = []
    best_acc = -math.inf
    best_arch: Optional[ToyArch] = None
    for i in range(pop):
        arch = random_arch(space_spec, rng)
        population.append((arch, score_fn(arch, i)))
        acc = accuracy_fn(arch)
        if acc > best_acc:
            best_acc, best_arch = acc, arch
        trajectory.append(best_acc)

    evals = pop
    while evals < budget:
        contenders = rng.sample(range(len(population)), min(sample, len(population)))
        parent = max((population[i] for i in contenders), key=lambda t: t[1])
        child = mutate_arch(space_spec, parent[0], rng)
        population.append((child, score_fn(child, evals)))
        population.popleft()
        acc = accuracy_fn(child)
        if acc > best_acc:
            best_acc, best_arch = acc, child
        trajectory.append(best_acc)
        evals += 1

    return NasRunResult(evaluations_used=evals, trajectory=trajectory,
                        best_arch=best_arch, best_accuracy=best_acc)


# --- held-out test protocol ------------------------------------------------------

@dataclass
class ProgramTestReport:
    name: str
    program_text: str
    per_space: Dict[str, dict]
    pooled: dict


def test_programs(final_population: List[Individual], hof: HallOfFame,
                  test_dataset: TaskDataset,
                  evolution_ids: Sequence[str]) -> List[ProgramTestReport]:
    """Score the fittest final-population program plus the two fittest
    hall-of-fame programs on a disjoint test set."""
    overlap = set(evolution_ids) & test_dataset.record_ids()
    if overlap:
        raise OverlapError(f"{len(overlap)} record ids appear in both datasets, "
                           f"e.g. {sorted(overlap)[:3]}")
    final_best = max(final_population, key=lambda ind: ind.fitness)
    chosen = [("final_best", final_best)]
    chosen += [(f"hof_{i}", ind) for i, ind in enumerate(hof.entries[:2])]

    reports = []
    for name, ind in chosen:
        per_space = {}
        all_results: List[ScoreResult] = []
        all_accs: List[float] = []
        for space in test_dataset.space_names:
            records = test_dataset.spaces[space]
            results = [score_blocks(ind.program, rec.blocks) for rec in records]
            accs = [rec.accuracy for rec in records]
            per_space[space] = {
                "tau": tau_with_failures(results, accs),
                "rho": rho_with_failures(results, accs),
                "n": len(records),
            }
            all_results += results
            all_accs += accs
        pooled = {
            "tau": tau_with_failures(all_results, all_accs),
            "rho": rho_with_failures(all_results, all_accs),
            "n": len(all_accs),
        }
        reports.append(ProgramTestReport(name=name,
                                         program_text=format_program(ind.program),
                                         per_space=per_space, pooled=pooled))
    return reports


# --- behaviour sweeps -------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    channels: tuple = (4, 8, 16, 32)
    kernels: tuple = (3,)
    depths: tuple = (3, 4, 5)
    hws: tuple = (8,)
    pattern: str = "RCB"
    batch_size: int = 1
    num_classes: int = 4


@dataclass
class SweepCell:
    channels: int
    kernel: int
    depth: int
    hw: int
    repeats: int
    failures: int
    mean: float
    std: float
    median: float
    scores: Optional[List[float]] = None


def analyze_program(p: ExprProgram, sweep: SweepSpec, repeats: int, seed: int,
                    keep_scores: bool = False) -> List[SweepCell]:
    """Score surface of a program over architecture parameters.

    Each grid cell draws ``repeats`` fresh initializations and capture
    inputs of a toy network with that cell's shape and records the score
    distribution."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    cells: List[SweepCell] = []
    for hw in sweep.hws:
        for d in sweep.depths:
            for k in sweep.kernels:
                for c in sweep.channels:
                    arch = ToyArch(pattern=sweep.pattern, in_hw=hw,
                                   channels=(c,) * d, kernels=(k,) * d,
                                   num_classes=sweep.num_classes)
                    scores = []
                    failures = 0
                    for r in range(repeats):
                        cell_seed = statsgen.derive_seed(seed, hw, d, k, c, r)
                        result = capture_and_score(p, arch, cell_seed,
                                                   batch_size=sweep.batch_size)
                        if result.failed:
                            failures += 1
                        else:
                            scores.append(result.score)
                    if scores:
                        arr = np.asarray(scores, dtype=np.float64)
                        mean, std = float(arr.mean()), float(arr.std())
                        median = float(np.median(arr))
                    else:
                        mean = std = median = float("nan")
                    cells.append(SweepCell(channels=c, kernel=k, depth=d, hw=hw,
                                           repeats=repeats, failures=failures,
                                           mean=mean, std=std, median=median,
                                           scores=scores if keep_scores else None))
    return cells


def axis_medians(cells: List[SweepCell], axis: str) -> Dict[int, float]:
    """Median score at each level of one grid axis, pooling every other axis
    and all repeats. Requires cells built with keep_scores=True."""
    pools: Dict[int, list] = {}
    for cell in cells:
        if cell.scores is None:
            raise ValueError("axis_medians needs cells with keep_scores=True")
        pools.setdefault(getattr(cell, axis), []).extend(cell.scores)
    return {level: float(np.median(np.asarray(vals)))
            for level, vals in sorted(pools.items())}
