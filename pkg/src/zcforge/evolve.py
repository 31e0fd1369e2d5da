"""The evolutionary search loop: VarOr variation, validity filtering,
min-over-spaces fitness and hall-of-fame tracking.

Each generation builds floor(n/2) offspring by exclusive choice of
crossover / mutation / reproduction, adds floor(n/2) fresh random valid
programs for diversity, and re-evaluates everything on a freshly sampled
fitness batch (s spaces, k networks each); an individual's fitness is the
minimum Kendall tau across its sampled spaces. Every per-generation random
stream is derived from (master seed, generation), so a run is reproducible
from a checkpoint without serializing generator state, and evaluation is a
pure parallel map whose results do not depend on the degree of parallelism.
"""

from __future__ import annotations

import json
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Dict, List, Optional

from .dataset import NetworkRecord, TaskDataset, sample_fitness_batch
from .errors import ConfigError, InitExhausted, VariationExhausted
from .program import (ExprProgram, check_validity, crossover, format_program,
                      mutate, parse_program, random_tree)
from .scoring import score_blocks, tau_with_failures

ENV_THREADS = "ZCFORGE_THREADS"


@dataclass
class EvolutionConfig:
    population_size: int = 50
    generations: int = 15
    tournament_size: int = 4
    crossover_prob: float = 0.4
    mutation_prob: float = 0.4
    spaces_per_eval: int = 4
    nets_per_space: int = 20
    min_depth: int = 2
    max_depth: int = 10
    seed: int = 0
    to_scalar: str = "mean"
    selection_mode: str = "algorithm1"  # or "mu_comma_lambda"
    mu: int = 25
    hall_of_fame_size: int = 3
    init_budget: int = 10000
    variation_budget: int = 10000
    probe_blocks: int = 8
    workers: int = 0  # 0: ZCFORGE_THREADS env or cpu count

    def __post_init__(self):
        if self.crossover_prob + self.mutation_prob > 1.0 + 1e-9:
            raise ConfigError("crossover_prob + mutation_prob must be <= 1")
        if self.selection_mode not in ("algorithm1", "mu_comma_lambda"):
            raise ConfigError(f"unknown selection_mode {self.selection_mode!r}")
        if self.hall_of_fame_size < 3:
            raise ConfigError("hall_of_fame_size must be >= 3")

    def resolved_workers(self) -> int:
        if self.workers > 0:
            return self.workers
        env = os.environ.get(ENV_THREADS)
        if env:
            return max(1, int(env))
        return os.cpu_count() or 1


@dataclass
class Individual:
    program: ExprProgram
    fitness: Optional[float] = None
    per_space_tau: Dict[str, float] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "program": format_program(self.program),
            "fitness": self.fitness,
            "per_space_tau": dict(self.per_space_tau),
        }

    @staticmethod
    def from_record(rec: dict) -> "Individual":
        return Individual(program=parse_program(rec["program"]),
                          fitness=rec["fitness"],
                          per_space_tau=dict(rec["per_space_tau"]))


class HallOfFame:
    """Best-ever individuals across all generations, best first. Ties keep
    the earlier entrant; best fitness never decreases."""

    def __init__(self, size: int):
        self.size = size
        self.entries: List[Individual] = []
        self._counter = 0
        self._order: List[int] = []

    def update(self, individuals: List[Individual]):
        for ind in individuals:
            if ind.fitness is None:
                continue
            self.entries.append(Individual(program=ind.program,
                                           fitness=ind.fitness,
                                           per_space_tau=dict(ind.per_space_tau)))
            self._order.append(self._counter)
            self._counter += 1
        ranked = sorted(range(len(self.entries)),
                        key=lambda i: (-self.entries[i].fitness, self._order[i]))
        keep = ranked[:self.size]
        self.entries = [self.entries[i] for i in keep]
        self._order = [self._order[i] for i in keep]

    @property
    def best(self) -> Optional[Individual]:
        return self.entries[0] if self.entries else None


def _derived_rng(seed: int, *stream: int) -> random.Random:
    mixed = seed & 0xFFFFFFFFFFFF
    for s in stream:
        mixed = (mixed * 1000003 + s + 0x9E3779B9) & 0xFFFFFFFFFFFFFFFF
    return random.Random(mixed)


def build_probe(td: TaskDataset, probe_blocks: int) -> list:
    """A small fixed statistics subset: blocks of the first record of each
    space, round-robin, capped at probe_blocks."""
    pools = [td.spaces[name][0].blocks for name in td.space_names]
    probe = []
    i = 0
    while len(probe) < probe_blocks and any(i < len(p) for p in pools):
        for p in pools:
            if i < len(p) and len(probe) < probe_blocks:
                probe.append(p[i])
        i += 1
    if not probe:
        raise ConfigError("task dataset yielded an empty probe")
    return probe


def init_population(cfg: EvolutionConfig, probe: list,
                    rng: random.Random) -> List[Individual]:
    """Exactly n valid individuals; invalid draws are discarded and redrawn."""
    out: List[Individual] = []
    draws = 0
    while len(out) < cfg.population_size:
        if draws >= cfg.init_budget:
            raise InitExhausted(
                f"{draws} draws produced only {len(out)} valid programs; "
                f"the probe set looks unsatisfiable")
        draws += 1
        p = random_tree(rng, cfg.min_depth, cfg.max_depth, cfg.to_scalar)
        if check_validity(p, probe):
            out.append(Individual(program=p))
    return out


def _tournament(pop: List[Individual], rng: random.Random, k: int) -> Individual:
    best = None
    for _ in range(k):
        cand = pop[rng.randrange(len(pop))]
        if best is None or cand.fitness > best.fitness:
            best = cand
    return best


def choose_branch(rng: random.Random, crossover_prob: float,
                  mutation_prob: float) -> str:
    """Exclusive draw among the three variation branches."""
    r = rng.random()
    if r < crossover_prob:
        return "crossover"
    if r < crossover_prob + mutation_prob:
        return "mutation"
    return "reproduction"


def var_or(population: List[Individual], cfg: EvolutionConfig,
           rng: random.Random, probe: list) -> List[Individual]:
    """floor(n/2) valid offspring by exclusive crossover / mutation /
    reproduction with tournament-selected parents."""
    target = cfg.population_size // 2
    out: List[Individual] = []
    attempts = 0
    while len(out) < target:
        if attempts >= cfg.variation_budget:
            raise VariationExhausted(f"variation burned {attempts} attempts for "
                                     f"{len(out)}/{target} offspring")
        attempts += 1
        branch = choose_branch(rng, cfg.crossover_prob, cfg.mutation_prob)
        if branch == "crossover":
            p1 = _tournament(population, rng, cfg.tournament_size)
            p2 = _tournament(population, rng, cfg.tournament_size)
            child = crossover(p1.program, p2.program, rng)
        elif branch == "mutation":
            parent = _tournament(population, rng, cfg.tournament_size)
            child = mutate(parent.program, rng)
        else:
            parent = _tournament(population, rng, cfg.tournament_size)
            out.append(Individual(program=parent.program))  # already valid
            continue
        if check_validity(child, probe):
            out.append(Individual(program=child))
    return out


@dataclass
class EvolutionResult:
    final_population: List[Individual]
    hall_of_fame: HallOfFame
    log: List[dict]
    dataset_ids: List[str]


def _evaluate(individuals: List[Individual], batch: Dict[str, list],
              workers: int) -> int:
    """Assign min-over-spaces tau fitness to every individual. Returns the
    number of program-network evaluations performed."""
    space_names = sorted(batch)
    blocks_by_space = {name: [rec.blocks for rec in batch[name]]
                       for name in space_names}
    accs_by_space = {name: [rec.accuracy for rec in batch[name]]
                     for name in space_names}

    def eval_one(ind: Individual) -> int:
        count = 0
        taus = {}
        for name in space_names:
            results = []
            for blocks in blocks_by_space[name]:
                results.append(score_blocks(ind.program, blocks))
                count += 1
            taus[name] = tau_with_failures(results, accs_by_space[name])
        ind.per_space_tau = taus
        ind.fitness = min(taus.values())
        return count

    if workers <= 1 or len(individuals) <= 1:
        return sum(eval_one(ind) for ind in individuals)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return sum(pool.map(eval_one, individuals))


def run_evolution(cfg: EvolutionConfig, td: TaskDataset,
                  probe: Optional[list] = None,
                  log_path: Optional[Path] = None,
                  checkpoint_path: Optional[Path] = None,
                  resume_from: Optional[Path] = None,
                  on_generation: Optional[Callable] = None) -> EvolutionResult:
    """Run the full search. Fitness batches, variation and fresh-diversity
    draws all derive from (seed, generation); identical config and seed give
    identical results at any parallelism degree."""
    n_spaces = len(td.space_names)
    if n_spaces < cfg.spaces_per_eval:
        raise ConfigError(f"dataset has {n_spaces} spaces, config wants "
                          f"{cfg.spaces_per_eval} per evaluation")
    for name in td.space_names:
        if len(td.spaces[name]) < cfg.nets_per_space:
            raise ConfigError(f"space {name!r} holds {len(td.spaces[name])} "
                              f"records, config samples {cfg.nets_per_space}")
    td.preload()
    if probe is None:
        probe = build_probe(td, cfg.probe_blocks)
    workers = cfg.resolved_workers()
    dataset_ids = sorted(td.record_ids())

    log: List[dict] = []
    log_fh = open(log_path, "w") if log_path else None

    def emit(record: dict):
        log.append(record)
        if log_fh:
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()

    try:
        emit({"type": "config", "config": asdict(cfg),
              "dataset_ids": dataset_ids, "spaces": td.space_names})

        hof = HallOfFame(cfg.hall_of_fame_size)
        start_gen = 0
        if resume_from is not None:
            state = json.loads(Path(resume_from).read_text())
            population = [Individual.from_record(r) for r in state["population"]]
            hof.entries = [Individual.from_record(r) for r in state["hall_of_fame"]]
            hof._order = list(range(len(hof.entries)))
            hof._counter = len(hof.entries)
            start_gen = int(state["next_generation"])
            emit({"type": "resume", "next_generation": start_gen})
        else:
            init_rng = _derived_rng(cfg.seed, 0xA11CE)
            population = init_population(cfg, probe, init_rng)
            t0 = time.monotonic()
            batch = sample_fitness_batch(td, cfg.spaces_per_eval,
                                         cfg.nets_per_space,
                                         _derived_rng(cfg.seed, 0xBA7C4, 0))
            _assert_all_valid(population, probe)
            evals = _evaluate(population, batch, workers)
            _assert_eval_count(evals, len(population), cfg)
            hof.update(population)
            emit(_gen_record(-1, population, batch, evals, time.monotonic() - t0))

        for gen in range(start_gen, cfg.generations):
            t0 = time.monotonic()
            var_rng = _derived_rng(cfg.seed, 0x5EED, gen)
            offspring = var_or(population, cfg, var_rng, probe)
            fresh_rng = _derived_rng(cfg.seed, 0xF0E5, gen)
            fresh_cfg_n = cfg.population_size // 2
            fresh: List[Individual] = []
            draws = 0
            while len(fresh) < fresh_cfg_n:
                if draws >= cfg.init_budget:
                    raise InitExhausted("diversity draws exhausted")
                draws += 1
                p = random_tree(fresh_rng, cfg.min_depth, cfg.max_depth, cfg.to_scalar)
                if check_validity(p, probe):
                    fresh.append(Individual(program=p))
            offspring = offspring + fresh

            batch = sample_fitness_batch(td, cfg.spaces_per_eval,
                                         cfg.nets_per_space,
                                         _derived_rng(cfg.seed, 0xBA7C4, gen + 1))
            _assert_all_valid(offspring, probe)
            evals = _evaluate(offspring, batch, workers)
            _assert_eval_count(evals, len(offspring), cfg)
            hof.update(offspring)

            if cfg.selection_mode == "algorithm1":
                population = offspring
            else:  # mu_comma_lambda: the best mu offspring survive
                ranked = sorted(range(len(offspring)),
                                key=lambda i: (-offspring[i].fitness, i))
                population = [offspring[i] for i in ranked[:cfg.mu]]

            emit(_gen_record(gen, offspring, batch, evals, time.monotonic() - t0))
            if checkpoint_path is not None:
                _write_checkpoint(checkpoint_path, gen + 1, population, hof)
            if on_generation is not None:
                on_generation(gen, population, hof)

        return EvolutionResult(final_population=population, hall_of_fame=hof,
                               log=log, dataset_ids=dataset_ids)
    finally:
        if log_fh:
            log_fh.close()


def _assert_all_valid(individuals: List[Individual], probe: list):
    # every individual entering evaluation must already be probe-valid
    for ind in individuals:
        if not check_validity(ind.program, probe):
            raise AssertionError("individual entered evaluation without passing "
                                 "the validity probe")


def _assert_eval_count(evals: int, n_programs: int, cfg: EvolutionConfig):
    expected = n_programs * cfg.spaces_per_eval * cfg.nets_per_space
    if evals != expected:
        raise AssertionError(f"evaluation count {evals} != expected {expected}")


def _gen_record(gen: int, individuals: List[Individual], batch: Dict[str, list],
                evals: int, wall: float) -> dict:
    fits = sorted(ind.fitness for ind in individuals)
    mid = len(fits) // 2
    median = fits[mid] if len(fits) % 2 else 0.5 * (fits[mid - 1] + fits[mid])
    return {
        "type": "generation",
        "generation": gen,
        "sampled_spaces": sorted(batch),
        "best_fitness": max(fits),
        "median_fitness": median,
        "evaluations": evals,
        "wall_time_s": wall,
        "individuals": [ind.to_record() for ind in individuals],
    }


def _write_checkpoint(path: Path, next_generation: int,
                      population: List[Individual], hof: HallOfFame):
    state = {
        "next_generation": next_generation,
        "rng_state": {"scheme": "derived-from-seed-and-generation"},
        "population": [ind.to_record() for ind in population],
        "hall_of_fame": [ind.to_record() for ind in hof.entries],
    }
    tmp = Path(str(path) + ".partial")
    tmp.write_text(json.dumps(state, indent=1))
    os.replace(tmp, path)


def shuffled_labels_dataset(td: TaskDataset, rng: random.Random) -> TaskDataset:
    """Null-model control: the same statistics with accuracy labels shuffled
    across all records."""
    records = td.all_records()
    accs = [r.accuracy for r in records]
    rng.shuffle(accs)
    spaces: Dict[str, list] = {}
    for rec, acc in zip(records, accs):
        clone = NetworkRecord(id=rec.id, space=rec.space,
                              dataset_name=rec.dataset_name, accuracy=acc,
                              meta=rec.meta, blob_path=rec.blob_path,
                              blob_size=rec.blob_size,
                              _blocks=rec._blocks)
        spaces.setdefault(clone.space, []).append(clone)
    return TaskDataset(spaces=spaces)
