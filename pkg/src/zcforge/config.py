"""Run configuration: one JSON file drives every CLI command.

The resolved configuration (defaults merged in) and the master seed are
embedded into every run log, and identical config + seed reproduces a run
byte-for-byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List

from .errors import ConfigError
from .evolve import EvolutionConfig
from .program import ALL_SLOTS, TO_SCALAR_CHOICES
from .search import SweepSpec
from .statsgen import DEFAULT_NOISE_SCALE, PATTERNS, SpaceSpec

REQUIRED_KEYS = ("seed",)

DEFAULTS = {
    "to_scalar": "mean",
    "dataset_name": "toy-synth",
    "workers": 0,
    "evolution": {
        "population_size": 50,
        "generations": 15,
        "tournament_size": 4,
        "crossover_prob": 0.4,
        "mutation_prob": 0.4,
        "spaces_per_eval": 4,
        "nets_per_space": 20,
        "min_depth": 2,
        "max_depth": 10,
        "selection_mode": "algorithm1",
        "mu": 25,
        "hall_of_fame_size": 3,
        "probe_blocks": 8,
    },
    "statsgen": {
        "batch_size": 1,
        "noise_scale": DEFAULT_NOISE_SCALE,
        "precision": "f32",  # f64 for gradient-audit captures
    },
    "pool_per_space": 80,
    "test_pool_per_space": 0,
    "labeling": {
        "mode": "train",          # or "planted"
        "epochs": 3,
        "lr": 0.05,
        "batch_size": 32,
        "train_size": 256,
        "test_size": 128,
        "noise": 1.5,
        "planted_slot": "T3G_N",  # accuracy = increasing f(mean over blocks of mean|slot|)
    },
    "sweep": {
        "channels": [4, 8, 16, 32],
        "kernels": [3],
        "depths": [3, 4, 5],
        "hws": [8],
        "pattern": "RCB",
        "batch_size": 1,
        "repeats": 5000,
    },
    "nas": {
        "budget": 200,
        "pop": 20,
        "sample": 5,
        "accuracy": "params",     # or "train"
        "space": None,            # space name; default: first configured space
    },
}


def _merge(defaults, value, path):
    if isinstance(defaults, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"config key {path} must be an object")
        out = dict(defaults)
        for k, v in value.items():
            if k in defaults:
                out[k] = _merge(defaults[k], v, f"{path}.{k}" if path else k)
            else:
                out[k] = v
        return out
    return value


@dataclass
class RunConfig:
    raw: dict

    @staticmethod
    def from_file(path) -> "RunConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        return RunConfig.from_dict(data)

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        for key in REQUIRED_KEYS:
            if key not in data:
                raise ConfigError(f"config is missing required key {key!r}")
        merged = _merge(DEFAULTS, {k: v for k, v in data.items()}, "")
        merged["seed"] = int(data["seed"])
        cfg = RunConfig(raw=merged)
        cfg.validate()
        return cfg

    def validate(self):
        if self.raw["to_scalar"] not in TO_SCALAR_CHOICES:
            raise ConfigError(f"to_scalar must be one of {TO_SCALAR_CHOICES}")
        if self.raw["statsgen"]["precision"] not in ("f32", "f64"):
            raise ConfigError("statsgen.precision must be 'f32' or 'f64'")
        lab = self.raw["labeling"]
        if lab["mode"] not in ("train", "planted"):
            raise ConfigError("labeling.mode must be 'train' or 'planted'")
        if lab["planted_slot"] not in ALL_SLOTS:
            raise ConfigError(f"labeling.planted_slot {lab['planted_slot']!r} "
                              f"is not a statistic slot")
        for spec in self.raw.get("spaces", []):
            if spec.get("pattern", "RCB") not in PATTERNS:
                raise ConfigError(f"space {spec.get('name')}: bad pattern")

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def spaces(self) -> List[SpaceSpec]:
        specs = self.raw.get("spaces")
        if not specs:
            raise ConfigError("config is missing required key 'spaces'")
        return [SpaceSpec.from_dict(d) for d in specs]

    def evolution_config(self) -> EvolutionConfig:
        ev = self.raw["evolution"]
        return EvolutionConfig(seed=self.seed,
                               to_scalar=self.raw["to_scalar"],
                               workers=self.raw["workers"],
                               **{k: ev[k] for k in DEFAULTS["evolution"]})

    def sweep_spec(self) -> SweepSpec:
        sw = self.raw["sweep"]
        return SweepSpec(channels=tuple(sw["channels"]),
                         kernels=tuple(sw["kernels"]),
                         depths=tuple(sw["depths"]),
                         hws=tuple(sw["hws"]),
                         pattern=sw["pattern"],
                         batch_size=sw["batch_size"])

    def nas_space(self) -> SpaceSpec:
        wanted = self.raw["nas"]["space"]
        specs = self.spaces()
        if wanted is None:
            return specs[0]
        for s in specs:
            if s.name == wanted:
                return s
        raise ConfigError(f"nas.space {wanted!r} is not a configured space")

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=1, sort_keys=True)
