"""Export jobs: capture statistics from a list of models and write them as
a zcforge statistics dataset with accuracy labels from a CSV file."""

from __future__ import annotations

import csv
import runpy
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import torch
from torch import nn

from .capture import (DEFAULT_NOISE_SCALE, LabelMissing, PatternNotFound,
                      capture_model)
from .writer import write_dataset


@dataclass
class ExportJob:
    models: Sequence[Tuple[str, nn.Module]]
    labels: Dict[str, float]
    out_dir: Path
    dataset_name: str = "exported"
    space: str = "exported"
    pattern: str = "RCB"
    batch_size: int = 1
    noise_scale: float = DEFAULT_NOISE_SCALE
    input_channels: int = 3
    input_hw: int = 8
    seed: int = 0
    data_batch: Optional[torch.Tensor] = None  # default: seeded standard normal


def load_models_file(path) -> List[Tuple[str, nn.Module]]:
    """Run a python file that defines build_models() -> [(id, module), ...]."""
    ns = runpy.run_path(str(path))
    if "build_models" not in ns:
        raise ValueError(f"{path} does not define build_models()")
    models = list(ns["build_models"]())
    for mid, model in models:
        if not isinstance(model, nn.Module):
            raise ValueError(f"model {mid!r} is not a torch module")
    return models


def load_labels_csv(path) -> Dict[str, float]:
    """CSV with header id,accuracy (extra columns ignored)."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["id"]] = float(row["accuracy"])
    return out


def export(job: ExportJob) -> Path:
    """Capture every labelled model and write the dataset directory.

    Models without a matching block pattern or without a label are skipped
    with a warning; at least one record must survive."""
    if job.data_batch is not None:
        batch = job.data_batch
    else:
        gen = torch.Generator().manual_seed(job.seed)
        batch = torch.randn(job.batch_size, job.input_channels, job.input_hw,
                            job.input_hw, generator=gen)
    records = []
    for i, (model_id, model) in enumerate(job.models):
        if model_id not in job.labels:
            warnings.warn(f"model {model_id!r}: no accuracy label, skipped",
                          LabelMissing)
            continue
        try:
            blocks = capture_model(model, batch, pattern=job.pattern,
                                   noise_scale=job.noise_scale,
                                   seed=job.seed + i)
        except PatternNotFound as exc:
            warnings.warn(f"model {model_id!r}: {exc}, skipped", PatternNotFound)
            continue
        records.append({
            "id": model_id,
            "space": job.space,
            "dataset_name": job.dataset_name,
            "accuracy": job.labels[model_id],
            "blocks": blocks,
            "meta": {
                "params": sum(p.numel() for p in model.parameters()),
                "arch": type(model).__name__,
                "truncation_applied": False,
            },
        })
    if not records:
        raise PatternNotFound("no model produced a record")
    return write_dataset(records, job.out_dir)
