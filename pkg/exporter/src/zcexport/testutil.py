"""Round-trip helper shared with the consuming framework's acceptance suite."""

from __future__ import annotations

import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .capture import capture_model
from .export import ExportJob, export


def toy_model(channels=(4, 6), kernels=None, num_classes=4, seed=0):
    torch.manual_seed(seed)
    if kernels is None:
        kernels = (3,) * len(channels)
    assert len(kernels) == len(channels)
    layers = []
    c_in = 3
    for c, k in zip(channels, kernels):
        layers += [nn.ReLU(), nn.Conv2d(c_in, c, k, padding=k // 2, bias=False),
                   nn.BatchNorm2d(c)]
        c_in = c
    layers += [nn.ReLU(), nn.AdaptiveAvgPool2d(1), nn.Flatten(),
               nn.Linear(c_in, num_classes)]
    return nn.Sequential(*layers)


def round_trip_check(tmp_dir=None):
    """Export one toy torch model, re-read it with the consuming framework,
    compare tensors bitwise and run its validate-data command.

    Returns (ok, detail)."""
    try:
        from zcforge.dataset import read_dataset
    except ImportError:
        return False, "zcforge is not importable; round trip impossible"

    tmp = Path(tmp_dir) if tmp_dir else Path(tempfile.mkdtemp(prefix="zcexport-"))
    model = toy_model()
    gen = torch.Generator().manual_seed(99)
    batch = torch.randn(1, 3, 8, 8, generator=gen)

    captured = capture_model(model, batch, pattern="RCB", seed=5)
    job = ExportJob(models=[("toy-0", model)], labels={"toy-0": 0.75},
                    out_dir=tmp / "ds", data_batch=batch, seed=5)
    export(job)

    td = read_dataset(tmp / "ds")
    (record,) = td.all_records()
    if record.accuracy != 0.75:
        return False, "label did not round-trip"
    blocks = record.blocks
    if len(blocks) != len(captured):
        return False, f"{len(blocks)} blocks read back, captured {len(captured)}"
    mismatched = []
    for got, want in zip(blocks, captured):
        for slot, arr in want.items():
            if not np.array_equal(got.tensors[slot], arr):
                mismatched.append((got.block_index, slot))
    if mismatched:
        return False, f"tensors not bitwise equal: {mismatched[:4]}"

    proc = subprocess.run([sys.executable, "-m", "zcforge.cli",
                           "validate-data", str(tmp / "ds")],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        return False, f"validate-data failed: {proc.stderr.strip()}"
    return True, (f"exported toy model round-trips bitwise "
                  f"({len(blocks)} blocks x 22 tensors) and passes validate-data")
