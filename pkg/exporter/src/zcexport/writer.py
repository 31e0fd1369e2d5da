"""Writer for the zcforge statistics-dataset format.

This is an independent implementation of the published on-disk contract:

  <out>/manifest.json            json: {"format": "zcforge-dataset",
                                 "version": 1, "records": [...]}
  <out>/blobs/<id>.ezt           one packed blob per record

Blob layout, all little-endian:

  magic "EZT1"
  per tensor:
      u32 name length, ASCII slot name
      u32 block index
      u32 rank, then u32 extent per axis
      float32 data, row-major

Every record entry carries id, space, dataset_name, accuracy in [0, 1],
blob path, blob byte size, num_blocks and a free-form meta object.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Dict, List

import numpy as np

MAGIC = b"EZT1"

INPUT_KINDS = ("D", "N", "P")
SLOT_ORDER = tuple(
    [f"{base}_{kind}" for base in ("T1", "T2") for kind in INPUT_KINDS]
    + ["T3"]
    + [f"T4_{kind}" for kind in INPUT_KINDS]
    + [f"{base}G_{kind}" for base in ("T1", "T2", "T3", "T4") for kind in INPUT_KINDS]
)


def write_blob(path: Path, blocks: List[Dict[str, np.ndarray]]) -> int:
    """Write one record's per-block slot->tensor maps; returns the byte size."""
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        for index, tensors in enumerate(blocks):
            missing = [s for s in SLOT_ORDER if s not in tensors]
            if missing:
                raise ValueError(f"block {index} is missing slots {missing}")
            for slot in SLOT_ORDER:
                arr = np.ascontiguousarray(tensors[slot], dtype="<f4")
                if arr.ndim > 4:
                    raise ValueError(f"{slot}: rank {arr.ndim} exceeds 4")
                name = slot.encode("ascii")
                fh.write(struct.pack("<I", len(name)))
                fh.write(name)
                fh.write(struct.pack("<I", index))
                fh.write(struct.pack("<I", arr.ndim))
                for extent in arr.shape:
                    fh.write(struct.pack("<I", extent))
                fh.write(arr.tobytes(order="C"))
    size = os.path.getsize(tmp)
    os.replace(tmp, path)
    return size


def write_dataset(records: List[dict], out_dir) -> Path:
    """records: dicts with id, space, dataset_name, accuracy, blocks, meta."""
    root = Path(out_dir)
    (root / "blobs").mkdir(parents=True, exist_ok=True)
    manifest = {"format": "zcforge-dataset", "version": 1, "records": []}
    for rec in records:
        acc = float(rec["accuracy"])
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"record {rec['id']}: accuracy {acc} outside [0, 1]")
        blob_name = f"{rec['id']}.ezt"
        size = write_blob(root / "blobs" / blob_name, rec["blocks"])
        manifest["records"].append({
            "id": rec["id"],
            "space": rec["space"],
            "dataset_name": rec["dataset_name"],
            "accuracy": acc,
            "blob": f"blobs/{blob_name}",
            "size": size,
            "num_blocks": len(rec["blocks"]),
            "meta": rec.get("meta", {}),
        })
    tmp = root / "manifest.json.partial"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, root / "manifest.json")
    return root
