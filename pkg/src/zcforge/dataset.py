"""On-disk statistics datasets and the fitness-batch samplers.

Layout: a dataset directory holds ``manifest.json`` plus one packed blob per
network record under ``blobs/``. The manifest is the single source of truth
for ids, spaces, accuracy labels and metadata; blobs carry only tensors.

Blob format (all integers unsigned 32-bit little-endian, floats IEEE-754
binary32 little-endian, row-major):

    magic "EZT1"
    per tensor:
        name_len, name (ASCII, a statistic slot name)
        block_index
        rank, extent[0..rank)
        data[product(extents)]

Reading a record streams exactly one blob; nothing else is held in memory
unless the caller opts into ``preload``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import (FormatError, InsufficientRecords, InsufficientSpaces,
                     ManifestMismatch)
from .program import ALL_SLOTS
from .statsgen import BlockStats

MAGIC = b"EZT1"
MANIFEST_NAME = "manifest.json"
BLOB_DIR = "blobs"
MAX_TENSOR_RANK = 4


def write_blob(path: Path, blocks: List[BlockStats]) -> int:
    """Serialize one record's blocks; returns the byte size written."""
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        for block in blocks:
            for slot in ALL_SLOTS:
                arr = np.ascontiguousarray(block.tensors[slot], dtype="<f4")
                name = slot.encode("ascii")
                fh.write(struct.pack("<I", len(name)))
                fh.write(name)
                fh.write(struct.pack("<I", block.block_index))
                fh.write(struct.pack("<I", arr.ndim))
                for extent in arr.shape:
                    fh.write(struct.pack("<I", extent))
                fh.write(arr.tobytes(order="C"))
    size = os.path.getsize(tmp)
    os.replace(tmp, path)
    return size


def _read_exact(fh, n: int, what: str):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated blob while reading {what} at offset "
                          f"{fh.tell() - len(data)}")
    return data


def read_blob(path: Path) -> List[BlockStats]:
    """Parse one blob back into per-block statistics."""
    blocks: Dict[int, BlockStats] = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} in {path} at offset 0")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise FormatError(f"truncated blob at offset {fh.tell() - len(head)}")
            (name_len,) = struct.unpack("<I", head)
            if name_len == 0 or name_len > 16:
                raise FormatError(f"implausible name length {name_len} at offset "
                                  f"{fh.tell() - 4}")
            name = _read_exact(fh, name_len, "slot name").decode("ascii")
            if name not in ALL_SLOTS:
                raise FormatError(f"unknown slot {name!r} at offset "
                                  f"{fh.tell() - name_len}")
            (block_index,) = struct.unpack("<I", _read_exact(fh, 4, "block index"))
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            if rank > MAX_TENSOR_RANK:
                raise FormatError(f"rank {rank} exceeds {MAX_TENSOR_RANK} at offset "
                                  f"{fh.tell() - 4}")
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4, "extent"))[0]
                          for _ in range(rank))
            count = 1
            for e in shape:
                count *= e
            raw = _read_exact(fh, 4 * count, f"tensor {name} data")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(
                np.float32, copy=True)
            block = blocks.setdefault(block_index, BlockStats(block_index=block_index))
            if name in block.tensors:
                raise FormatError(f"duplicate slot {name} for block {block_index}")
            block.tensors[name] = arr
    out = [blocks[i] for i in sorted(blocks)]
    for b in out:
        b.validate()
    return out


@dataclass
class NetworkRecord:
    """One architecture: metadata plus its per-block statistics.

    Statistics load lazily from the blob on every access unless the record
    was built in memory or explicitly preloaded."""

    id: str
    space: str
    dataset_name: str
    accuracy: float
    meta: dict = field(default_factory=dict)
    blob_path: Optional[Path] = None
    blob_size: Optional[int] = None
    _blocks: Optional[List[BlockStats]] = None

    @property
    def blocks(self) -> List[BlockStats]:
        if self._blocks is not None:
            return self._blocks
        if self.blob_path is None:
            raise ManifestMismatch(f"record {self.id} has neither blocks nor a blob")
        if self.blob_size is not None:
            actual = os.path.getsize(self.blob_path)
            if actual != self.blob_size:
                raise ManifestMismatch(
                    f"record {self.id}: blob is {actual} bytes, manifest says "
                    f"{self.blob_size}")
        return read_blob(self.blob_path)

    def preload(self):
        if self._blocks is None:
            self._blocks = self.blocks
        return self


@dataclass
class TaskDataset:
    """Per-space pools of labeled records."""

    spaces: Dict[str, List[NetworkRecord]]

    @property
    def space_names(self) -> List[str]:
        return sorted(self.spaces)

    def all_records(self) -> List[NetworkRecord]:
        return [r for name in self.space_names for r in self.spaces[name]]

    def record_ids(self) -> set:
        return {r.id for r in self.all_records()}

    def preload(self) -> "TaskDataset":
        for rec in self.all_records():
            rec.preload()
        return self


def write_dataset(records: List[NetworkRecord], path) -> Path:
    """Write manifest + blobs. Records must carry in-memory blocks or an
    existing readable blob."""
    root = Path(path)
    blob_root = root / BLOB_DIR
    blob_root.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "zcforge-dataset", "version": 1, "records": []}
    seen = set()
    for rec in records:
        if rec.id in seen:
            raise ManifestMismatch(f"duplicate record id {rec.id}")
        seen.add(rec.id)
        if not 0.0 <= rec.accuracy <= 1.0:
            raise ManifestMismatch(f"record {rec.id}: accuracy {rec.accuracy} "
                                   f"outside [0, 1]")
        blocks = rec.blocks
        if not blocks:
            raise ManifestMismatch(f"record {rec.id} has no blocks")
        blob_name = f"{rec.id}.ezt"
        size = write_blob(blob_root / blob_name, blocks)
        manifest["records"].append({
            "id": rec.id,
            "space": rec.space,
            "dataset_name": rec.dataset_name,
            "accuracy": rec.accuracy,
            "blob": f"{BLOB_DIR}/{blob_name}",
            "size": size,
            "num_blocks": len(blocks),
            "meta": rec.meta,
        })
    tmp = root / (MANIFEST_NAME + ".partial")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, root / MANIFEST_NAME)
    return root


def read_dataset(path, preload: bool = False) -> TaskDataset:
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise FormatError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable manifest: {exc}") from exc
    if manifest.get("format") != "zcforge-dataset":
        raise FormatError(f"not a zcforge dataset: {manifest.get('format')!r}")
    spaces: Dict[str, List[NetworkRecord]] = {}
    seen = set()
    for entry in manifest.get("records", []):
        rid = entry["id"]
        if rid in seen:
            raise ManifestMismatch(f"duplicate record id {rid}")
        seen.add(rid)
        accuracy = float(entry["accuracy"])
        if not 0.0 <= accuracy <= 1.0:
            raise ManifestMismatch(f"record {rid}: accuracy {accuracy} outside [0, 1]")
        blob_path = root / entry["blob"]
        if not blob_path.exists():
            raise ManifestMismatch(f"record {rid}: blob {entry['blob']} missing")
        rec = NetworkRecord(
            id=rid,
            space=entry["space"],
            dataset_name=entry.get("dataset_name", ""),
            accuracy=accuracy,
            meta=entry.get("meta", {}),
            blob_path=blob_path,
            blob_size=int(entry["size"]) if "size" in entry else None,
        )
        spaces.setdefault(rec.space, []).append(rec)
    td = TaskDataset(spaces=spaces)
    if preload:
        td.preload()
    return td


def validate_dataset(path) -> dict:
    """Full integrity scan; raises on the first problem, returns a summary."""
    td = read_dataset(path)
    n_records = 0
    n_blocks = 0
    for rec in td.all_records():
        blocks = rec.blocks  # parses the blob, checks size and slots
        entry_blocks = len(blocks)
        n_records += 1
        n_blocks += entry_blocks
    return {"records": n_records, "spaces": len(td.spaces), "blocks": n_blocks}


def sample_fitness_batch(td: TaskDataset, s: int, k: int,
                         rng) -> Dict[str, List[NetworkRecord]]:
    """s distinct spaces, k records sampled without replacement from each."""
    names = td.space_names
    if s > len(names):
        raise InsufficientSpaces(f"asked for {s} spaces, dataset has {len(names)}")
    chosen = sorted(rng.sample(names, s))
    out = {}
    for name in chosen:
        pool = td.spaces[name]
        if k > len(pool):
            raise InsufficientRecords(
                f"space {name!r} has {len(pool)} records, asked for {k}")
        out[name] = rng.sample(pool, k)
    return out
