"""Regenerate the bundled test fixtures.

Run from the repository root:

    python tests/make_fixtures.py

Rewrites tests/fixtures/ten_nets (a small deterministic dataset) and
freezes the baseline-proxy scores over it. The frozen scores are the
regression contract: regenerating them is only legitimate when the change
to scoring semantics is intended and reviewed.
"""

import json
from pathlib import Path

import numpy as np

from zcforge import statsgen as S
from zcforge.dataset import NetworkRecord, write_dataset
from zcforge.program import BASELINE_NAMES, baseline_proxy
from zcforge.scoring import score_network

FIXTURE_SEED = 20240917
ROOT = Path(__file__).parent / "fixtures"


def build_records():
    spaces = [
        S.SpaceSpec(name="fix-a", depth_choices=(2, 3), channel_choices=(4, 6, 8),
                    kernel_choices=(1, 3), in_hw=8),
        S.SpaceSpec(name="fix-b", depth_choices=(2, 3), channel_choices=(2, 4, 8),
                    kernel_choices=(3, 5), in_hw=8),
    ]
    records = []
    for si, spec in enumerate(spaces):
        rng = np.random.Generator(np.random.PCG64(S.derive_seed(FIXTURE_SEED, si)))
        archs = S.sample_space(spec, 5, rng)
        for ai, arch in enumerate(archs):
            seed = S.derive_seed(FIXTURE_SEED, si, ai)
            arng = np.random.Generator(np.random.PCG64(seed))
            params = S.init_params(arch, arng)
            x = arng.standard_normal((1, 3, arch.in_hw, arch.in_hw)).astype(np.float32)
            y = arng.integers(0, arch.num_classes, size=1)
            blocks = S.capture_stats(arch, params, x, y, arng)
            stat = float(np.mean([np.mean(np.abs(b.tensors["T3G_N"]))
                                  for b in blocks]))
            acc = 0.5 + 0.4 * float(np.tanh((stat - 0.006) * 300))
            records.append(NetworkRecord(
                id=f"{spec.name}-{ai:02d}", space=spec.name, dataset_name="fixture",
                accuracy=acc,
                meta={"params": S.param_count(arch), "flops": S.flop_count(arch),
                      "arch": arch.describe()},
                _blocks=blocks))
    return records


def main():
    ROOT.mkdir(parents=True, exist_ok=True)
    records = build_records()
    ds_path = ROOT / "ten_nets"
    write_dataset(records, ds_path)

    frozen = {}
    for name in BASELINE_NAMES:
        prog = baseline_proxy(name)
        frozen[name] = {rec.id: score_network(prog, rec).score.hex()
                        for rec in records}
    (ROOT / "frozen_baseline_scores.json").write_text(
        json.dumps(frozen, indent=1, sort_keys=True) + "\n")
    print(f"wrote {ds_path} and frozen scores for {len(records)} records")


if __name__ == "__main__":
    main()
