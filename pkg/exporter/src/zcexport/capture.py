"""Hook-based capture of per-block statistics from torch models.

Walks one forward pass to find every ReLU-Conv2d-BatchNorm2d instance (or
Conv2d-BatchNorm2d-ReLU in CBR mode) by actual data flow, applying the
truncation rule for ReLU-Conv-Conv-BN chains: the second convolution is
ignored and the block keeps the first conv's weights. Then runs one
forward/backward per input kind (D: the provided batch, N: standard normal,
P: the batch plus scaled noise) at initialization and collects, per block,
the 22 tensors: block input, rectified/normalized interior tensor, conv
weight, block output, and the loss gradients of each.

BatchNorm runs in training mode (batch statistics), mirroring how the
consuming framework captures its own statistics. In-place ReLUs are
switched off for the duration of the capture; they would otherwise destroy
the pre-activation values the capture needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

DEFAULT_NOISE_SCALE = 0.01 ** 0.5
INPUT_KINDS = ("D", "N", "P")

_TRACKED = (nn.ReLU, nn.Conv2d, nn.BatchNorm2d)


class PatternNotFound(UserWarning):
    """The model contains no instance of the requested block pattern."""


class LabelMissing(UserWarning):
    """No accuracy label was supplied for a model id."""


@dataclass
class _Call:
    index: int
    module: nn.Module
    inp: torch.Tensor
    out: torch.Tensor


@dataclass
class BlockInstance:
    """One matched pattern instance, as references into the call trace.

    For RCB: t1 is the ReLU input, t2 the ReLU output (the conv input), t4
    the BatchNorm output. For CBR: t1 is the conv input, t2 the BatchNorm
    output, t4 the ReLU output."""

    conv: nn.Conv2d
    t1_of: Tuple[int, str]  # (call index, "inp" | "out")
    t2_of: Tuple[int, str]
    t4_of: Tuple[int, str]
    truncated: bool = False


def _traced_forward(model: nn.Module, x: torch.Tensor):
    """One forward pass recording every tracked module call in order.
    Returns (calls, model output) inside the same autograd graph."""
    calls: List[_Call] = []
    handles = []

    def hook(module, inputs, output):
        calls.append(_Call(index=len(calls), module=module,
                           inp=inputs[0], out=output))

    for m in model.modules():
        if isinstance(m, _TRACKED):
            handles.append(m.register_forward_hook(hook))
    try:
        output = model(x)
    finally:
        for h in handles:
            h.remove()
    return calls, output


def _producer_map(calls: Sequence[_Call]) -> Dict[int, _Call]:
    return {id(c.out): c for c in calls}


def match_instances(calls: Sequence[_Call], pattern: str) -> List[BlockInstance]:
    produced = _producer_map(calls)
    instances: List[BlockInstance] = []
    if pattern == "RCB":
        for call in calls:
            if not isinstance(call.module, nn.BatchNorm2d):
                continue
            conv_call = produced.get(id(call.inp))
            if conv_call is None or not isinstance(conv_call.module, nn.Conv2d):
                continue
            prev = produced.get(id(conv_call.inp))
            truncated = False
            if prev is not None and isinstance(prev.module, nn.Conv2d):
                # ReLU-Conv-Conv-BN: ignore this (second) conv, keep the first
                conv_call = prev
                prev = produced.get(id(conv_call.inp))
                truncated = True
            if prev is None or not isinstance(prev.module, nn.ReLU):
                continue
            instances.append(BlockInstance(
                conv=conv_call.module,
                t1_of=(prev.index, "inp"),
                t2_of=(prev.index, "out"),
                t4_of=(call.index, "out"),
                truncated=truncated))
    elif pattern == "CBR":
        for call in calls:
            if not isinstance(call.module, nn.ReLU):
                continue
            bn_call = produced.get(id(call.inp))
            if bn_call is None or not isinstance(bn_call.module, nn.BatchNorm2d):
                continue
            conv_call = produced.get(id(bn_call.inp))
            if conv_call is None or not isinstance(conv_call.module, nn.Conv2d):
                continue
            truncated = False
            prev = produced.get(id(conv_call.inp))
            if prev is not None and isinstance(prev.module, nn.Conv2d):
                conv_call = prev
                truncated = True
            instances.append(BlockInstance(
                conv=conv_call.module,
                t1_of=(conv_call.index, "inp"),
                t2_of=(bn_call.index, "out"),
                t4_of=(call.index, "out"),
                truncated=truncated))
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return instances


def _f32(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().to(torch.float32).numpy().copy()


def _grad_f32(t: torch.Tensor, what: str) -> np.ndarray:
    if t.grad is None:
        raise RuntimeError(f"no gradient reached {what}; is the tensor on the "
                           f"path to the loss?")
    return _f32(t.grad)


def capture_model(model: nn.Module, data_batch: torch.Tensor,
                  labels: Optional[torch.Tensor] = None, pattern: str = "RCB",
                  noise_scale: float = DEFAULT_NOISE_SCALE,
                  seed: int = 0) -> List[Dict[str, np.ndarray]]:
    """The 22 statistic tensors per matched block, as float32 arrays.

    Raises PatternNotFound when the model holds no matching instance;
    callers that iterate over many models downgrade it to a warning."""
    gen = torch.Generator().manual_seed(seed)
    model = model.train()
    flipped = []
    for m in model.modules():
        if isinstance(m, nn.ReLU) and getattr(m, "inplace", False):
            m.inplace = False
            flipped.append(m)

    try:
        with torch.no_grad():
            ref_calls, ref_out = _traced_forward(model, data_batch)
        instances = match_instances(ref_calls, pattern)
        if not instances:
            raise PatternNotFound(f"model has no {pattern} instance")

        if labels is None:
            labels = torch.randint(0, ref_out.shape[-1], (data_batch.shape[0],),
                                   generator=gen)

        x_n = torch.randn(data_batch.shape, generator=gen,
                          dtype=data_batch.dtype)
        x_p = data_batch + noise_scale * torch.randn(
            data_batch.shape, generator=gen, dtype=data_batch.dtype)

        blocks: List[Dict[str, np.ndarray]] = [
            {"T3": _f32(inst.conv.weight)} for inst in instances]

        for kind, x in zip(INPUT_KINDS, (data_batch, x_n, x_p)):
            model.zero_grad(set_to_none=True)
            x = x.clone().requires_grad_(True)
            calls, output = _traced_forward(model, x)
            if [type(c.module) for c in calls] != \
                    [type(c.module) for c in ref_calls]:
                raise RuntimeError("module call sequence changed between passes")
            for c in calls:
                if c.inp.requires_grad:
                    c.inp.retain_grad()
                if c.out.requires_grad:
                    c.out.retain_grad()
            loss = torch.nn.functional.cross_entropy(output, labels)
            loss.backward()

            def pick(ref: Tuple[int, str]) -> torch.Tensor:
                call = calls[ref[0]]
                return call.inp if ref[1] == "inp" else call.out

            for bi, inst in enumerate(instances):
                t1, t2, t4 = pick(inst.t1_of), pick(inst.t2_of), pick(inst.t4_of)
                rec = blocks[bi]
                rec[f"T1_{kind}"] = _f32(t1)
                rec[f"T2_{kind}"] = _f32(t2)
                rec[f"T4_{kind}"] = _f32(t4)
                rec[f"T1G_{kind}"] = _grad_f32(t1, "block input")
                rec[f"T2G_{kind}"] = _grad_f32(t2, "interior tensor")
                rec[f"T4G_{kind}"] = _grad_f32(t4, "block output")
                rec[f"T3G_{kind}"] = _grad_f32(inst.conv.weight, "conv weight")
        return blocks
    finally:
        for m in flipped:
            m.inplace = True
