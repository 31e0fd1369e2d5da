"""Self-contained toy CNN design space with hand-written forward/backward.

Networks are stacks of ReLU-Conv2D-BatchNorm2D blocks (pattern "RCB") or
Conv2D-BatchNorm2D-ReLU blocks ("CBR") on small square inputs, closed by a
global-average-pool + linear head. Everything is plain numpy so the exact
reverse-mode gradients of every captured tensor can be checked against
finite differences.

Per block we capture the 22 statistic tensors: for RCB, T1 is the block
input (the ReLU pre-activation), T2 the ReLU output feeding the conv, T3 the
conv weight, T4 the BatchNorm output, with loss gradients for each, under
the three input kinds (D = data minibatch, N = standard-normal noise of the
same shape, P = data perturbed by scaled noise). For CBR, T1 is the block
input feeding the conv, T2 the BatchNorm output (the pre-activation) and T4
the ReLU output.

RCB networks get a ReLU between the last block and the pooling head. With
batch statistics, a gradient that is constant over a normalized axis dies
inside BatchNorm's backward; without a final rectification the pool head
feeds exactly such a constant, and every captured gradient would vanish at
initialization.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DivergenceWarning, ShapeMismatch, SpaceTooSmall
from .program import ALL_SLOTS, INPUT_KINDS

BN_EPS = 1e-5
DEFAULT_NOISE_SCALE = math.sqrt(0.01)

PATTERNS = ("RCB", "CBR")
KERNEL_CHOICES = (1, 3, 5, 7)


# --- architectures -----------------------------------------------------------

@dataclass(frozen=True)
class ToyArch:
    pattern: str
    in_hw: int
    channels: Tuple[int, ...]
    kernels: Tuple[int, ...]
    num_classes: int = 4
    in_channels: int = 3

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ShapeMismatch(f"unknown block pattern {self.pattern!r}")
        if len(self.channels) != len(self.kernels):
            raise ShapeMismatch("channels and kernels must have equal length")
        if not self.channels:
            raise ShapeMismatch("architecture needs at least one block")
        if any(k % 2 == 0 for k in self.kernels):
            raise ShapeMismatch("kernel sizes must be odd for same-padding")

    @property
    def depth(self) -> int:
        return len(self.channels)

    def describe(self) -> dict:
        return {
            "pattern": self.pattern,
            "in_hw": self.in_hw,
            "channels": list(self.channels),
            "kernels": list(self.kernels),
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
        }


def arch_from_description(desc: dict) -> ToyArch:
    return ToyArch(
        pattern=desc["pattern"],
        in_hw=int(desc["in_hw"]),
        channels=tuple(int(c) for c in desc["channels"]),
        kernels=tuple(int(k) for k in desc["kernels"]),
        num_classes=int(desc.get("num_classes", 4)),
        in_channels=int(desc.get("in_channels", 3)),
    )


def param_count(arch: ToyArch) -> int:
    """Exact parameter count: conv kernels (no bias), BatchNorm scale/shift,
    linear head weight and bias."""
    total = 0
    c_in = arch.in_channels
    for c_out, k in zip(arch.channels, arch.kernels):
        total += c_out * c_in * k * k + 2 * c_out
        c_in = c_out
    total += arch.num_classes * c_in + arch.num_classes
    return total


def flop_count(arch: ToyArch) -> int:
    """Exact multiply-add style FLOP count per input sample."""
    hw = arch.in_hw * arch.in_hw
    total = 0
    c_in = arch.in_channels
    for c_out, k in zip(arch.channels, arch.kernels):
        total += 2 * c_out * c_in * k * k * hw  # conv
        total += 4 * c_out * hw                 # batchnorm
        total += c_in * hw                      # relu on the block input
        c_in = c_out
    total += c_in * hw                          # pool
    total += 2 * arch.num_classes * c_in        # head
    return total


@dataclass(frozen=True)
class SpaceSpec:
    """A toy search space: the grid of architectures sampling draws from."""

    name: str
    depth_choices: Tuple[int, ...]
    channel_choices: Tuple[int, ...]
    kernel_choices: Tuple[int, ...]
    in_hw: int = 8
    pattern: str = "RCB"
    num_classes: int = 4

    def grid_size(self) -> int:
        per_block = len(self.channel_choices) * len(self.kernel_choices)
        return sum(per_block ** d for d in self.depth_choices)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "depth_choices": list(self.depth_choices),
            "channel_choices": list(self.channel_choices),
            "kernel_choices": list(self.kernel_choices),
            "in_hw": self.in_hw,
            "pattern": self.pattern,
            "num_classes": self.num_classes,
        }

    @staticmethod
    def from_dict(d: dict) -> "SpaceSpec":
        return SpaceSpec(
            name=d["name"],
            depth_choices=tuple(int(x) for x in d["depth_choices"]),
            channel_choices=tuple(int(x) for x in d["channel_choices"]),
            kernel_choices=tuple(int(x) for x in d["kernel_choices"]),
            in_hw=int(d.get("in_hw", 8)),
            pattern=d.get("pattern", "RCB"),
            num_classes=int(d.get("num_classes", 4)),
        )


def sample_space(spec: SpaceSpec, n: int, rng: np.random.Generator) -> List[ToyArch]:
    """n distinct architectures drawn uniformly from the spec's grid."""
    size = spec.grid_size()
    if size < n:
        raise SpaceTooSmall(f"space {spec.name!r} has {size} points, asked for {n}")
    per_block = len(spec.channel_choices) * len(spec.kernel_choices)
    weights = [per_block ** d for d in spec.depth_choices]
    total = sum(weights)

    seen = set()
    out: List[ToyArch] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 1000 * n:
            raise SpaceTooSmall(f"could not draw {n} distinct points from {spec.name!r}")
        r = int(rng.integers(0, total))
        depth = spec.depth_choices[-1]
        for d, w in zip(spec.depth_choices, weights):
            if r < w:
                depth = d
                break
            r -= w
        channels = tuple(int(rng.choice(spec.channel_choices)) for _ in range(depth))
        kernels = tuple(int(rng.choice(spec.kernel_choices)) for _ in range(depth))
        arch = ToyArch(pattern=spec.pattern, in_hw=spec.in_hw, channels=channels,
                       kernels=kernels, num_classes=spec.num_classes)
        key = (depth, channels, kernels)
        if key in seen:
            continue
        seen.add(key)
        out.append(arch)
    return out


# --- parameters ---------------------------------------------------------------

@dataclass
class ToyParams:
    conv: List[np.ndarray]
    gamma: List[np.ndarray]
    beta: List[np.ndarray]
    fc_w: np.ndarray
    fc_b: np.ndarray

    def copy(self) -> "ToyParams":
        return ToyParams(
            conv=[w.copy() for w in self.conv],
            gamma=[g.copy() for g in self.gamma],
            beta=[b.copy() for b in self.beta],
            fc_w=self.fc_w.copy(),
            fc_b=self.fc_b.copy(),
        )

    def astype(self, dtype) -> "ToyParams":
        return ToyParams(
            conv=[w.astype(dtype) for w in self.conv],
            gamma=[g.astype(dtype) for g in self.gamma],
            beta=[b.astype(dtype) for b in self.beta],
            fc_w=self.fc_w.astype(dtype),
            fc_b=self.fc_b.astype(dtype),
        )


def init_params(arch: ToyArch, rng: np.random.Generator, dtype=np.float32) -> ToyParams:
    """Kaiming-uniform conv kernels, unit-scale BatchNorm, and a fixed-range
    uniform head (the head deliberately does not shrink with fan-in, so
    initialization-time gradient magnitudes are not damped by head width)."""
    conv, gamma, beta = [], [], []
    c_in = arch.in_channels
    for c_out, k in zip(arch.channels, arch.kernels):
        fan_in = c_in * k * k
        bound = math.sqrt(6.0 / fan_in)
        conv.append(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(dtype))
        gamma.append(np.ones(c_out, dtype=dtype))
        beta.append(np.zeros(c_out, dtype=dtype))
        c_in = c_out
    fc_w = rng.uniform(-0.5, 0.5, size=(arch.num_classes, c_in)).astype(dtype)
    fc_b = np.zeros(arch.num_classes, dtype=dtype)
    return ToyParams(conv=conv, gamma=gamma, beta=beta, fc_w=fc_w, fc_b=fc_b)


# --- layers -------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(N, C, H, W) -> (N, H*W, C*k*k) patch matrix for stride-1 same-padding."""
    n, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + h, kj:kj + w]
    return cols.reshape(n, c * k * k, h * w).transpose(0, 2, 1)


def _col2im(dcols: np.ndarray, x_shape, k: int) -> np.ndarray:
    """Adjoint of _im2col."""
    n, c, h, w = x_shape
    p = k // 2
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    dcols = dcols.transpose(0, 2, 1).reshape(n, c, k, k, h, w)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + h, kj:kj + w] += dcols[:, :, ki, kj]
    if p == 0:
        return dxp
    return dxp[:, :, p:-p, p:-p]


def conv_forward(x: np.ndarray, w: np.ndarray):
    c_out, c_in, k, _ = w.shape
    if x.shape[1] != c_in:
        raise ShapeMismatch(f"conv expects {c_in} input channels, got {x.shape[1]}")
    n, _, h, wd = x.shape
    cols = _im2col(x, k)
    out = cols @ w.reshape(c_out, -1).T
    out = out.transpose(0, 2, 1).reshape(n, c_out, h, wd)
    return out, (cols, x.shape, w)


def conv_backward(dout: np.ndarray, cache):
    cols, x_shape, w = cache
    c_out, c_in, k, _ = w.shape
    n, _, h, wd = x_shape
    dflat = dout.reshape(n, c_out, h * wd).transpose(0, 2, 1)
    dw = np.tensordot(dflat, cols, axes=([0, 1], [0, 1])).reshape(w.shape)
    dcols = dflat @ w.reshape(c_out, -1)
    dx = _col2im(dcols, x_shape, k)
    return dx, dw


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    """Training-mode batch normalization over (N, H, W) per channel."""
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv_std
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma)


def batchnorm_backward(dout: np.ndarray, cache):
    xhat, inv_std, gamma = cache
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dgamma = np.sum(dout * xhat, axis=(0, 2, 3))
    dbeta = np.sum(dout, axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    mean_dxhat = dxhat.mean(axis=(0, 2, 3), keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
    dx = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dgamma, dbeta


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    eps = np.finfo(logits.dtype).tiny
    loss = -np.log(np.maximum(p[np.arange(n), labels], eps)).mean()
    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return float(loss), dlogits


# --- the full network ---------------------------------------------------------

@dataclass
class PassResult:
    loss: float
    blocks: List[Dict[str, np.ndarray]]       # t1, t2, t4, t1g, t2g, t3g, t4g
    param_grads: Optional[dict]               # conv/gamma/beta/fc_w/fc_b
    relu_pattern: np.ndarray                  # concatenated rectifier sign bits
    logits: np.ndarray


def _head_forward(x: np.ndarray, arch: ToyArch, params: ToyParams, labels,
                  use_head_relu: bool):
    masks = []
    if use_head_relu:
        masks.append(x > 0)
        h = np.maximum(x, 0)
    else:
        h = x
    g = h.mean(axis=(2, 3))
    logits = g @ params.fc_w.T + params.fc_b
    loss, dlogits = softmax_cross_entropy(logits, labels)
    return loss, logits, dlogits, g, h, masks


def forward_backward(arch: ToyArch, params: ToyParams, x: np.ndarray,
                     labels: np.ndarray, need_grads: bool = True) -> PassResult:
    """One full pass. Gradients are exact reverse-mode derivatives of the
    mean cross-entropy loss with respect to every captured tensor."""
    if x.ndim != 4 or x.shape[1] != arch.in_channels or x.shape[2] != arch.in_hw \
            or x.shape[3] != arch.in_hw:
        raise ShapeMismatch(f"input shape {x.shape} does not match architecture")
    use_head_relu = arch.pattern == "RCB"

    blocks: List[Dict[str, np.ndarray]] = []
    caches = []
    masks: List[np.ndarray] = []
    cur = x
    for i in range(arch.depth):
        w = params.conv[i]
        if arch.pattern == "RCB":
            t1 = cur
            mask = t1 > 0
            t2 = np.where(mask, t1, 0)
            z, conv_cache = conv_forward(t2, w)
            t4, bn_cache = batchnorm_forward(z, params.gamma[i], params.beta[i])
        else:  # CBR
            t1 = cur
            z, conv_cache = conv_forward(t1, w)
            t2, bn_cache = batchnorm_forward(z, params.gamma[i], params.beta[i])
            mask = t2 > 0
            t4 = np.where(mask, t2, 0)
        masks.append(mask)
        blocks.append({"t1": t1, "t2": t2, "t4": t4})
        caches.append((conv_cache, bn_cache, mask))
        cur = t4

    loss, logits, dlogits, g, h, head_masks = _head_forward(
        cur, arch, params, labels, use_head_relu)
    masks.extend(head_masks)
    pattern = np.concatenate([m.ravel() for m in masks])

    if not need_grads:
        return PassResult(loss=loss, blocks=blocks, param_grads=None,
                          relu_pattern=pattern, logits=logits)

    dfc_w = dlogits.T @ g
    dfc_b = dlogits.sum(axis=0)
    dg = dlogits @ params.fc_w
    n, c_last = g.shape
    hw = arch.in_hw * arch.in_hw
    dh = np.broadcast_to(dg[:, :, None, None] / hw,
                         (n, c_last, arch.in_hw, arch.in_hw)).astype(g.dtype)
    if use_head_relu:
        dtop = np.where(head_masks[0], dh, 0)
    else:
        dtop = dh

    grads = {"conv": [None] * arch.depth, "gamma": [None] * arch.depth,
             "beta": [None] * arch.depth, "fc_w": dfc_w, "fc_b": dfc_b}
    for i in reversed(range(arch.depth)):
        conv_cache, bn_cache, mask = caches[i]
        rec = blocks[i]
        rec["t4g"] = dtop
        if arch.pattern == "RCB":
            dz, dgamma, dbeta = batchnorm_backward(dtop, bn_cache)
            dt2, dw = conv_backward(dz, conv_cache)
            rec["t2g"] = dt2
            dt1 = np.where(mask, dt2, 0)
            rec["t1g"] = dt1
        else:  # CBR: relu then bn then conv, in reverse
            dt2 = np.where(mask, dtop, 0)
            rec["t2g"] = dt2
            dz, dgamma, dbeta = batchnorm_backward(dt2, bn_cache)
            dt1, dw = conv_backward(dz, conv_cache)
            rec["t1g"] = dt1
        rec["t3g"] = dw
        grads["conv"][i] = dw
        grads["gamma"][i] = dgamma
        grads["beta"][i] = dbeta
        dtop = dt1

    return PassResult(loss=loss, blocks=blocks, param_grads=grads,
                      relu_pattern=pattern, logits=logits)


def partial_loss(arch: ToyArch, params: ToyParams, labels: np.ndarray,
                 start_block: int, start_point: str, value: np.ndarray):
    """Loss of the network run from an interior point.

    ``start_point`` is one of "t1" (block input), "t2" (conv input for RCB /
    BatchNorm output for CBR) or "t4" (block output); ``value`` replaces the
    tensor at that point. Returns (loss, rectifier sign pattern) so finite
    difference stencils can detect kink crossings.
    """
    use_head_relu = arch.pattern == "RCB"
    masks: List[np.ndarray] = []
    cur = value
    point = start_point
    for i in range(start_block, arch.depth):
        w = params.conv[i]
        if arch.pattern == "RCB":
            if point == "t1":
                mask = cur > 0
                masks.append(mask)
                cur = np.where(mask, cur, 0)
                point = "t2"
            if point == "t2":
                cur, _ = conv_forward(cur, w)
                cur, _ = batchnorm_forward(cur, params.gamma[i], params.beta[i])
                point = "t4"
        else:
            if point == "t1":
                cur, _ = conv_forward(cur, w)
                cur, _ = batchnorm_forward(cur, params.gamma[i], params.beta[i])
                point = "t2"
            if point == "t2":
                mask = cur > 0
                masks.append(mask)
                cur = np.where(mask, cur, 0)
                point = "t4"
        point = "t1"  # the next block consumes this block's output
    loss, _, _, _, _, head_masks = _head_forward(cur, arch, params, labels,
                                                 use_head_relu)
    masks.extend(head_masks)
    if masks:
        pattern = np.concatenate([m.ravel() for m in masks])
    else:
        pattern = np.zeros(0, dtype=bool)
    return loss, pattern


# --- statistics capture -------------------------------------------------------

@dataclass
class BlockStats:
    """The 22 named statistic tensors captured from one block."""

    block_index: int
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def slots(self) -> Dict[str, np.ndarray]:
        return self.tensors

    def validate(self):
        missing = [s for s in ALL_SLOTS if s not in self.tensors]
        if missing:
            raise ShapeMismatch(f"block {self.block_index} missing slots {missing}")


def capture_stats(arch: ToyArch, params: ToyParams, data_batch: np.ndarray,
                  labels: np.ndarray, rng: np.random.Generator,
                  noise_scale: float = DEFAULT_NOISE_SCALE,
                  dtype=np.float32) -> List[BlockStats]:
    """Run the three capture passes (D, N, P) at the same parameters and
    assemble the 22 tensors per block.

    The noise pass scores the network on a standard-normal input; its loss
    target reuses the data labels so the backward pass stays defined. The
    perturbed pass adds ``noise_scale`` times standard-normal noise to the
    data batch.
    """
    x_d = data_batch.astype(dtype)
    x_n = rng.standard_normal(size=data_batch.shape).astype(dtype)
    x_p = (x_d + dtype(noise_scale)
           * rng.standard_normal(size=data_batch.shape).astype(dtype))

    stats = [BlockStats(block_index=i) for i in range(arch.depth)]
    for i in range(arch.depth):
        stats[i].tensors["T3"] = params.conv[i].astype(np.float32)
    for kind, x in zip(INPUT_KINDS, (x_d, x_n, x_p)):
        result = forward_backward(arch, params, x, labels)
        for i, rec in enumerate(result.blocks):
            t = stats[i].tensors
            t[f"T1_{kind}"] = rec["t1"].astype(np.float32)
            t[f"T2_{kind}"] = rec["t2"].astype(np.float32)
            t[f"T4_{kind}"] = rec["t4"].astype(np.float32)
            t[f"T1G_{kind}"] = rec["t1g"].astype(np.float32)
            t[f"T2G_{kind}"] = rec["t2g"].astype(np.float32)
            t[f"T3G_{kind}"] = rec["t3g"].astype(np.float32)
            t[f"T4G_{kind}"] = rec["t4g"].astype(np.float32)
    for s in stats:
        s.validate()
    return stats


# --- synthetic classification task and training --------------------------------

@dataclass(frozen=True)
class TaskConfig:
    train_size: int = 256
    test_size: int = 128
    noise: float = 1.5
    template_seed: int = 7


def synth_classification_data(arch: ToyArch, cfg: TaskConfig,
                              rng: np.random.Generator):
    """Patterned-image classification task: each class is a fixed random
    template plus per-sample Gaussian noise. Templates depend only on the
    template seed and the input geometry, so every network in a space sees
    the same task."""
    t_rng = np.random.Generator(np.random.PCG64(cfg.template_seed))
    shape = (arch.num_classes, arch.in_channels, arch.in_hw, arch.in_hw)
    templates = t_rng.standard_normal(shape).astype(np.float32)

    def draw(n):
        y = rng.integers(0, arch.num_classes, size=n)
        x = templates[y] + cfg.noise * rng.standard_normal(
            (n,) + shape[1:]).astype(np.float32)
        return x.astype(np.float32), y.astype(np.int64)

    x_train, y_train = draw(cfg.train_size)
    x_test, y_test = draw(cfg.test_size)
    return x_train, y_train, x_test, y_test


def _predict_accuracy(arch, params, x, y, batch: int = 128) -> float:
    hits = 0
    for i in range(0, len(x), batch):
        xb, yb = x[i:i + batch], y[i:i + batch]
        result = forward_backward(arch, params, xb, yb, need_grads=False)
        hits += int((result.logits.argmax(axis=1) == yb).sum())
    return hits / len(x)


def train_and_label(arch: ToyArch, params: ToyParams, data, epochs: int,
                    lr: float, rng: np.random.Generator,
                    batch_size: int = 32) -> float:
    """Plain SGD on a copy of the parameters; returns held-out accuracy.

    A non-finite loss raises DivergenceWarning and labels the network at
    chance level."""
    x_train, y_train, x_test, y_test = data
    p = params.copy()
    for _ in range(epochs):
        order = rng.permutation(len(x_train))
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            result = forward_backward(arch, p, x_train[idx], y_train[idx])
            if not math.isfinite(result.loss):
                warnings.warn("training loss diverged; labelling at chance",
                              DivergenceWarning)
                return 1.0 / arch.num_classes
            g = result.param_grads
            for j in range(arch.depth):
                p.conv[j] -= lr * g["conv"][j]
                p.gamma[j] -= lr * g["gamma"][j]
                p.beta[j] -= lr * g["beta"][j]
            p.fc_w -= lr * g["fc_w"]
            p.fc_b -= lr * g["fc_b"]
    return _predict_accuracy(arch, p, x_test, y_test)


def derive_seed(master_seed: int, *indices: int) -> int:
    """Stable per-network seed stream so a parallel map over architectures
    produces the same outputs as a serial one."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(indices))
    return int(seq.generate_state(1, np.uint64)[0])
