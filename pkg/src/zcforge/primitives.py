"""The catalog of 34 primitive tensor operations (ids 0-33).

Each primitive is a pure function from one or two float32 tensors to a
float32 tensor. Ids and names are stable: they appear in serialized
programs. Boolean-flavoured ops return float tensors in {0, 1} so they
compose with arithmetic without a type system; scalar-producing ops return
rank-0 tensors, which broadcast against anything.

Sanitization is per-op and explicit (log's input clamp, normalize's and
logdet's NaN-to-0). Everything else propagates NaN/inf or raises, and any
internal failure -- shape violation, eigen non-convergence, oversized
output -- surfaces as ExecutionFailure, which callers treat exactly like a
non-finite program output.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .errors import ExecutionFailure

_F32 = np.float32
_COSINE_EPS = 1e-8


@dataclass(frozen=True)
class Primitive:
    id: int
    name: str
    arity: int
    fn: Callable


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=_F32)


def _scalar(value) -> np.ndarray:
    return np.asarray(value, dtype=_F32).reshape(())


def _nan_mask_binary(a, b, result):
    """Comparison outputs propagate NaN instead of silently encoding it as 0."""
    bad = np.isnan(a) | np.isnan(b)
    if bad.any():
        result = np.where(bad, _F32(np.nan), result)
    return _f32(result)


def _op_add(a, b):
    return T.broadcast_binary(a, b, np.add)


def _op_sub(a, b):
    return T.broadcast_binary(a, b, np.subtract)


def _op_mul(a, b):
    return T.broadcast_binary(a, b, np.multiply)


def _op_matmul(a, b):
    return T.matmul(a, b)


def _op_lt(a, b):
    r = T.broadcast_binary(a, b, lambda x, y: np.less(x, y).astype(_F32))
    return _nan_mask_binary(np.broadcast_to(a, r.shape), np.broadcast_to(b, r.shape), r)


def _op_gt(a, b):
    r = T.broadcast_binary(a, b, lambda x, y: np.greater(x, y).astype(_F32))
    return _nan_mask_binary(np.broadcast_to(a, r.shape), np.broadcast_to(b, r.shape), r)


def _op_eq(a, b):
    r = T.broadcast_binary(a, b, lambda x, y: np.equal(x, y).astype(_F32))
    return _nan_mask_binary(np.broadcast_to(a, r.shape), np.broadcast_to(b, r.shape), r)


def _op_log(a):
    # table rule: A[A<=0] = 1 before the log
    clamped = np.where(a <= 0, _F32(1.0), a)
    with np.errstate(all="ignore"):
        return _f32(np.log(clamped))


def _op_abslog(a):
    # table rule: A[A==0] = 1, then log|A|
    clamped = np.where(a == 0, _F32(1.0), a)
    with np.errstate(all="ignore"):
        return _f32(np.log(np.abs(clamped)))


def _op_abs(a):
    return _f32(np.abs(a))


def _op_square(a):
    with np.errstate(all="ignore"):
        return _f32(np.square(a))


def _op_exp(a):
    with np.errstate(all="ignore"):
        return _f32(np.exp(a))


def _op_normalize(a):
    # unbiased sample std over all elements; a 1-element tensor gives NaN
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.mean(a, dtype=_F32)
        std = np.std(a, ddof=1, dtype=_F32)
        out = (a - mean) / std
    return _f32(np.where(np.isnan(out), _F32(0.0), out))


def _op_relu(a):
    return _f32(np.maximum(a, _F32(0.0)))


def _op_sign(a):
    return _f32(np.sign(a))


def _op_heaviside(a):
    with np.errstate(all="ignore"):
        return _f32(np.heaviside(a, _F32(0.0)))


def _op_reciprocal(a):
    with np.errstate(all="ignore"):
        return _f32(_F32(1.0) / a)


def _op_frobenius_norm(a):
    with np.errstate(all="ignore"):
        return _scalar(np.sqrt(np.sum(np.square(a), dtype=_F32)))


def _op_det(a):
    return _scalar(T.determinant(a))


def _op_logdet(a):
    return _scalar(T.log_determinant(a))


def _reshape_rows(a) -> np.ndarray:
    if a.ndim == 0:
        raise ExecutionFailure("eig ratio needs a tensor with a leading extent")
    return np.ascontiguousarray(a).reshape(a.shape[0], -1)


def _op_sym_eig_ratio(a):
    rows = _reshape_rows(a)
    gram = rows @ rows.T
    sym = gram + gram.T
    eigs = T.eigenvalues(_f32(sym), symmetric=True)
    with np.errstate(all="ignore"):
        return _scalar(_F32(eigs[-1]) / _F32(eigs[0]))


def _op_eig_ratio(a):
    rows = _reshape_rows(a)
    gram = rows @ rows.T
    eigs = T.eigenvalues(_f32(gram), symmetric=False)
    with np.errstate(all="ignore"):
        return _scalar(_F32(eigs[-1]) / _F32(eigs[0]))


def _op_normalized_sum(a):
    with np.errstate(all="ignore"):
        return _scalar(np.sum(a, dtype=_F32) / _F32(a.size))


def _op_l1_mean(a):
    with np.errstate(all="ignore"):
        return _scalar(np.sum(np.abs(a), dtype=_F32) / _F32(a.size))


def _op_hamming(a, b):
    with np.errstate(all="ignore"):
        ha = np.heaviside(a, _F32(0.0))
        hb = np.heaviside(b, _F32(0.0))
        T.broadcast_shape(ha.shape, hb.shape)
        # |sign(ha - hb)| is 1 where the codes differ and propagates NaN
        diff = np.abs(np.sign(ha - hb))
        return _scalar(np.sum(diff, dtype=_F32))


def _op_kl_div(a, b):
    # a holds log-probabilities, b probabilities; batchmean reduction over
    # the leading extent of the broadcast shape
    shape = T.broadcast_shape(a.shape, b.shape)
    aa = np.broadcast_to(a, shape)
    bb = np.broadcast_to(b, shape)
    with np.errstate(all="ignore"):
        blogb = np.where(bb == 0, _F32(0.0), bb * np.log(bb))
        total = np.sum(blogb - bb * aa, dtype=_F32)
        n0 = shape[0] if len(shape) >= 1 else 1
        return _scalar(total / _F32(n0))


def _op_cosine_similarity(a, b):
    ra = _reshape_rows(a)
    rb = _reshape_rows(b)
    if ra.shape != rb.shape:
        raise ExecutionFailure(
            f"cosine similarity rows disagree: {ra.shape} vs {rb.shape}")
    with np.errstate(all="ignore"):
        dots = np.sum(ra * rb, axis=1, dtype=_F32)
        na = np.sqrt(np.sum(np.square(ra), axis=1, dtype=_F32))
        nb = np.sqrt(np.sum(np.square(rb), axis=1, dtype=_F32))
        denom = np.maximum(na, _F32(_COSINE_EPS)) * np.maximum(nb, _F32(_COSINE_EPS))
        return _scalar(np.sum(dots / denom, dtype=_F32))


def _op_softmax(a):
    if a.ndim == 0:
        return _scalar(1.0)
    with np.errstate(all="ignore"):
        shifted = a - np.max(a, axis=-1, keepdims=True)
        e = np.exp(shifted)
        return _f32(e / np.sum(e, axis=-1, keepdims=True, dtype=_F32))


def _op_sigmoid(a):
    with np.errstate(all="ignore"):
        return _f32(_F32(1.0) / (_F32(1.0) + np.exp(-a)))


def _op_ones_like(a):
    return np.ones_like(a, dtype=_F32)


def _op_zeros_like(a):
    return np.zeros_like(a, dtype=_F32)


def _op_gt_zero(a):
    r = np.greater(a, _F32(0.0)).astype(_F32)
    return _nan_mask_binary(a, a, r)


def _op_lt_zero(a):
    r = np.less(a, _F32(0.0)).astype(_F32)
    return _nan_mask_binary(a, a, r)


def _op_numel(a):
    return _scalar(a.size)


PRIMITIVES = [
    Primitive(0, "eltwise_sum", 2, _op_add),
    Primitive(1, "eltwise_diff", 2, _op_sub),
    Primitive(2, "eltwise_mul", 2, _op_mul),
    Primitive(3, "matmul", 2, _op_matmul),
    Primitive(4, "less_than", 2, _op_lt),
    Primitive(5, "greater_than", 2, _op_gt),
    Primitive(6, "equal", 2, _op_eq),
    Primitive(7, "log", 1, _op_log),
    Primitive(8, "abslog", 1, _op_abslog),
    Primitive(9, "abs", 1, _op_abs),
    Primitive(10, "square", 1, _op_square),
    Primitive(11, "exp", 1, _op_exp),
    Primitive(12, "normalize", 1, _op_normalize),
    Primitive(13, "relu", 1, _op_relu),
    Primitive(14, "sign", 1, _op_sign),
    Primitive(15, "heaviside", 1, _op_heaviside),
    Primitive(16, "reciprocal", 1, _op_reciprocal),
    Primitive(17, "frobenius_norm", 1, _op_frobenius_norm),
    Primitive(18, "det", 1, _op_det),
    Primitive(19, "logdet", 1, _op_logdet),
    Primitive(20, "sym_eig_ratio", 1, _op_sym_eig_ratio),
    Primitive(21, "eig_ratio", 1, _op_eig_ratio),
    Primitive(22, "normalized_sum", 1, _op_normalized_sum),
    Primitive(23, "l1_mean", 1, _op_l1_mean),
    Primitive(24, "hamming", 2, _op_hamming),
    Primitive(25, "kl_div", 2, _op_kl_div),
    Primitive(26, "cosine_similarity", 2, _op_cosine_similarity),
    Primitive(27, "softmax", 1, _op_softmax),
    Primitive(28, "sigmoid", 1, _op_sigmoid),
    Primitive(29, "ones_like", 1, _op_ones_like),
    Primitive(30, "zeros_like", 1, _op_zeros_like),
    Primitive(31, "gt_zero", 1, _op_gt_zero),
    Primitive(32, "lt_zero", 1, _op_lt_zero),
    Primitive(33, "numel", 1, _op_numel),
]

BY_NAME = {p.name: p for p in PRIMITIVES}
BY_ID = {p.id: p for p in PRIMITIVES}

assert len(PRIMITIVES) == 34
assert all(PRIMITIVES[i].id == i for i in range(34))


def eval_primitive(op_id: int, a: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    """Apply primitive ``op_id``; any internal error becomes ExecutionFailure."""
    prim = BY_ID.get(op_id)
    if prim is None:
        raise ExecutionFailure(f"unknown primitive id {op_id}")
    if prim.arity == 1 and b is not None:
        raise ExecutionFailure(f"{prim.name} is unary, got two arguments")
    if prim.arity == 2 and b is None:
        raise ExecutionFailure(f"{prim.name} is binary, got one argument")
    try:
        out = prim.fn(a) if prim.arity == 1 else prim.fn(a, b)
    except ExecutionFailure:
        raise
    except Exception as exc:
        raise ExecutionFailure(f"{prim.name} failed: {exc}") from exc
    if out.ndim > T.MAX_RANK:
        raise ExecutionFailure(f"{prim.name} produced rank {out.ndim}")
    return out
