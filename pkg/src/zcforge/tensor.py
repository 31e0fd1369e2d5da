"""Dense tensor values and the numeric kernels the primitive ops build on.

A tensor is a C-contiguous ``numpy.ndarray`` of float32 with rank at most 4
(rank 0 is a scalar). Program evaluation stays in float32 throughout so that
overflow- and NaN-driven validity filtering behaves like the reference
numeric regime; the LU and eigenvalue kernels accumulate in float64
internally. Values may be +-inf or NaN -- nothing here sanitizes silently,
sanitization is an explicit behaviour of individual primitive ops.

All kernels are pure functions; tensors are treated as immutable after
construction and are safe to share across threads.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericalFailure, ShapeMismatch

MAX_RANK = 4

# Largest matrix side the eigen kernels accept. Statistic tensors reshaped to
# (n0, -1) rarely exceed channel counts; the cap bounds worst-case evaluation
# cost during evolution.
MAX_EIG_SIDE = 512


def as_tensor(data) -> np.ndarray:
    """Coerce ``data`` to a float32 tensor of rank <= 4."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim > MAX_RANK:
        raise ShapeMismatch(f"rank {arr.ndim} exceeds maximum rank {MAX_RANK}")
    return np.ascontiguousarray(arr)


def scalar(value: float) -> np.ndarray:
    """A rank-0 float32 tensor."""
    return np.float32(value) * np.ones((), dtype=np.float32)


def is_tensor(x) -> bool:
    return isinstance(x, np.ndarray) and x.dtype == np.float32 and x.ndim <= MAX_RANK


def broadcast_shape(a_shape: Sequence[int], b_shape: Sequence[int]) -> tuple:
    """Right-aligned broadcast of two shapes, or ShapeMismatch."""
    out = []
    ra, rb = len(a_shape), len(b_shape)
    for i in range(1, max(ra, rb) + 1):
        ea = a_shape[-i] if i <= ra else 1
        eb = b_shape[-i] if i <= rb else 1
        if ea != eb and ea != 1 and eb != 1:
            raise ShapeMismatch(f"cannot broadcast {tuple(a_shape)} with {tuple(b_shape)}")
        out.append(max(ea, eb))
    return tuple(reversed(out))


def broadcast_binary(a: np.ndarray, b: np.ndarray, f: Callable) -> np.ndarray:
    """Apply elementwise ``f`` under standard right-aligned broadcasting."""
    broadcast_shape(a.shape, b.shape)  # raises on incompatibility
    with np.errstate(all="ignore"):
        out = f(a, b)
    return np.asarray(out, dtype=np.float32)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched matrix product: contraction over the last dim of ``a`` and the
    second-last of ``b``; leading dims broadcast. Both operands must be rank
    >= 2."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs rank >= 2 operands, got {a.ndim} and {b.ndim}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"inner dims disagree: {a.shape} @ {b.shape}")
    broadcast_shape(a.shape[:-2], b.shape[:-2])
    out_rank = max(a.ndim, b.ndim)
    if out_rank > MAX_RANK:
        raise ShapeMismatch("matmul output exceeds maximum rank")
    with np.errstate(all="ignore"):
        out = np.matmul(a, b)
    return np.asarray(out, dtype=np.float32)


def _square_f64(a: np.ndarray, op: str) -> np.ndarray:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"{op} requires a square 2-D tensor, got shape {a.shape}")
    return np.asarray(a, dtype=np.float64)


def _lu_decompose(m: np.ndarray):
    """In-place LU with partial pivoting on a float64 copy.

    Returns (lu, parity) where parity is +-1 for the row-swap permutation.
    A zero pivot column leaves a zero on the diagonal (singular matrix).
    """
    lu = m.copy()
    n = lu.shape[0]
    parity = 1.0
    for k in range(n):
        col = np.abs(lu[k:, k])
        p = k + int(np.argmax(col))
        if lu[p, k] == 0.0:
            continue  # structurally singular in this column
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            parity = -parity
        pivot = lu[k, k]
        if k + 1 < n:
            lu[k + 1:, k] /= pivot
            lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, parity


def determinant(a: np.ndarray) -> float:
    """Determinant of a square 2-D tensor via LU with partial pivoting."""
    m = _square_f64(a, "determinant")
    lu, parity = _lu_decompose(m)
    return float(parity * np.prod(np.diag(lu)))


def log_determinant(a: np.ndarray) -> float:
    """log(det A) with the ops-table sanitization baked in.

    Positive determinant gives the ordinary log; a singular matrix gives
    -inf (propagated); a negative determinant would give log of a negative
    number, i.e. NaN, which the table rule ``C[C!=C]=0`` replaces with 0.
    """
    m = _square_f64(a, "log_determinant")
    lu, parity = _lu_decompose(m)
    diag = np.diag(lu)
    if np.isnan(diag).any():
        return 0.0
    sign = parity * np.prod(np.sign(diag))
    if sign == 0.0:
        return float("-inf")
    if sign < 0.0:
        return 0.0
    return float(np.sum(np.log(np.abs(diag))))


def eigenvalues(a: np.ndarray, symmetric: bool) -> list:
    """Eigenvalues of a square 2-D tensor with finite entries.

    The symmetric path returns real eigenvalues ascending by value; the
    general path returns eigenvalue moduli ascending. Convergence failures
    and oversized inputs raise NumericalFailure, which callers treat as a
    program-execution failure.
    """
    m = _square_f64(a, "eigenvalues")
    if not np.isfinite(m).all():
        raise NumericalFailure("eigenvalue input contains non-finite entries")
    if m.shape[0] > MAX_EIG_SIDE:
        raise NumericalFailure(f"matrix side {m.shape[0]} exceeds eigen cap {MAX_EIG_SIDE}")
    try:
        if symmetric:
            vals = np.linalg.eigvalsh(m)
            return [float(v) for v in vals]
        vals = np.abs(np.linalg.eigvals(m))
        return [float(v) for v in np.sort(vals)]
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigenvalue iteration failed: {exc}") from exc
