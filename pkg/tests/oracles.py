"""Independent reference implementations used as test oracles.

Everything here is deliberately written straight-line from the operation
descriptions -- naive loops and direct formulas -- and stays independent of
the package's own kernels so a bug cannot hide on both sides of a
comparison.
"""

import math

import numpy as np

from zcforge.statsgen import forward_backward, partial_loss


# --- straight-line primitive oracle -------------------------------------------

def _bc(a, b):
    shape = np.broadcast_shapes(a.shape, b.shape)
    return np.broadcast_to(a, shape).astype(np.float64), \
        np.broadcast_to(b, shape).astype(np.float64)


def _rows(a):
    return a.reshape(a.shape[0], -1).astype(np.float64)


def oracle_primitive(op_id, a, b=None):
    """Expected result of one primitive, computed naively in float64."""
    a = np.asarray(a, dtype=np.float64)
    if b is not None:
        b = np.asarray(b, dtype=np.float64)
    if op_id == 0:
        x, y = _bc(a, b)
        return x + y
    if op_id == 1:
        x, y = _bc(a, b)
        return x - y
    if op_id == 2:
        x, y = _bc(a, b)
        return x * y
    if op_id == 3:
        return _matmul_loops(a, b)
    if op_id == 4:
        x, y = _bc(a, b)
        return np.where(np.isnan(x) | np.isnan(y), np.nan, (x < y) * 1.0)
    if op_id == 5:
        x, y = _bc(a, b)
        return np.where(np.isnan(x) | np.isnan(y), np.nan, (x > y) * 1.0)
    if op_id == 6:
        x, y = _bc(a, b)
        return np.where(np.isnan(x) | np.isnan(y), np.nan, (x == y) * 1.0)
    if op_id == 7:
        c = a.copy()
        c[c <= 0] = 1.0
        return np.log(c)
    if op_id == 8:
        c = a.copy()
        c[c == 0] = 1.0
        return np.log(np.abs(c))
    if op_id == 9:
        return np.abs(a)
    if op_id == 10:
        return a * a
    if op_id == 11:
        return np.exp(a)
    if op_id == 12:
        flat = a.ravel()
        m = flat.sum() / flat.size
        if flat.size < 2:
            return np.zeros_like(a)
        var = ((flat - m) ** 2).sum() / (flat.size - 1)
        sd = math.sqrt(var)
        out = (a - m) / sd if sd > 0 else np.full_like(a, np.nan)
        out[np.isnan(out)] = 0.0
        return out
    if op_id == 13:
        return np.where(a > 0, a, np.where(np.isnan(a), np.nan, 0.0))
    if op_id == 14:
        return np.sign(a)
    if op_id == 15:
        return np.where(np.isnan(a), np.nan, (a > 0) * 1.0)
    if op_id == 16:
        with np.errstate(all="ignore"):
            return 1.0 / a
    if op_id == 17:
        return math.sqrt(float((a * a).sum()))
    if op_id == 18:
        return _det_cofactor(a) if a.shape[0] <= 4 else _det_gauss(a)
    if op_id == 19:
        d = _det_cofactor(a) if a.shape[0] <= 4 else _det_gauss(a)
        if d > 0:
            return math.log(d)
        if d == 0:
            return -math.inf
        return 0.0  # log of a negative determinant is NaN, sanitized to 0
    if op_id == 20:
        rows = _rows(a)
        g = rows @ rows.T
        g = g + g.T
        e = np.linalg.eigvalsh(g)
        with np.errstate(all="ignore"):
            return e[-1] / e[0]
    if op_id == 21:
        rows = _rows(a)
        g = np.einsum("nc,mc->nm", rows, rows)
        e = np.sort(np.abs(np.linalg.eigvals(g)))
        with np.errstate(all="ignore"):
            return e[-1] / e[0]
    if op_id == 22:
        return a.sum() / a.size
    if op_id == 23:
        return np.abs(a).sum() / a.size
    if op_id == 24:
        x, y = _bc(a, b)
        hx = np.where(np.isnan(x), np.nan, (x > 0) * 1.0)
        hy = np.where(np.isnan(y), np.nan, (y > 0) * 1.0)
        d = hx - hy
        return np.where(np.isnan(d), np.nan, (d != 0) * 1.0).sum()
    if op_id == 25:
        x, y = _bc(a, b)
        total = 0.0
        for la, pb in zip(x.ravel(), y.ravel()):
            if pb == 0:
                total += -pb * la
            else:
                total += pb * (math.log(pb) - la) if pb > 0 else math.nan
        n0 = x.shape[0] if x.ndim else 1
        return total / n0
    if op_id == 26:
        ra, rb = _rows(a), _rows(b)
        total = 0.0
        for i in range(ra.shape[0]):
            na = math.sqrt(float((ra[i] ** 2).sum()))
            nb = math.sqrt(float((rb[i] ** 2).sum()))
            dot = float((ra[i] * rb[i]).sum())
            total += dot / (max(na, 1e-8) * max(nb, 1e-8))
        return total
    if op_id == 27:
        e = np.exp(a - a.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    if op_id == 28:
        with np.errstate(all="ignore"):
            return 1.0 / (1.0 + np.exp(-a))
    if op_id == 29:
        return np.ones_like(a)
    if op_id == 30:
        return np.zeros_like(a)
    if op_id == 31:
        return np.where(np.isnan(a), np.nan, (a > 0) * 1.0)
    if op_id == 32:
        return np.where(np.isnan(a), np.nan, (a < 0) * 1.0)
    if op_id == 33:
        return float(a.size)
    raise ValueError(op_id)


def _matmul_loops(a, b):
    """Batched matmul by explicit loop nest over broadcast batch dims."""
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    n, k = a.shape[-2], a.shape[-1]
    k2, m = b.shape[-2], b.shape[-1]
    assert k == k2
    out = np.zeros(batch + (n, m), dtype=np.float64)
    a_full = np.broadcast_to(a, batch + (n, k))
    b_full = np.broadcast_to(b, batch + (k, m))
    for idx in np.ndindex(*batch) if batch else [()]:
        for i in range(n):
            for j in range(m):
                s = 0.0
                for t in range(k):
                    s += float(a_full[idx + (i, t)]) * float(b_full[idx + (t, j)])
                out[idx + (i, j)] = s
    return out


def _det_cofactor(m):
    n = m.shape[0]
    if n == 1:
        return float(m[0, 0])
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(m, 0, axis=0), j, axis=1)
        total += ((-1.0) ** j) * float(m[0, j]) * _det_cofactor(minor)
    return total


def _det_gauss(m):
    a = m.astype(np.float64).copy()
    n = a.shape[0]
    det = 1.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if a[p, k] == 0.0:
            return 0.0
        if p != k:
            a[[k, p]] = a[[p, k]]
            det = -det
        det *= a[k, k]
        a[k + 1:] -= np.outer(a[k + 1:, k] / a[k, k], a[k])
    return det


# --- rank correlation oracles ----------------------------------------------------

def kendall_tau_pairs(x, y):
    """tau-b by O(n^2) pair counting."""
    n = len(x)
    nc = nd = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tx += 1
            elif dy == 0:
                ty += 1
            elif (dx > 0) == (dy > 0):
                nc += 1
            else:
                nd += 1
    denom_x = nc + nd + tx
    denom_y = nc + nd + ty
    if denom_x == 0 or denom_y == 0:
        return 0.0
    return (nc - nd) / math.sqrt(denom_x * denom_y)


def midranks_counting(values):
    """Midrank of each element by O(n^2) counting."""
    n = len(values)
    out = []
    for i in range(n):
        less = sum(1 for j in range(n) if values[j] < values[i])
        equal = sum(1 for j in range(n) if values[j] == values[i])
        out.append(less + (equal + 1) / 2.0)
    return out


def spearman_rho_midranks(x, y):
    rx = midranks_counting(x)
    ry = midranks_counting(y)
    n = len(x)
    mx = sum(rx) / n
    my = sum(ry) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    return sxy / math.sqrt(sxx * syy)


# --- finite-difference gradient oracle ---------------------------------------------

def fd_check_network(arch, params64, x64, labels, eps=1e-3, coords_per_tensor=20,
                     seed=0, rel_floor=1e-3, self_tol=3.3e-5):
    """Central-difference check of every captured gradient tensor.

    Runs in float64. A sampled coordinate is a valid finite-difference point
    only where the oracle itself is trustworthy, judged without looking at
    the analytic gradient:

    - the +-eps stencil must not cross a rectifier kink (the downstream ReLU
      sign pattern must agree between the two evaluations), and
    - the eps and eps/2 stencils must agree to ``self_tol`` (the eps^2
      truncation term is otherwise too large for the stencil to certify
      anything at the target tolerance).

    Rejected coordinates are resampled. The relative error divides by
    max(|fd| + |grad|, rel_floor) so coordinates far below the stencil's
    absolute resolution are compared at that resolution instead of drowning
    in it. Returns (max relative error, number of coordinates checked).
    """
    res = forward_backward(arch, params64, x64, labels)
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    checked = 0

    def central(point, block, base, idx, step):
        plus = base.copy()
        plus.flat[idx] += step
        minus = base.copy()
        minus.flat[idx] -= step
        lp, pat_p = partial_loss(arch, params64, labels, block, point, plus)
        lm, pat_m = partial_loss(arch, params64, labels, block, point, minus)
        clean = pat_p.shape == pat_m.shape and bool(np.array_equal(pat_p, pat_m))
        return (lp - lm) / (2.0 * step), clean

    def central_w(block_idx, t1, idx, step):
        pp = params64.copy()
        pp.conv[block_idx].flat[idx] += step
        pm = params64.copy()
        pm.conv[block_idx].flat[idx] -= step
        lp, pat_p = partial_loss(arch, pp, labels, block_idx, "t1", t1)
        lm, pat_m = partial_loss(arch, pm, labels, block_idx, "t1", t1)
        clean = pat_p.shape == pat_m.shape and bool(np.array_equal(pat_p, pat_m))
        return (lp - lm) / (2.0 * step), clean

    def run_check(size, grad, evaluate):
        nonlocal worst, checked
        n = min(coords_per_tensor, size)
        tried = set()
        done = 0
        attempts = 0
        while done < n and attempts < 30 * n:
            attempts += 1
            idx = int(rng.integers(0, size))
            if idx in tried:
                continue
            tried.add(idx)
            fd, clean = evaluate(idx, eps)
            if not clean:
                continue
            fd_half, clean_half = evaluate(idx, eps / 2.0)
            if not clean_half:
                continue
            self_rel = abs(fd - fd_half) / max(abs(fd) + abs(fd_half), rel_floor)
            if self_rel > self_tol:
                continue  # the stencil cannot certify here
            an = float(grad.flat[idx])
            rel = abs(fd - an) / max(abs(fd) + abs(an), rel_floor)
            worst = max(worst, rel)
            done += 1
            checked += 1

    for bi, rec in enumerate(res.blocks):
        for point, gkey in (("t1", "t1g"), ("t2", "t2g"), ("t4", "t4g")):
            base = rec[point]
            run_check(base.size, rec[gkey],
                      lambda idx, step, p=point, b=bi, t=base:
                      central(p, b, t, idx, step))
        run_check(params64.conv[bi].size, rec["t3g"],
                  lambda idx, step, b=bi, t=rec["t1"]:
                  central_w(b, t, idx, step))

    return worst, checked
