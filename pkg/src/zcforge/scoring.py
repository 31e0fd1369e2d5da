"""Applying programs to network records and rank-correlation statistics.

Failure handling: a program that fails or yields a non-finite value on a
network gets a failure mark instead of a score. When correlations are
computed, failure-marked networks tie at the minimum rank; a program failing
on more than half of a sample is assigned fitness -1 outright. Correlations
themselves are the tie-corrected tau-b and the midrank Spearman rho; fully
tied inputs return 0 by convention with a warning.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from .errors import DegenerateInputWarning, ExecutionFailure
from .program import ExprProgram, block_scalar

FAILED_FITNESS = -1.0
FAILURE_FRACTION_LIMIT = 0.5


@dataclass
class ScoreResult:
    network_id: str
    score: Optional[float]  # None marks failure; otherwise finite
    per_block_scalars: Optional[List[float]] = None

    @property
    def failed(self) -> bool:
        return self.score is None


def score_blocks(p: ExprProgram, blocks) -> ScoreResult:
    """Evaluate a program block-by-block and aggregate with the mean."""
    scalars = []
    for block in blocks:
        try:
            s = block_scalar(p, block.slots())
        except ExecutionFailure:
            return ScoreResult(network_id="", score=None)
        if not math.isfinite(s):
            return ScoreResult(network_id="", score=None)
        scalars.append(s)
    if not scalars:
        return ScoreResult(network_id="", score=None)
    agg = sum(scalars) / len(scalars)
    if not math.isfinite(agg):
        return ScoreResult(network_id="", score=None)
    return ScoreResult(network_id="", score=agg, per_block_scalars=scalars)


def score_network(p: ExprProgram, net) -> ScoreResult:
    result = score_blocks(p, net.blocks)
    result.network_id = net.id
    return result


# --- rank correlations --------------------------------------------------------

def _tie_term(values: Sequence[float]) -> int:
    counts: Dict[float, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return sum(c * (c - 1) // 2 for c in counts.values())


def _merge_count(ys: List[float]) -> int:
    """Inversions of ys by mergesort; ties are not inversions."""
    n = len(ys)
    if n < 2:
        return 0
    buf = ys[:]
    tmp = [0.0] * n
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if buf[j] < buf[i]:
                    inversions += mid - i
                    tmp[k] = buf[j]
                    j += 1
                else:
                    tmp[k] = buf[i]
                    i += 1
                k += 1
            while i < mid:
                tmp[k] = buf[i]
                i += 1
                k += 1
            while j < hi:
                tmp[k] = buf[j]
                j += 1
                k += 1
            buf[lo:hi] = tmp[lo:hi]
        width *= 2
    return inversions


def kendall_tau(scores: Sequence[float], accs: Sequence[float]) -> float:
    """Tie-corrected Kendall tau-b via O(n log n) mergesort counting."""
    n = len(scores)
    if n != len(accs):
        raise ValueError(f"length mismatch: {n} scores vs {len(accs)} accuracies")
    if n < 2:
        raise ValueError("need at least two points for a rank correlation")
    order = sorted(range(n), key=lambda i: (scores[i], accs[i]))
    ys = [accs[i] for i in order]
    nd = _merge_count(ys)

    n0 = n * (n - 1) // 2
    n1 = _tie_term(scores)
    n2 = _tie_term(accs)
    n3 = _tie_term(list(zip(scores, accs)))
    nc = n0 - n1 - n2 + n3 - nd
    denom_x = n0 - n1
    denom_y = n0 - n2
    if denom_x == 0 or denom_y == 0:
        warnings.warn("rank correlation of fully tied input",
                      DegenerateInputWarning)
        return 0.0
    return (nc - nd) / math.sqrt(denom_x * denom_y)


def midranks(values: Sequence[float]) -> List[float]:
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman_rho(scores: Sequence[float], accs: Sequence[float]) -> float:
    """Pearson correlation of midranks, same tie convention as kendall_tau."""
    n = len(scores)
    if n != len(accs):
        raise ValueError(f"length mismatch: {n} scores vs {len(accs)} accuracies")
    if n < 2:
        raise ValueError("need at least two points for a rank correlation")
    rx = midranks(scores)
    ry = midranks(accs)
    mean = (n + 1) / 2.0
    sxy = sum((a - mean) * (b - mean) for a, b in zip(rx, ry))
    sxx = sum((a - mean) ** 2 for a in rx)
    syy = sum((b - mean) ** 2 for b in ry)
    if sxx == 0.0 or syy == 0.0:
        warnings.warn("rank correlation of fully tied input",
                      DegenerateInputWarning)
        return 0.0
    return sxy / math.sqrt(sxx * syy)


# --- failure-aware correlation over score results -------------------------------

def effective_scores(results: Sequence[ScoreResult]) -> Optional[List[float]]:
    """Replace failure marks by a shared value below every valid score so the
    failures tie at minimum rank. Returns None when more than half failed."""
    n = len(results)
    failures = sum(1 for r in results if r.failed)
    if n == 0 or failures > FAILURE_FRACTION_LIMIT * n:
        return None
    valid = [r.score for r in results if not r.failed]
    if not valid:
        return None
    floor = min(valid) - 1.0
    return [floor if r.failed else r.score for r in results]


def tau_with_failures(results: Sequence[ScoreResult],
                      accs: Sequence[float]) -> float:
    scores = effective_scores(results)
    if scores is None:
        return FAILED_FITNESS
    return kendall_tau(scores, accs)


def rho_with_failures(results: Sequence[ScoreResult],
                      accs: Sequence[float]) -> float:
    scores = effective_scores(results)
    if scores is None:
        return FAILED_FITNESS
    return spearman_rho(scores, accs)


def top_decile_tau(results: Sequence[ScoreResult],
                   accs: Sequence[float]) -> Optional[float]:
    """tau restricted to the top accuracy decile (reporting aid only)."""
    n = len(accs)
    cut = max(2, n // 10)
    order = sorted(range(n), key=lambda i: accs[i], reverse=True)
    top = order[:cut]
    sub_results = [results[i] for i in top]
    sub_accs = [accs[i] for i in top]
    scores = effective_scores(sub_results)
    if scores is None:
        return None
    return kendall_tau(scores, sub_accs)
