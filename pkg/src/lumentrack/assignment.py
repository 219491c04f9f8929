"""Gated minimum-cost bipartite assignment.

Entries ``>= gate`` (or non-finite) are *gated*: they are never returned.
Leaving a row or column unmatched costs ``gate``, so the solver minimizes

    sum over matched pairs of (cost - gate)

over all partial matchings that use only entries ``< gate``. This is the
usual "cost limit" formulation of tracking-by-detection matchers.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass
class Assignment:
    pairs: list = field(default_factory=list)
    unmatched_rows: list = field(default_factory=list)
    unmatched_cols: list = field(default_factory=list)

    def total_cost(self, costs) -> float:
        costs = np.asarray(costs, dtype=np.float64)
        return float(sum(costs[r, c] for r, c in self.pairs))


def solve(costs, gate: float) -> Assignment:
    """Hungarian assignment with gating.

    Args:
        costs: ``(rows, cols)`` array; either dimension may be zero.
        gate: finite threshold; entries at or above it are infeasible.

    Returns:
        Pairs sorted by row, plus the unmatched row and column indices.
    """
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim != 2:
        c = c.reshape(0, 0) if c.size == 0 else c.reshape(c.shape[0], -1)
    rows, cols = c.shape
    if not np.isfinite(gate):
        raise ValueError("gate must be finite")
    if rows == 0 or cols == 0:
        return Assignment([], list(range(rows)), list(range(cols)))

    feasible = np.isfinite(c) & (c < gate)
    work = np.where(feasible, c, gate)
    transposed = rows > cols
    if transposed:
        work = work.T
    col_for_row = kernels.lsa(work)

    pairs = []
    for r, j in enumerate(col_for_row):
        if j < 0:
            continue
        i, k = (int(j), r) if transposed else (r, int(j))
        if feasible[i, k]:
            pairs.append((i, k))
    pairs.sort()
    used_r = {p[0] for p in pairs}
    used_c = {p[1] for p in pairs}
    return Assignment(
        pairs,
        [i for i in range(rows) if i not in used_r],
        [j for j in range(cols) if j not in used_c],
    )
