"""Row alignment: key similarity and maximum-weight bipartite matching."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

SIMILARITIES = ("normalized_edit", "token_jaccard")


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance (unit insert / delete / substitute)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity(a: str, b: str, kind: str = "normalized_edit") -> float:
    if kind == "normalized_edit":
        longest = max(len(a), len(b))
        if longest == 0:
            return 1.0
        return 1.0 - edit_distance(a, b) / longest
    if kind == "token_jaccard":
        ta, tb = set(a.split()), set(b.split())
        if not ta and not tb:
            return 1.0
        return len(ta & tb) / len(ta | tb)
    raise ValueError(f"unknown similarity {kind!r}; expected one of {SIMILARITIES}")


def _optimum(w: np.ndarray, rows: Sequence[int], cols: Sequence[int]) -> float:
    if not len(rows) or not len(cols):
        return 0.0
    sub = w[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(sub, maximize=True)
    return float(sub[r, c].sum())


def max_weight_matching(weights, tau: float = 0.0) -> list[tuple[int, int, float]]:
    """Exact maximum-weight one-to-one matching between rows and columns.

    ``weights[p][g]`` scores predicted row ``p`` against ground-truth row
    ``g``; pairs scoring below ``tau`` are not edges. Among optimal matchings
    the one whose pair list, sorted by ``(g, p)``, is lexicographically
    smallest is returned, so the result does not depend on solver internals.

    Returns ``(p, g, weight)`` triples sorted by ``g``.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.size == 0:
        return []
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    edge = w >= tau
    # Non-edges weigh 0, which is what leaving both rows unmatched contributes.
    w = np.where(edge, w, 0.0)
    n_pred, n_gt = w.shape
    best = _optimum(w, range(n_pred), range(n_gt))
    eps = 1e-9 * max(1.0, best)

    free_pred = list(range(n_pred))
    fixed_total = 0.0
    pairs = []
    for g in range(n_gt):
        later = list(range(g + 1, n_gt))
        for p in free_pred:
            if not edge[p, g]:
                continue
            rest = [q for q in free_pred if q != p]
            if fixed_total + w[p, g] + _optimum(w, rest, later) >= best - eps:
                pairs.append((p, g, float(w[p, g])))
                fixed_total += w[p, g]
                free_pred = rest
                break
    return pairs
