"""Cell-level scoring of a predicted table against the ground truth.

Rows are aligned by key similarity (see :mod:`tabledoc.matching`), cells of
aligned rows are compared after :func:`normalize_cell`, and matches are
bucketed by the ground-truth cell's capability label. All rates are
micro-averaged over cases and reported as percentages rounded to 2 decimals.

A NULL predicted cell matches a NULL ground-truth cell; both tables
contribute all of their cells (NULL or not) to the denominators.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .matching import SIMILARITIES, max_weight_matching, similarity
from .model import (
    TAXONOMY,
    CapabilityMatrix,
    Category,
    ModelError,
    NULL_TOKEN,
    Sub,
    Table,
    normalize_cell,
)


@dataclass(frozen=True)
class AlignmentConfig:
    tau: float = 0.85
    similarity: str = "normalized_edit"

    def __post_init__(self):
        if not 0 <= self.tau <= 1:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}")


@dataclass(frozen=True)
class Alignment:
    pairs: tuple[tuple[int, int, float], ...]  # (pred_row, gt_row, score)
    unmatched_pred: frozenset[int]
    unmatched_gt: frozenset[int]

    @property
    def total(self) -> float:
        return sum(s for _, _, s in self.pairs)


def row_key(table: Table, i: int) -> Optional[str]:
    v = table.entity(i)
    return None if v is None else normalize_cell(v)


def key_weights(pred: Table, gt: Table, kind: str):
    gt_keys = [row_key(gt, g) for g in range(gt.n)]
    weights = []
    for p in range(pred.n):
        pk = row_key(pred, p)
        weights.append(
            [0.0 if pk is None or gk is None or pk == NULL_TOKEN else similarity(pk, gk, kind) for gk in gt_keys]
        )
    return weights


def align_rows(pred: Table, gt: Table, cfg: AlignmentConfig = AlignmentConfig()) -> Alignment:
    if pred.schema.names != gt.schema.names:
        raise ModelError("predicted and ground-truth tables use different schemas")
    if pred.n == 0 or gt.n == 0:
        return Alignment((), frozenset(range(pred.n)), frozenset(range(gt.n)))
    pairs = max_weight_matching(key_weights(pred, gt, cfg.similarity), cfg.tau)
    return Alignment(
        tuple(pairs),
        frozenset(range(pred.n)) - {p for p, _, _ in pairs},
        frozenset(range(gt.n)) - {g for _, g, _ in pairs},
    )


# ---------------------------------------------------------------------------
# Cell scoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellVerdict:
    gt_row: int
    col: int
    pred_row: Optional[int]
    gt_value: Optional[str]
    pred_value: Optional[str]
    match: bool
    category: Category
    sub: Optional[Sub]

    def to_json(self) -> dict:
        return {
            "gt_row": self.gt_row,
            "col": self.col,
            "pred_row": self.pred_row,
            "gt_value": self.gt_value,
            "pred_value": self.pred_value,
            "match": self.match,
            "category": self.category.value,
            "sub": self.sub.value if self.sub else None,
        }


@dataclass
class Counts:
    """Additive tallies; reports are reduced by summing these."""

    tp: int = 0
    pred_cells: int = 0
    gt_cells: int = 0
    dir_tp: int = 0
    dir_total: int = 0
    ind_tp: int = 0
    ind_total: int = 0
    category: dict = field(default_factory=dict)  # code -> [tp, total]
    sub: dict = field(default_factory=dict)  # name -> [tp, total]

    def __iadd__(self, other: "Counts") -> "Counts":
        for name in ("tp", "pred_cells", "gt_cells", "dir_tp", "dir_total", "ind_tp", "ind_total"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        for mine, theirs in ((self.category, other.category), (self.sub, other.sub)):
            for k, (a, b) in theirs.items():
                cur = mine.setdefault(k, [0, 0])
                cur[0] += a
                cur[1] += b
        return self

    def to_json(self) -> dict:
        return {
            "tp_cells": self.tp,
            "pred_cell_count": self.pred_cells,
            "gt_cell_count": self.gt_cells,
            "direct": [self.dir_tp, self.dir_total],
            "indirect": [self.ind_tp, self.ind_total],
            "category": {k: list(v) for k, v in sorted(self.category.items())},
            "sub": {k: list(v) for k, v in sorted(self.sub.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Counts":
        return cls(
            tp=obj["tp_cells"],
            pred_cells=obj["pred_cell_count"],
            gt_cells=obj["gt_cell_count"],
            dir_tp=obj["direct"][0],
            dir_total=obj["direct"][1],
            ind_tp=obj["indirect"][0],
            ind_total=obj["indirect"][1],
            category={k: list(v) for k, v in obj["category"].items()},
            sub={k: list(v) for k, v in obj["sub"].items()},
        )


@dataclass
class ScoredCase:
    counts: Counts
    verdicts: list[CellVerdict]
    alignment: Alignment
    case_id: str = ""


def cells_match(pred_value: Optional[str], gt_value: Optional[str]) -> bool:
    return normalize_cell(pred_value) == normalize_cell(gt_value)


def score_cells(
    alignment: Alignment, pred: Table, gt: Table, matrix: CapabilityMatrix, case_id: str = ""
) -> ScoredCase:
    if matrix.shape != gt.shape:
        raise ModelError(f"capability matrix {matrix.shape} does not match table {gt.shape}")
    if pred.m != gt.m:
        raise ModelError("predicted table has a different column count")
    partner = {g: p for p, g, _ in alignment.pairs}
    c = Counts(pred_cells=pred.n * pred.m, gt_cells=gt.n * gt.m)
    verdicts = []
    for g in range(gt.n):
        p = partner.get(g)
        for j in range(gt.m):
            label = matrix[g, j]
            if label is None:
                raise ModelError(f"cell ({g},{j}) has no capability label")
            gv = gt.cell(g, j)
            pv = pred.cell(p, j) if p is not None else None
            hit = p is not None and cells_match(pv, gv)
            verdicts.append(CellVerdict(g, j, p, gv, pv, hit, label.category, label.sub))
            c.tp += hit
            if label.is_empty:
                c.dir_total += 1
                c.dir_tp += hit
                continue
            c.ind_total += 1
            c.ind_tp += hit
            bucket = c.category.setdefault(label.category.value, [0, 0])
            bucket[0] += hit
            bucket[1] += 1
            if label.sub is not None:
                bucket = c.sub.setdefault(label.sub.value, [0, 0])
                bucket[0] += hit
                bucket[1] += 1
    return ScoredCase(c, verdicts, alignment, case_id)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def rate(num: int, den: int) -> Optional[float]:
    return None if den == 0 else round(100.0 * num / den, 2)


def f1_score(p: Optional[float], r: Optional[float]) -> float:
    p, r = p or 0.0, r or 0.0
    return round(2 * p * r / (p + r), 2) if p + r > 0 else 0.0


def relative_drop(r_dir: Optional[float], r_ind: Optional[float]) -> Optional[float]:
    """Relative decline (in %) of indirect recall against direct recall."""
    if r_dir is None or r_ind is None or r_dir <= 0:
        return None
    return round((r_dir - r_ind) / r_dir * 100.0, 2)


@dataclass
class EvalReport:
    counts: Counts
    precision: Optional[float]
    recall: Optional[float]
    f1: float
    recall_direct: Optional[float]
    recall_indirect: Optional[float]
    delta_pct: Optional[float]
    cssr: dict[str, float]
    scssr: dict[str, float]
    cases: list[ScoredCase] = field(default_factory=list)

    def metrics_json(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "recall_direct": self.recall_direct,
            "recall_indirect": self.recall_indirect,
            "delta_pct": self.delta_pct,
            "cssr": self.cssr,
            "scssr": self.scssr,
        }

    def to_json(self, verdicts: bool = True) -> dict:
        out = {"metrics": self.metrics_json(), "counts": self.counts.to_json(), "cases": []}
        for sc in self.cases:
            case = {
                "case": sc.case_id,
                "counts": sc.counts.to_json(),
                "alignment": {
                    "pairs": [list(p) for p in sc.alignment.pairs],
                    "unmatched_pred": sorted(sc.alignment.unmatched_pred),
                    "unmatched_gt": sorted(sc.alignment.unmatched_gt),
                },
            }
            if verdicts:
                case["verdicts"] = [v.to_json() for v in sc.verdicts]
            out["cases"].append(case)
        return out


def metrics_from_counts(c: Counts, cases: Sequence[ScoredCase] = ()) -> EvalReport:
    p = rate(c.tp, c.pred_cells)
    r = rate(c.tp, c.gt_cells)
    r_dir = rate(c.dir_tp, c.dir_total)
    r_ind = rate(c.ind_tp, c.ind_total)
    # F1 and the drop use the rounded rates so they agree with what is printed.
    cat_order = [k.value for k in TAXONOMY]
    sub_order = [s.value for subs in TAXONOMY.values() for s in subs]
    cssr = {k: rate(*c.category[k]) for k in cat_order if k in c.category and c.category[k][1]}
    scssr = {k: rate(*c.sub[k]) for k in sub_order if k in c.sub and c.sub[k][1]}
    return EvalReport(c, p, r, f1_score(p, r), r_dir, r_ind, relative_drop(r_dir, r_ind), cssr, scssr, list(cases))


def compute_metrics(cases: Sequence[ScoredCase]) -> EvalReport:
    if not cases:
        raise ValueError("compute_metrics needs at least one scored case")
    total = Counts()
    for sc in cases:
        total += sc.counts
    return metrics_from_counts(total, cases)


def evaluate(pred: Table, gt: Table, matrix: CapabilityMatrix, cfg: AlignmentConfig = AlignmentConfig(),
             case_id: str = "") -> ScoredCase:
    return score_cells(align_rows(pred, gt, cfg), pred, gt, matrix, case_id)


# ---------------------------------------------------------------------------
# Corpus statistics
# ---------------------------------------------------------------------------


def _mmavg(values: Sequence[float]) -> tuple:
    return (min(values), max(values), sum(values) / len(values))


def corpus_stats(cases: Iterable) -> dict:
    """Min / max / mean of table rows, columns and document tokens, plus the
    share of cells carrying each capability label.

    Each case needs ``table``, ``matrix`` and ``token_count`` attributes
    (:class:`tabledoc.bundle.Case` has them).
    """
    cases = list(cases)
    if not cases:
        raise ValueError("corpus_stats needs at least one case")
    total_cells = 0
    cat_cells: dict[str, int] = defaultdict(int)
    sub_cells: dict[str, int] = defaultdict(int)
    for case in cases:
        for row in case.matrix.labels:
            for lab in row:
                total_cells += 1
                if lab is None:
                    continue
                cat_cells[lab.category.value] += 1
                if lab.sub is not None:
                    sub_cells[lab.sub.value] += 1
    return {
        "cases": len(cases),
        "rows": _mmavg([c.table.n for c in cases]),
        "columns": _mmavg([c.table.m for c in cases]),
        "tokens": _mmavg([c.token_count for c in cases]),
        "cells": total_cells,
        "category_share": {k: v / total_cells for k, v in sorted(cat_cells.items())},
        "sub_share": {k: v / total_cells for k, v in sorted(sub_cells.items())},
    }
