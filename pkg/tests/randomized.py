"""Seeded random prediction / ground-truth pairs for metric identity checks."""

from __future__ import annotations

import random

from tabledoc.model import (
    EMPTY_LABEL,
    AttributeSpec,
    CapabilityLabel,
    CapabilityMatrix,
    Schema,
    Sub,
    Table,
)

WORDS = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliett", "kilo", "lima", "mike", "november", "oscar", "papa",
]
SUBS = [s for s in Sub if s is not Sub.MISSING_VALUE_FAITHFULNESS]


def _value(rng: random.Random) -> str:
    kind = rng.randrange(3)
    if kind == 0:
        return str(rng.randrange(1000, 5_000_000))
    if kind == 1:
        return f"2025-{rng.randrange(1, 13):02d}-{rng.randrange(1, 29):02d}"
    return rng.choice(WORDS) + " " + rng.choice(WORDS)


def _variant(rng: random.Random, v: str) -> str:
    """A surface variant that still normalizes to the same value."""
    if v.isdigit() and len(v) > 3:
        return f"{int(v):,}"
    return rng.choice([v.upper(), f"  {v} ", v.title(), v + "."])


def _typo(rng: random.Random, key: str) -> str:
    k = rng.randrange(len(key))
    return key[:k] + key[k].upper() + key[k + 1:] if rng.random() < 0.5 else key + "."


def random_case(seed: int):
    """Returns (pred, gt, matrix). Keys of different entities stay far apart,
    so the optimal alignment is unique."""
    rng = random.Random(seed)
    n, m = rng.randint(1, 8), rng.randint(2, 5)
    schema = Schema("thing", (AttributeSpec("Key"),) + tuple(AttributeSpec(f"A{j}") for j in range(1, m)))
    keys = [f"{w}-{i:02d}" for i, w in enumerate(rng.sample(WORDS, n))]
    gt_rows, labels = [], []
    for key in keys:
        row, labs = [key], [EMPTY_LABEL]
        for _ in range(1, m):
            if rng.random() < 0.15:
                row.append(None)
                labs.append(CapabilityLabel.of(Sub.MISSING_VALUE_FAITHFULNESS))
            else:
                row.append(_value(rng))
                labs.append(EMPTY_LABEL if rng.random() < 0.5 else CapabilityLabel.of(rng.choice(SUBS)))
        gt_rows.append(tuple(row))
        labels.append(tuple(labs))
    gt = Table(schema, tuple(gt_rows)).check_keys()

    pred_rows = []
    for row in gt_rows:
        if rng.random() < 0.15:
            continue  # model missed the entity
        out = [_typo(rng, row[0]) if rng.random() < 0.3 else row[0]]
        for v in row[1:]:
            r = rng.random()
            if v is None:
                out.append(None if r < 0.6 else _value(rng))
            elif r < 0.55:
                out.append(v)
            elif r < 0.75:
                out.append(_variant(rng, v))
            elif r < 0.85:
                out.append(None)
            else:
                out.append(_value(rng))
        pred_rows.append(tuple(out))
    for k in range(rng.randrange(3)):
        pred_rows.append((f"zz-spurious-{seed}-{k}",) + tuple(_value(rng) for _ in range(1, m)))
    rng.shuffle(pred_rows)
    return Table(schema, tuple(pred_rows)), gt, CapabilityMatrix(tuple(labels))


def permuted(pred: Table, gt: Table, matrix: CapabilityMatrix, seed: int):
    rng = random.Random(seed)
    p_order = list(range(pred.n))
    g_order = list(range(gt.n))
    rng.shuffle(p_order)
    rng.shuffle(g_order)
    return (
        pred.with_rows([pred.rows[i] for i in p_order]),
        gt.with_rows([gt.rows[i] for i in g_order]),
        CapabilityMatrix(tuple(matrix.labels[i] for i in g_order)),
    )


def check_identities(rep, tol=0.005):
    """TP partition, bucket roll-up, rate values and the F1 harmonic mean."""
    c = rep.counts
    assert c.tp == c.dir_tp + c.ind_tp
    assert sum(v[0] for v in c.category.values()) == c.ind_tp
    assert sum(v[1] for v in c.category.values()) == c.ind_total
    for cat, (num, den) in c.category.items():
        subs = [v for k, v in c.sub.items() if Sub(k).category.value == cat]
        assert sum(v[0] for v in subs) == num and sum(v[1] for v in subs) == den
    for buckets, rates in ((c.category, rep.cssr), (c.sub, rep.scssr)):
        expected = {k: round(100 * n / d, 2) for k, (n, d) in buckets.items() if d}
        assert rates == expected
    if rep.precision and rep.recall:
        hm = 2 * rep.precision * rep.recall / (rep.precision + rep.recall)
        assert abs(rep.f1 - hm) <= tol
