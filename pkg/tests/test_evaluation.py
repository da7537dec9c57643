from types import SimpleNamespace

import pytest

from randomized import check_identities, permuted, random_case
from tabledoc.evaluation import (
    AlignmentConfig,
    Counts,
    align_rows,
    compute_metrics,
    corpus_stats,
    evaluate,
    f1_score,
    metrics_from_counts,
    relative_drop,
    score_cells,
)
from tabledoc.model import (
    EMPTY_LABEL,
    AttributeSpec,
    CapabilityLabel,
    CapabilityMatrix,
    ModelError,
    Schema,
    Sub,
    Table,
)

EF = CapabilityLabel.of(Sub.MISSING_VALUE_FAITHFULNESS)
TA = CapabilityLabel.of(Sub.UNIT_TRANSFORMATION)


@pytest.fixture
def schema():
    return Schema("company", (AttributeSpec("Name"), AttributeSpec("Revenue"), AttributeSpec("CEO")))


def table(schema, *rows):
    return Table(schema, tuple(rows))


class TestCellVerdicts:
    def test_null_vs_null_credits_faithfulness(self, schema):
        gt = table(schema, ("Acme", "3480000", None))
        pred = table(schema, ("Acme", "3480000", "NULL"))
        matrix = CapabilityMatrix(((EMPTY_LABEL, TA, EF),))
        sc = evaluate(pred, gt, matrix)
        assert sc.counts.tp == 3
        assert sc.counts.sub["missing_value_faithfulness"] == [1, 1]

    def test_formatting_is_normalized(self, schema):
        gt = table(schema, ("Acme", "3480000", "Ann Lee"))
        pred = table(schema, ("ACME", "3,480,000", "ann lee."))
        assert evaluate(pred, gt, CapabilityMatrix(((EMPTY_LABEL,) * 3,))).counts.tp == 3

    def test_wrong_scale_is_a_miss(self, schema):
        gt = table(schema, ("Acme", "3480000", "x"))
        pred = table(schema, ("Acme", "3480", "x"))
        sc = evaluate(pred, gt, CapabilityMatrix(((EMPTY_LABEL, TA, EMPTY_LABEL),)))
        assert sc.counts.sub["unit_transformation"] == [0, 1]
        assert [v.match for v in sc.verdicts] == [True, False, True]

    def test_fabricated_value_misses_null(self, schema):
        gt = table(schema, ("Acme", "1", None))
        pred = table(schema, ("Acme", "1", "Bob"))
        sc = evaluate(pred, gt, CapabilityMatrix(((EMPTY_LABEL, EMPTY_LABEL, EF),)))
        assert sc.counts.sub["missing_value_faithfulness"] == [0, 1]

    def test_unmatched_rows(self, schema):
        gt = table(schema, ("Acme", "1", "a"), ("Bolt", "2", "b"))
        pred = table(schema, ("Acme", "1", "a"), ("Zephyr Holdings", "9", "z"), ("Quasar", "8", "q"))
        matrix = CapabilityMatrix(((EMPTY_LABEL,) * 3, (EMPTY_LABEL, TA, EMPTY_LABEL)))
        sc = evaluate(pred, gt, matrix)
        assert sc.alignment.unmatched_gt == {1}
        assert sc.alignment.unmatched_pred == {1, 2}
        c = sc.counts
        assert (c.tp, c.pred_cells, c.gt_cells) == (3, 9, 6)
        assert c.sub["unit_transformation"] == [0, 1]  # unmatched gt cell is a miss in its bucket
        assert (c.dir_tp, c.dir_total, c.ind_tp, c.ind_total) == (3, 5, 0, 1)

    def test_schema_mismatch(self, schema):
        other = Schema("company", (AttributeSpec("Name"), AttributeSpec("CEO"), AttributeSpec("Revenue")))
        with pytest.raises(ModelError):
            align_rows(table(other, ("a", "b", "c")), table(schema, ("a", "b", "c")))

    def test_matrix_shape_checked(self, schema):
        gt = table(schema, ("a", "1", "2"))
        with pytest.raises(ModelError):
            evaluate(gt, gt, CapabilityMatrix(((EMPTY_LABEL,) * 2,)))

    def test_identity_alignment(self, schema):
        gt = table(schema, ("a", "1", "2"), ("b", "1", "2"), ("c", "1", "2"))
        al = align_rows(gt, gt)
        assert [(p, g, s) for p, g, s in al.pairs] == [(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]

    def test_empty_prediction(self, schema):
        gt = table(schema, ("a", "1", "2"))
        sc = evaluate(table(schema), gt, CapabilityMatrix(((EMPTY_LABEL,) * 3,)))
        assert sc.counts.tp == 0 and sc.counts.pred_cells == 0
        rep = compute_metrics([sc])
        assert rep.precision is None and rep.recall == 0.0 and rep.f1 == 0.0

    def test_null_pred_key_never_aligns(self, schema):
        gt = table(schema, ("null", "1", "2"))
        pred = table(schema, (None, "1", "2"))
        assert align_rows(pred, gt).pairs == ()


class TestMetrics:
    @pytest.mark.parametrize("p,r,f1", [(88.53, 83.59, 85.99), (90.46, 88.24, 89.34), (0, 0, 0)])
    def test_f1(self, p, r, f1):
        assert f1_score(p, r) == pytest.approx(f1, abs=0.01)

    def test_drop(self):
        assert relative_drop(95.93, 80.90) == 15.67
        assert relative_drop(0, 10) is None and relative_drop(None, 1) is None

    def test_perfect(self):
        reports = []
        for seed in range(5):
            _, gt, matrix = random_case(seed)
            reports.append(evaluate(gt, gt, matrix))
        rep = compute_metrics(reports)
        assert (rep.precision, rep.recall, rep.f1, rep.recall_direct) == (100.0, 100.0, 100.0, 100.0)
        assert rep.recall_indirect in (None, 100.0) and rep.delta_pct in (None, 0.0)
        assert all(v == 100.0 for v in list(rep.cssr.values()) + list(rep.scssr.values()))

    def test_absent_buckets(self, schema):
        gt = table(schema, ("a", "1", "2"))
        rep = compute_metrics([evaluate(gt, gt, CapabilityMatrix(((EMPTY_LABEL, TA, EMPTY_LABEL),)))])
        assert rep.cssr == {"TA": 100.0} and rep.scssr == {"unit_transformation": 100.0}

    def test_micro_average(self, schema):
        a = Counts(tp=1, pred_cells=4, gt_cells=2, dir_tp=1, dir_total=2)
        b = Counts(tp=5, pred_cells=6, gt_cells=8, dir_tp=5, dir_total=8)
        total = Counts()
        total += a
        total += b
        rep = metrics_from_counts(total)
        assert rep.precision == 60.0 and rep.recall == 60.0

    def test_counts_json_round_trip(self):
        pred, gt, matrix = random_case(3)
        c = evaluate(pred, gt, matrix).counts
        assert Counts.from_json(c.to_json()) == c

    def test_report_json(self):
        pred, gt, matrix = random_case(5)
        rep = compute_metrics([evaluate(pred, gt, matrix, case_id="c5")])
        obj = rep.to_json()
        assert set(obj) == {"metrics", "counts", "cases"}
        assert obj["cases"][0]["case"] == "c5" and len(obj["cases"][0]["verdicts"]) == gt.n * gt.m
        assert "verdicts" not in rep.to_json(verdicts=False)["cases"][0]


@pytest.mark.parametrize("seed", range(40))
def test_metric_identities(seed):
    pred, gt, matrix = random_case(seed)
    check_identities(compute_metrics([evaluate(pred, gt, matrix)]))


@pytest.mark.parametrize("seed", range(40))
def test_tau_monotone(seed):
    pred, gt, matrix = random_case(seed)
    sizes = [len(align_rows(pred, gt, AlignmentConfig(tau=t)).pairs) for t in (0.0, 0.3, 0.6, 0.85, 0.95, 1.0)]
    assert sizes == sorted(sizes, reverse=True)


@pytest.mark.parametrize("seed", range(40))
def test_permutation_invariance(seed):
    pred, gt, matrix = random_case(seed)
    base = evaluate(pred, gt, matrix).counts
    assert evaluate(*permuted(pred, gt, matrix, seed + 100)).counts == base


def test_score_cells_requires_labels(schema):
    gt = table(schema, ("a", "1", "2"))
    with pytest.raises(ModelError):
        score_cells(align_rows(gt, gt), gt, gt, CapabilityMatrix.blank(1, 3))


class TestCorpusStats:
    def case(self, n, m, tokens, label=EMPTY_LABEL):
        s = Schema("x", tuple(AttributeSpec(f"A{j}") for j in range(m)))
        t = Table(s, tuple((f"k{i}",) + ("v",) * (m - 1) for i in range(n)))
        return SimpleNamespace(table=t, matrix=CapabilityMatrix(((label,) * m,) * n), token_count=tokens)

    def test_single(self):
        out = corpus_stats([self.case(3, 2, 500)])
        assert out["rows"] == (3, 3, 3.0) and out["columns"] == (2, 2, 2.0) and out["tokens"] == (500, 500, 500.0)

    def test_two_cases(self):
        out = corpus_stats([self.case(3, 2, 100), self.case(5, 4, 301, TA)])
        assert out["rows"] == (3, 5, 4.0) and out["columns"] == (2, 4, 3.0) and out["tokens"] == (100, 301, 200.5)
        assert out["cells"] == 26
        assert out["category_share"] == {"EMPTY": 6 / 26, "TA": 20 / 26}
        assert out["sub_share"] == {"unit_transformation": 20 / 26}

    def test_needs_cases(self):
        with pytest.raises(ValueError):
            corpus_stats([])
