"""How a flawed prediction is scored, cell by cell.

The prediction below gets the billing scale wrong, invents a discharge date
for the patient who has none, misspells one identifier and adds a patient that
does not exist. The output shows which cells fail and how that moves recall on
directly stated cells versus cells that needed some reasoning.

    python demos/02_scoring_walkthrough.py
"""

from importlib import resources
from pathlib import Path

from tabledoc import AlignmentConfig, align_rows, compute_metrics, evaluate, load_case, normalize_cell
from tabledoc.evaluation import f1_score, relative_drop
from tabledoc.model import Table

case = load_case(Path(str(resources.files("tabledoc") / "fixtures" / "cases" / "hospital")))
gt = case.table

print("Normalization makes surface variants comparable:")
for raw in ["  P-01 ", "3,480,000", "N/A", "2025-06-20", "Ann Lee."]:
    print(f"  {raw!r:14} -> {normalize_cell(raw)!r}")

pred = Table(gt.schema, (
    ("P-O1", "2025-06-14", "2025-06-20", "3480"),       # letter O in the key, wrong scale
    ("P-02", "2025-03-02", "2025-03-09", "186,992"),
    ("P-03", "2025-01-10", "2025-01-15", "5200"),       # fabricated date
    ("P-04", "2025-02-01", "2025-02-05", "7100"),
    ("P-99", "2025-04-01", "2025-04-03", "900"),        # not in the table
))

for tau in (0.85, 0.6):
    al = align_rows(pred, gt, AlignmentConfig(tau=tau))
    print(f"\ntau={tau}: aligned {[(pred.rows[p][0], gt.rows[g][0], round(s, 2)) for p, g, s in al.pairs]}")

scored = evaluate(pred, gt, case.matrix, AlignmentConfig(tau=0.6))
print("\nMissed cells:")
for v in scored.verdicts:
    if not v.match:
        label = v.sub.value if v.sub else v.category.value
        print(f"  row {gt.rows[v.gt_row][0]} / {gt.schema.names[v.col]} [{label}]: "
              f"expected {v.gt_value!r}, got {v.pred_value!r}")

m = compute_metrics([scored]).metrics_json()
print(f"\nP={m['precision']} R={m['recall']} F1={m['f1']}")
print(f"R_dir={m['recall_direct']} R_ind={m['recall_indirect']} drop={m['delta_pct']}%")
print(f"SCSSR={m['scssr']}")

# The same formulas applied to a published result row.
print(f"\nF1(88.53, 83.59) = {f1_score(88.53, 83.59)}; drop(95.93 -> 80.90) = {relative_drop(95.93, 80.90)}%")
