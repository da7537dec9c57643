"""Walk one case through the whole loop without a network.

A four-patient hospital table is turned into a discharge-style document by the
scripted agents, the bundle is re-checked, and an "oracle" extractor whose
canned reply is the ground truth reads it back. Every score should be 100.

    python demos/01_offline_pipeline.py
"""

import tempfile
from importlib import resources
from pathlib import Path

from tabledoc import (
    Agents,
    ExtractionConfig,
    Gateway,
    ScriptedBackend,
    compute_metrics,
    evaluate,
    load_case,
    render_markdown,
    run_extraction,
    synthesize,
    validate_case,
)
from tabledoc.serialize import load_schema, load_table

FIX = Path(str(resources.files("tabledoc") / "fixtures" / "hospital"))

schema = load_schema(FIX / "schema.json")
table = load_table(FIX / "table.json", schema)
print("Ground truth:\n")
print(render_markdown(table))

# Every agent call is answered from a recorded transcript, in order.
gateway = Gateway(ScriptedBackend.from_file(FIX / "transcript.json"))
out = Path(tempfile.mkdtemp()) / "hospital"
result = synthesize(table, Agents(gateway), out_dir=out, judge=True)

print("\nCapability labels (refined):")
for i, j, _ in table.cells():
    label = result.matrix[i, j]
    if not label.is_empty:
        print(f"  {table.entity(i)} / {schema.names[j]}: {label.category.value} -> {label.sub.value}")

print(f"\nPlan: {result.plan.document_type!r} with sections {[s.title for s in result.plan.sections]}")
print(f"Agent calls by role: {gateway.stats.by_tag}")
print(f"Judge scores: {result.quality.to_json()}")
print(f"\nDocument ({result.document.token_count} tokens):\n")
print(result.document.assembled_text)

problems = validate_case(out)
print(f"validate: {'ok' if not problems else problems}")

case = load_case(out)
oracle = Gateway(ScriptedBackend.from_file(FIX / "oracle_extractor.json"))
pred = run_extraction(case.document, case.schema, ExtractionConfig("oracle"), oracle)
report = compute_metrics([evaluate(pred.table, case.table, case.matrix, case_id="hospital")])
m = report.metrics_json()
print(f"\nP={m['precision']} R={m['recall']} F1={m['f1']}")
print(f"CSSR={m['cssr']}")
print(f"bundle written to {out}")
