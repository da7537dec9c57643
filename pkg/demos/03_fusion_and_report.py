"""Multi-source evidence, then a cross-model summary from the command line.

The stock case enters the workflow at planning with conflicting quotes from
two sources, so the document has to carry both and a resolution rule decides
the truth. Two pretend models are then scored and the per-model summary is
printed as markdown.

    python demos/03_fusion_and_report.py
"""

import json
import tempfile
from importlib import resources
from pathlib import Path

from tabledoc import Agents, Gateway, ScriptedBackend, synthesize
from tabledoc.cli import dispatch
from tabledoc.serialize import evidence_from_json, load_json, load_schema, load_table

FIX = Path(str(resources.files("tabledoc") / "fixtures"))
work = Path(tempfile.mkdtemp())

schema = load_schema(FIX / "stock" / "schema.json")
table = load_table(FIX / "stock" / "table.json", schema)
external = evidence_from_json(load_json(FIX / "stock" / "evidence.json"), table)
print("Supplied evidence:")
for e in external:
    print(f"  [{e.id}] ({e.source_tag}) {' / '.join(e.fragments)}")

gw = Gateway(ScriptedBackend.from_file(FIX / "stock" / "transcript.json"))
result = synthesize(table, Agents(gw), out_dir=work / "stock", external_evidence=external)
print(f"\nAgent calls: {gw.stats.by_tag} (no annotation or refinement)")
print(result.document.assembled_text)

# Score an oracle and a sloppier model on the hospital case via the CLI.
case = FIX / "cases" / "hospital"
oracle = FIX / "hospital" / "oracle_extractor.json"
sloppy = json.loads(oracle.read_text())
sloppy["entries"][0]["response"] = sloppy["entries"][0]["response"].replace("3480000", "3.48").replace("NULL", "2025-01-20")
(work / "sloppy.json").write_text(json.dumps(sloppy))

for name, transcript in (("oracle", oracle), ("sloppy", work / "sloppy.json")):
    dispatch(["extract", "--backend", "scripted", "--transcript", str(transcript),
              "--case", str(case), "--model", name, "--out", str(work / f"{name}.pred.json")])
    dispatch(["eval", "--case", str(case), "--pred", str(work / f"{name}.pred.json"),
              "--out", str(work / "reports" / f"{name}.json")])

dispatch(["report", "--glob", str(work / "reports" / "*.json"), "--corpus", str(FIX / "cases" / "*"),
          "--out", str(work / "summary.md")])
print((work / "summary.md").read_text())
