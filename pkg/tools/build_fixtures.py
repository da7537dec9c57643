"""Regenerate the offline fixtures shipped in ``src/tabledoc/fixtures``.

Two small cases are scripted end to end:

* ``hospital``: a 4 x 4 patient table run through every synthesis step.
  It carries a NULL discharge date, a unit change, a sum and a date
  conflict settled by the discharge >= admission constraint.
* ``stock``: a 3 x 4 quote table that enters at planning with externally
  supplied, source-tagged conflicting evidence.

Run from the repository root::

    python3 tools/build_fixtures.py
"""

from __future__ import annotations

import json
import shutil
import sys
from pathlib import Path

from tabledoc.cli import dispatch
from tabledoc.model import canonical_evidence

ROOT = Path(__file__).resolve().parents[1] / "src" / "tabledoc" / "fixtures"


def dump(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def js(obj) -> str:
    return json.dumps(obj, ensure_ascii=False)


def markdown(columns, rows) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    lines += ["| " + " | ".join("NULL" if v is None else v for v in r) + " |" for r in rows]
    return "\n".join(lines)


PASS_EVIDENCE = js({
    "status": "PASS",
    "evaluation": {"value_correctness": True, "label_alignment": True, "schema_leakage": True},
    "feedback": {"fail_rationale": None, "revise_suggest": None},
})
PASS_SECTION = js({
    "verification_status": "PASS",
    "evaluation": {"faithful_grounding": True, "schema_leakage": True},
    "errors": [],
})
JUDGE = js({"lexical_richness": 4, "logical_consistency": 5, "textual_coherence": 4})


# ---------------------------------------------------------------------------
# hospital
# ---------------------------------------------------------------------------

HOSPITAL_SCHEMA = {
    "entity_type": "patient stay",
    "key_attribute_index": 0,
    "attributes": [
        {"name": "Patient", "description": "patient identifier", "data_type": "text"},
        {"name": "Admission_Date", "description": "day of admission", "data_type": "date", "format": "YYYY-MM-DD"},
        {"name": "Discharge_Date", "description": "day of discharge", "data_type": "date", "format": "YYYY-MM-DD"},
        {"name": "Billed_Amount_USD", "description": "total billed for the stay", "data_type": "integer", "unit": "USD"},
    ],
    "cross_constraints": [{"left": "Discharge_Date", "operator": ">=", "right": "Admission_Date"}],
    "resolution_rules": [],
}
HOSPITAL_COLUMNS = [a["name"] for a in HOSPITAL_SCHEMA["attributes"]]
HOSPITAL_ROWS = [
    ["P-01", "2025-06-14", "2025-06-20", "3480000"],
    ["P-02", "2025-03-02", "2025-03-09", "186992"],
    ["P-03", "2025-01-10", None, "5200"],
    ["P-04", "2025-02-01", "2025-02-05", "7100"],
]

# Cells that need more than copying, with the refiner's answer.
HOSPITAL_REFINED = {
    (0, 2): ("CR", "constraint_based_resolution", [
        "An early intake note lists a discharge date of 2025-06-10 for P-01,",
        "but the ward log, which starts with the admission on 2025-06-14, records P-01 leaving the hospital on 2025-06-20.",
    ]),
    (0, 3): ("TA", "unit_transformation", [
        "Charges for P-01 came to 3.48 million US dollars.",
    ]),
    (1, 3): ("RI", "arithmetic_reasoning", [
        "P-02 was billed a flat 23,374 US dollars per day for each of the 8 calendar days of the stay.",
    ]),
}


def hospital_evidence_ids():
    """Evidence ids in the order the pipeline assigns them (row-major, NULL skipped)."""
    ids = {}
    k = 0
    for i, row in enumerate(HOSPITAL_ROWS):
        for j, v in enumerate(row):
            if v is None:
                continue
            k += 1
            ids[(i, j)] = f"e{k}"
    return ids


def hospital_fragments(i, j):
    if (i, j) in HOSPITAL_REFINED:
        return HOSPITAL_REFINED[(i, j)][2]
    return [canonical_evidence(HOSPITAL_ROWS[i][0], HOSPITAL_COLUMNS[j], HOSPITAL_ROWS[i][j])]


def sentences(cells) -> str:
    parts = []
    for i, j in cells:
        text = " ".join(hospital_fragments(i, j))
        parts.append(text if text.endswith(".") else text + ".")
    return " ".join(parts)


def hospital_transcript():
    assignments = {}
    for i, row in enumerate(HOSPITAL_ROWS):
        labels = {}
        for j, v in enumerate(row):
            if v is None:
                labels[HOSPITAL_COLUMNS[j]] = "EF"
            else:
                labels[HOSPITAL_COLUMNS[j]] = HOSPITAL_REFINED.get((i, j), ("EMPTY",))[0]
        assignments[row[0]] = labels
    entries = [{"match": "### Role: capability annotator", "response": js({"assignments": assignments})}]
    for (i, j), (_, sub, frags) in sorted(HOSPITAL_REFINED.items()):
        cell = f"entity {HOSPITAL_ROWS[i][0]} / attribute {HOSPITAL_COLUMNS[j]}"
        entries.append({
            "match": f"### Role: evidence refiner*{cell}*",
            "response": js({"sub_capability": sub, "evidence": frags}),
        })
        entries.append({"match": "### Role: evidence verifier", "response": PASS_EVIDENCE})

    ids = hospital_evidence_ids()
    stay_cells = [(i, j) for (i, j) in ids if j < 3]
    bill_cells = [(i, j) for (i, j) in ids if j == 3]
    plan = {
        "document_type": "hospital discharge summary",
        "blueprint": [
            {"section_id": 1, "title": "Admissions and stays",
             "summary": "When each patient arrived and left.",
             "assigned_evidence_ids": [ids[c] for c in stay_cells]},
            {"section_id": 2, "title": "Billing",
             "summary": "What each stay was billed.",
             "assigned_evidence_ids": [ids[c] for c in bill_cells]},
        ],
    }
    entries.append({"match": "### Role: document planner", "response": js(plan)})

    stay_text = (
        "This summary covers four short-stay patients admitted during the first half of 2025. "
        + sentences(stay_cells)
        + " For P-03 the discharge paperwork was never filed, so no discharge day is on record."
    )
    bill_text = (
        "Billing closed once each stay ended. "
        + sentences(bill_cells)
    )
    for title, body in (("Admissions and stays", stay_text), ("Billing", bill_text)):
        entries.append({"match": f"### Role: section writer*{title}*", "response": body})
        entries.append({"match": "### Role: section verifier", "response": PASS_SECTION})
    entries.append({"match": "### Role: document quality judge", "response": JUDGE})
    return {"strict": True, "entries": entries}


def oracle_extractor(columns, rows):
    return {"strict": False, "entries": [
        {"match": "### Role: table extractor", "response": markdown(columns, rows)},
    ]}


# ---------------------------------------------------------------------------
# stock (fusion shortcut)
# ---------------------------------------------------------------------------

STOCK_SCHEMA = {
    "entity_type": "listed company",
    "key_attribute_index": 0,
    "attributes": [
        {"name": "Ticker", "description": "exchange ticker", "data_type": "text"},
        {"name": "Company", "description": "company name", "data_type": "text"},
        {"name": "Close_Price_USD", "description": "closing share price", "data_type": "decimal", "unit": "USD"},
        {"name": "Volume", "description": "shares traded on the day", "data_type": "integer"},
    ],
    "cross_constraints": [],
    "resolution_rules": [{"attribute": "Close_Price_USD", "kind": "latest_timestamp", "auxiliary": None}],
}
STOCK_COLUMNS = [a["name"] for a in STOCK_SCHEMA["attributes"]]
STOCK_ROWS = [
    ["ACME", "Acme Corp", "41.20", "1250000"],
    ["BOLT", "Bolt Industries", "18.75", "830000"],
    ["CRNX", "Cronex", "102.10", "2400000"],
]
STOCK_EVIDENCE = [
    {"id": "s1", "cell_ref": [0, 2], "sub_capability": "rule_based_resolution", "source_tag": "midday wire",
     "canonical_text": canonical_evidence("ACME", "Close_Price_USD", "41.20"),
     "fragments": ["At 11:30 a market wire quoted Acme Corp (ACME) at 40.85 USD a share."]},
    {"id": "s2", "cell_ref": [0, 2], "sub_capability": "rule_based_resolution", "source_tag": "closing print",
     "canonical_text": canonical_evidence("ACME", "Close_Price_USD", "41.20"),
     "fragments": ["The 16:00 closing print for ACME was 41.20 USD."]},
    {"id": "s3", "cell_ref": [1, 3], "sub_capability": "source_aware_resolution", "source_tag": "exchange filing",
     "canonical_text": canonical_evidence("BOLT", "Volume", "830000"),
     "fragments": ["The exchange's end-of-day filing counts 830,000 BOLT shares traded."]},
    {"id": "s4", "cell_ref": [1, 3], "sub_capability": "source_aware_resolution", "source_tag": "forum post",
     "canonical_text": canonical_evidence("BOLT", "Volume", "830000"),
     "fragments": ["An anonymous forum post put BOLT volume at about 1.2 million shares."]},
]


def stock_transcript():
    # ids the pipeline gives to cells without supplied evidence: e1.. in row-major order
    plain = [(i, j) for i in range(3) for j in range(4) if (i, j) not in {(0, 2), (1, 3)}]
    eids = {c: f"e{k}" for k, c in enumerate(plain, start=1)}
    section_cells = [
        ("Acme Corp", [c for c in plain if c[0] == 0], ["s1", "s2"]),
        ("Bolt Industries", [c for c in plain if c[0] == 1], ["s3", "s4"]),
        ("Cronex", [c for c in plain if c[0] == 2], []),
    ]
    plan = {"document_type": "market close note", "blueprint": []}
    entries = []
    bodies = []
    for k, (title, cells, extra) in enumerate(section_cells, start=1):
        ids = [eids[c] for c in cells] + extra
        plan["blueprint"].append({"section_id": k, "title": title, "summary": f"Trading in {title}.",
                                  "assigned_evidence_ids": ids})
        frags = [canonical_evidence(STOCK_ROWS[i][0], STOCK_COLUMNS[j], STOCK_ROWS[i][j]) + "." for i, j in cells]
        frags += [f for e in STOCK_EVIDENCE if e["id"] in extra for f in e["fragments"]]
        bodies.append((title, " ".join(frags)))
    entries.append({"match": "### Role: document planner", "response": js(plan)})
    for title, body in bodies:
        entries.append({"match": f"### Role: section writer*{title}*", "response": body})
        entries.append({"match": "### Role: section verifier", "response": PASS_SECTION})
    entries.append({"match": "### Role: document quality judge", "response": JUDGE})
    return {"strict": True, "entries": entries}


# ---------------------------------------------------------------------------


def write_case(name, schema, columns, rows, transcript, evidence=None):
    src = ROOT / name
    dump(schema, src / "schema.json")
    dump({"columns": columns, "rows": rows}, src / "table.json")
    dump(transcript, src / "transcript.json")
    dump(oracle_extractor(columns, rows), src / "oracle_extractor.json")
    if evidence is not None:
        dump(evidence, src / "evidence.json")
    out = ROOT / "cases" / name
    if out.exists():
        shutil.rmtree(out)
    argv = ["synth", "--schema", str(src / "schema.json"), "--table", str(src / "table.json"),
            "--out", str(out), "--backend", "scripted", "--transcript", str(src / "transcript.json"), "--judge"]
    if evidence is not None:
        argv += ["--evidence", str(src / "evidence.json")]
    code = dispatch(argv)
    if code != 0:
        sys.exit(f"synth failed for {name} (exit {code})")
    # Drop run-specific and resume-only files from the shipped bundle.
    for extra in ("run_log.json", "checkpoint.json", "sections.json", "evidence_status.json"):
        (out / extra).unlink(missing_ok=True)


def main():
    write_case("hospital", HOSPITAL_SCHEMA, HOSPITAL_COLUMNS, HOSPITAL_ROWS, hospital_transcript())
    write_case("stock", STOCK_SCHEMA, STOCK_COLUMNS, STOCK_ROWS, stock_transcript(), STOCK_EVIDENCE)
    print(f"fixtures written under {ROOT}")


if __name__ == "__main__":
    main()
