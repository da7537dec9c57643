"""Case bundle directories and their deterministic validation.

A bundle holds ``schema.json``, ``table.json``, ``capability_matrix.json``,
``evidence.json``, ``plan.json``, ``document.md`` and ``provenance.json``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .model import CapabilityMatrix, EvidenceItem, ModelError, Schema, Table, WritingPlan, count_tokens
from .serialize import (
    evidence_from_json,
    load_json,
    load_schema,
    load_table,
    matrix_from_json,
    plan_from_json,
)

BUNDLE_FILES = (
    "schema.json",
    "table.json",
    "capability_matrix.json",
    "evidence.json",
    "plan.json",
    "document.md",
    "provenance.json",
)


@dataclass
class Case:
    path: Path
    schema: Schema
    table: Table
    matrix: CapabilityMatrix
    evidence: list[EvidenceItem]
    plan: WritingPlan
    document: str
    provenance: dict

    @property
    def case_id(self) -> str:
        return self.path.name

    @property
    def token_count(self) -> int:
        return count_tokens(self.document)


def load_case(path) -> Case:
    path = Path(path)
    schema = load_schema(path / "schema.json")
    table = load_table(path / "table.json", schema)
    return Case(
        path=path,
        schema=schema,
        table=table,
        matrix=matrix_from_json(load_json(path / "capability_matrix.json")),
        evidence=evidence_from_json(load_json(path / "evidence.json"), table),
        plan=plan_from_json(load_json(path / "plan.json")),
        document=(path / "document.md").read_text(encoding="utf-8"),
        provenance=load_json(path / "provenance.json"),
    )


def load_case_table(path) -> tuple[Schema, Table, CapabilityMatrix]:
    """The parts of a bundle evaluation needs."""
    path = Path(path)
    schema = load_schema(path / "schema.json")
    table = load_table(path / "table.json", schema)
    return schema, table, matrix_from_json(load_json(path / "capability_matrix.json"))


def validate_case(path) -> list[str]:
    """Re-run the deterministic bundle checks; returns human-readable violations."""
    path = Path(path)
    problems = [f"missing file: {name}" for name in BUNDLE_FILES if not (path / name).exists()]
    if problems:
        return problems
    try:
        case = load_case(path)
    except (ModelError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        return [f"unparseable bundle: {exc}"]

    table, matrix = case.table, case.matrix
    if matrix.shape != table.shape:
        return [f"matrix shape {matrix.shape} differs from table shape {table.shape}"]
    for i, j in matrix.holes():
        problems.append(f"matrix: cell ({i},{j}) has no capability label")
    for i, row in enumerate(matrix.labels):
        for j, lab in enumerate(row):
            if lab is not None and not lab.is_refined:
                problems.append(f"matrix: cell ({i},{j}) has no sub-capability")

    known = {e.id for e in case.evidence}
    assigned = set()
    for k, s in enumerate(case.plan.sections, start=1):
        for eid in s.assigned_evidence_ids:
            if eid not in known:
                problems.append(f"plan: section {k} references unknown evidence {eid}")
            assigned.add(eid)
    for eid in sorted(known - assigned):
        problems.append(f"plan coverage: evidence {eid} is not assigned to any section")

    covered = set()
    for e in case.evidence:
        i, j = e.cell_ref
        if table.cell(i, j) is None:
            problems.append(f"evidence {e.id} belongs to NULL cell ({i},{j})")
            continue
        covered.add((i, j))
        absent = [f for f in e.fragments if f not in case.document]
        if absent:
            problems.append(f"completeness: evidence {e.id} fragment missing from document: {absent[0]!r}")
    for i, j, v in table.cells():
        if v is not None and (i, j) not in covered:
            problems.append(f"completeness: cell ({i},{j}) has no evidence")

    prov = case.provenance.get("evidence_sections", {})
    for eid in sorted(known - set(prov)):
        problems.append(f"provenance: evidence {eid} missing")
    return problems


def find_cases(root) -> list[Path]:
    root = Path(root)
    return sorted(p.parent for p in root.rglob("provenance.json"))
