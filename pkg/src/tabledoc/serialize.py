"""JSON / CSV encodings for schemas, tables, matrices, evidence and plans."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Optional

from .model import (
    AttributeSpec,
    CapabilityLabel,
    CapabilityMatrix,
    CrossConstraint,
    EvidenceItem,
    ModelError,
    ResolutionRule,
    Schema,
    Section,
    Sub,
    Table,
    WritingPlan,
)


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=False) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# -- schema ------------------------------------------------------------------


def schema_to_json(schema: Schema) -> dict:
    return {
        "entity_type": schema.entity_type,
        "key_attribute_index": schema.key_attribute_index,
        "attributes": [
            {
                "name": a.name,
                "description": a.description,
                "data_type": a.data_type.value,
                "unit": a.unit,
                "format": a.format,
                "constraints": list(a.constraints),
                "examples": list(a.examples),
            }
            for a in schema.attributes
        ],
        "cross_constraints": [
            {"left": c.left, "operator": c.operator, "right": c.right}
            for c in schema.cross_constraints
        ],
        "resolution_rules": [
            {"attribute": r.attribute, "kind": r.kind, "auxiliary": r.auxiliary}
            for r in schema.resolution_rules
        ],
    }


def schema_from_json(obj: dict) -> Schema:
    try:
        return Schema(
            entity_type=obj["entity_type"],
            attributes=tuple(
                AttributeSpec(
                    name=a["name"],
                    description=a.get("description", ""),
                    data_type=a.get("data_type", "text"),
                    unit=a.get("unit"),
                    format=a.get("format"),
                    constraints=tuple(a.get("constraints", ())),
                    examples=tuple(a.get("examples", ())),
                )
                for a in obj["attributes"]
            ),
            key_attribute_index=obj.get("key_attribute_index", 0),
            cross_constraints=tuple(
                CrossConstraint(c["left"], c["operator"], c["right"])
                for c in obj.get("cross_constraints", ())
            ),
            resolution_rules=tuple(
                ResolutionRule(r["attribute"], r["kind"], r.get("auxiliary"))
                for r in obj.get("resolution_rules", ())
            ),
        )
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed schema: {exc}") from exc


def load_schema(path) -> Schema:
    return schema_from_json(load_json(path))


# -- table -------------------------------------------------------------------


def table_to_json(table: Table) -> dict:
    out = {"columns": table.schema.names, "rows": [list(r) for r in table.rows]}
    if table.source_tags is not None:
        out["source_tags"] = [list(r) for r in table.source_tags]
    return out


def table_from_json(obj: dict, schema: Schema) -> Table:
    columns = obj.get("columns", schema.names)
    if list(columns) != schema.names:
        raise ModelError(f"table columns {columns} do not match schema {schema.names}")
    tags = obj.get("source_tags")
    return Table(
        schema,
        tuple(tuple(r) for r in obj["rows"]),
        tuple(tuple(t) for t in tags) if tags is not None else None,
    )


def table_to_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.schema.names)
    for r in table.rows:
        w.writerow(["" if v is None else v for v in r])
    return buf.getvalue()


def table_from_csv(text: str, schema: Schema) -> Table:
    """CSV with a header row; empty fields are NULL."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if [h.strip() for h in header] != schema.names:
        raise ModelError(f"CSV header {header} does not match schema {schema.names}")
    rows = [tuple(v if v != "" else None for v in r) for r in reader if r]
    return Table(schema, tuple(rows))


def load_table(path, schema: Schema, ground_truth: bool = True) -> Table:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        table = table_from_csv(path.read_text(encoding="utf-8"), schema)
    else:
        table = table_from_json(load_json(path), schema)
    return table.check_keys() if ground_truth else table


# -- capability matrix ---------------------------------------------------------


def matrix_to_json(matrix: CapabilityMatrix) -> dict:
    return {
        "labels": [
            [lab.to_json() if lab is not None else None for lab in row] for row in matrix.labels
        ]
    }


def matrix_from_json(obj: dict) -> CapabilityMatrix:
    return CapabilityMatrix(
        tuple(
            tuple(CapabilityLabel.from_json(lab) if lab is not None else None for lab in row)
            for row in obj["labels"]
        )
    )


# -- evidence ------------------------------------------------------------------


def evidence_to_json(items) -> list:
    return [
        {
            "id": e.id,
            "cell_ref": list(e.cell_ref),
            "canonical_text": e.canonical_text,
            "sub_capability": e.sub_capability.value if e.sub_capability else None,
            "fragments": list(e.fragments),
            "source_tag": e.source_tag,
        }
        for e in items
    ]


def evidence_from_json(obj: list, table: Optional[Table] = None) -> list[EvidenceItem]:
    items = []
    seen = set()
    for raw in obj:
        sub = raw.get("sub_capability")
        item = EvidenceItem(
            id=str(raw["id"]),
            cell_ref=tuple(raw["cell_ref"]),
            canonical_text=raw.get("canonical_text", ""),
            fragments=tuple(raw["fragments"]),
            sub_capability=Sub(sub) if sub else None,
            source_tag=raw.get("source_tag"),
        )
        if item.id in seen:
            raise ModelError(f"duplicate evidence id {item.id}")
        seen.add(item.id)
        if table is not None:
            i, j = item.cell_ref
            if not (0 <= i < table.n and 0 <= j < table.m):
                raise ModelError(f"evidence {item.id} points outside the table")
        items.append(item)
    return items


# -- plan ------------------------------------------------------------------------


def plan_to_json(plan: WritingPlan) -> dict:
    return {
        "document_type": plan.document_type,
        "blueprint": [
            {
                "section_id": k + 1,
                "title": s.title,
                "summary": s.summary,
                "assigned_evidence_ids": list(s.assigned_evidence_ids),
            }
            for k, s in enumerate(plan.sections)
        ],
    }


def plan_from_json(obj: dict) -> WritingPlan:
    return WritingPlan(
        obj["document_type"],
        tuple(
            Section(s["title"], s.get("summary", ""), tuple(s["assigned_evidence_ids"]))
            for s in obj["blueprint"]
        ),
    )
