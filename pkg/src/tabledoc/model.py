"""Typed data model for schemas, tables, capability labels, evidence and documents.

All values are frozen dataclasses. Tables store cells as ``Optional[str]``
where ``None`` is a NULL cell.
"""

from __future__ import annotations

import enum
import math
import random
import re
import unicodedata
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence


class ModelError(ValueError):
    """Raised when a value violates a data-model invariant."""


# ---------------------------------------------------------------------------
# Capability taxonomy
# ---------------------------------------------------------------------------


class Category(str, enum.Enum):
    TA = "TA"
    RI = "RI"
    DR = "DR"
    EF = "EF"
    CR = "CR"
    EMPTY = "EMPTY"

    @property
    def title(self) -> str:
        return CATEGORY_TITLES[self]


class Sub(str, enum.Enum):
    FORMAT_TRANSFORMATION = "format_transformation"
    UNIT_TRANSFORMATION = "unit_transformation"
    SEMANTIC_MAPPING = "semantic_mapping"
    ARITHMETIC_REASONING = "arithmetic_reasoning"
    LOGICAL_REASONING = "logical_reasoning"
    TEMPORAL_REASONING = "temporal_reasoning"
    MULTIHOP_REASONING = "multihop_reasoning"
    ATTRIBUTE_DISTRACTION = "attribute_distraction"
    VALUE_DISTRACTION = "value_distraction"
    MISSING_VALUE_FAITHFULNESS = "missing_value_faithfulness"
    RULE_BASED_RESOLUTION = "rule_based_resolution"
    CONSTRAINT_BASED_RESOLUTION = "constraint_based_resolution"
    SOURCE_AWARE_RESOLUTION = "source_aware_resolution"

    @property
    def category(self) -> Category:
        return SUB_TO_CATEGORY[self]

    @property
    def title(self) -> str:
        return self.value.replace("_", " ").replace("multihop", "multi-hop").title()


CATEGORY_TITLES = {
    Category.TA: "Transformative Alignment",
    Category.RI: "Reasoning & Inference",
    Category.DR: "Distractor Robustness",
    Category.EF: "Evidence Faithfulness",
    Category.CR: "Conflict Resolution",
    Category.EMPTY: "Direct Extraction",
}

TAXONOMY: dict[Category, tuple[Sub, ...]] = {
    Category.TA: (Sub.FORMAT_TRANSFORMATION, Sub.UNIT_TRANSFORMATION, Sub.SEMANTIC_MAPPING),
    Category.RI: (
        Sub.ARITHMETIC_REASONING,
        Sub.LOGICAL_REASONING,
        Sub.TEMPORAL_REASONING,
        Sub.MULTIHOP_REASONING,
    ),
    Category.DR: (Sub.ATTRIBUTE_DISTRACTION, Sub.VALUE_DISTRACTION),
    Category.EF: (Sub.MISSING_VALUE_FAITHFULNESS,),
    Category.CR: (
        Sub.RULE_BASED_RESOLUTION,
        Sub.CONSTRAINT_BASED_RESOLUTION,
        Sub.SOURCE_AWARE_RESOLUTION,
    ),
}

SUB_TO_CATEGORY = {sub: cat for cat, subs in TAXONOMY.items() for sub in subs}

# Short definitions rendered into the annotator / refiner prompts.
CATEGORY_DEFINITIONS = {
    Category.TA: "the document states the value in a different format, unit or "
    "vocabulary than the schema requires; it must be converted",
    Category.RI: "the value is never stated outright and has to be computed or "
    "inferred from one or more other statements",
    Category.DR: "the document also mentions similar attributes or superseded "
    "candidate values that must be ignored",
    Category.EF: "the document gives no support for the value, so the only "
    "faithful output is NULL",
    Category.CR: "the document contains conflicting candidate values and one must "
    "be selected by a rule, a constraint or source reliability",
}

SUB_DEFINITIONS = {
    Sub.FORMAT_TRANSFORMATION: "value written in another format (e.g. a date spelled out) and must be reformatted",
    Sub.UNIT_TRANSFORMATION: "value given in another unit or scale and must be converted",
    Sub.SEMANTIC_MAPPING: "value expressed as a related concept that maps to the schema's canonical form",
    Sub.ARITHMETIC_REASONING: "value must be computed from several stated numbers",
    Sub.LOGICAL_REASONING: "value follows from stated logical conditions",
    Sub.TEMPORAL_REASONING: "value follows from temporal relations between events",
    Sub.MULTIHOP_REASONING: "value requires chaining evidence scattered across the document",
    Sub.ATTRIBUTE_DISTRACTION: "a similar-looking attribute is mentioned nearby and must not be confused",
    Sub.VALUE_DISTRACTION: "outdated or superseded values for the same attribute are mentioned",
    Sub.MISSING_VALUE_FAITHFULNESS: "the value is absent from the document; the answer is NULL",
    Sub.RULE_BASED_RESOLUTION: "conflicting values resolved by an explicit rule given in the schema",
    Sub.CONSTRAINT_BASED_RESOLUTION: "conflicting values resolved by an implicit cross-attribute constraint",
    Sub.SOURCE_AWARE_RESOLUTION: "conflicting values from several sources resolved by source reliability",
}

_CATEGORY_ALIASES = {
    **{c.value.lower(): c for c in Category},
    **{t.lower(): c for c, t in CATEGORY_TITLES.items()},
    "reasoning and inference": Category.RI,
    "empty": Category.EMPTY,
    "none": Category.EMPTY,
    "direct": Category.EMPTY,
    "": Category.EMPTY,
}


def parse_category(text) -> Optional[Category]:
    """Lenient lookup of a category code or title; ``None`` if unknown."""
    if text is None:
        return None
    if isinstance(text, Category):
        return text
    if not isinstance(text, str):
        return None
    key = " ".join(text.strip().split()).lower()
    return _CATEGORY_ALIASES.get(key)


def parse_sub(text) -> Optional[Sub]:
    if isinstance(text, Sub):
        return text
    if not isinstance(text, str):
        return None
    key = re.sub(r"[\s\-]+", "_", text.strip().lower())
    key = key.replace("multi_hop", "multihop")
    try:
        return Sub(key)
    except ValueError:
        return None


@dataclass(frozen=True)
class CapabilityLabel:
    """A cell's capability label.

    ``sub`` is ``None`` for EMPTY and for coarse (not yet refined) labels.
    When present it must belong to ``category``.
    """

    category: Category
    sub: Optional[Sub] = None

    def __post_init__(self):
        if not isinstance(self.category, Category):
            raise ModelError(f"bad category {self.category!r}")
        if self.sub is not None:
            if not isinstance(self.sub, Sub):
                raise ModelError(f"bad sub-capability {self.sub!r}")
            if self.category is Category.EMPTY or SUB_TO_CATEGORY[self.sub] is not self.category:
                raise ModelError(
                    f"sub-capability {self.sub.value} does not belong to {self.category.value}"
                )

    @property
    def is_empty(self) -> bool:
        return self.category is Category.EMPTY

    @property
    def is_refined(self) -> bool:
        return self.is_empty or self.sub is not None

    @classmethod
    def of(cls, sub: Sub) -> "CapabilityLabel":
        return cls(SUB_TO_CATEGORY[sub], sub)

    def to_json(self):
        return {"category": self.category.value, "sub": self.sub.value if self.sub else None}

    @classmethod
    def from_json(cls, obj) -> "CapabilityLabel":
        sub = obj.get("sub")
        return cls(Category(obj["category"]), Sub(sub) if sub else None)


EMPTY_LABEL = CapabilityLabel(Category.EMPTY)


# ---------------------------------------------------------------------------
# Schema and table
# ---------------------------------------------------------------------------


class DataType(str, enum.Enum):
    TEXT = "text"
    INTEGER = "integer"
    DECIMAL = "decimal"
    DATE = "date"
    ENUM = "enum"
    BOOLEAN = "boolean"


_COMPARABLE = {
    DataType.INTEGER: "number",
    DataType.DECIMAL: "number",
    DataType.DATE: "date",
    DataType.TEXT: "text",
    DataType.ENUM: "text",
    DataType.BOOLEAN: "boolean",
}

OPERATORS = ("<", "<=", "=", ">=", ">")
_OPERATOR_ALIASES = {"≤": "<=", "≥": ">=", "==": "="}

RULE_KINDS = ("latest_timestamp", "highest_precision", "max", "min")


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    description: str = ""
    data_type: DataType = DataType.TEXT
    unit: Optional[str] = None
    format: Optional[str] = None
    constraints: tuple[str, ...] = ()
    examples: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name or not self.name.strip():
            raise ModelError("attribute name must be nonempty")
        object.__setattr__(self, "data_type", DataType(self.data_type))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "examples", tuple(self.examples))
        if self.data_type is DataType.ENUM and not self.constraints:
            raise ModelError(f"enum attribute {self.name} needs allowed values in constraints")


@dataclass(frozen=True)
class CrossConstraint:
    """Binary comparison between two attributes, e.g. discharge >= admission."""

    left: str
    operator: str
    right: str

    def __post_init__(self):
        op = _OPERATOR_ALIASES.get(self.operator, self.operator)
        if op not in OPERATORS:
            raise ModelError(f"unknown operator {self.operator!r}")
        object.__setattr__(self, "operator", op)

    def __str__(self):
        return f"{self.left} {self.operator} {self.right}"


@dataclass(frozen=True)
class ResolutionRule:
    attribute: str
    kind: str
    auxiliary: Optional[str] = None

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ModelError(f"unknown resolution rule kind {self.kind!r}")

    def __str__(self):
        text = f"{self.attribute}: resolve conflicts by {self.kind.replace('_', ' ')}"
        if self.auxiliary:
            text += f" (using {self.auxiliary})"
        return text


@dataclass(frozen=True)
class Schema:
    entity_type: str
    attributes: tuple[AttributeSpec, ...]
    key_attribute_index: int = 0
    cross_constraints: tuple[CrossConstraint, ...] = ()
    resolution_rules: tuple[ResolutionRule, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "cross_constraints", tuple(self.cross_constraints))
        object.__setattr__(self, "resolution_rules", tuple(self.resolution_rules))
        if not self.attributes:
            raise ModelError("schema needs at least one attribute")
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ModelError(f"duplicate attribute names in {names}")
        if not 0 <= self.key_attribute_index < len(self.attributes):
            raise ModelError("key_attribute_index out of range")
        if self.key.data_type is not DataType.TEXT:
            raise ModelError("key attribute must be of type text")
        by_name = {a.name: a for a in self.attributes}
        for c in self.cross_constraints:
            if c.left not in by_name or c.right not in by_name:
                raise ModelError(f"constraint {c} references unknown attribute")
            if _COMPARABLE[by_name[c.left].data_type] != _COMPARABLE[by_name[c.right].data_type]:
                raise ModelError(f"constraint {c} compares incompatible types")
        for r in self.resolution_rules:
            if r.attribute not in by_name or (r.auxiliary and r.auxiliary not in by_name):
                raise ModelError(f"rule {r} references unknown attribute")

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def key(self) -> AttributeSpec:
        return self.attributes[self.key_attribute_index]

    @property
    def m(self) -> int:
        return len(self.attributes)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class Table:
    """Ordered tuples aligned to ``schema.attributes``.

    Construction only checks arity. Ground-truth tables additionally call
    :meth:`check_keys`; predicted tables may carry NULL or duplicate keys.
    """

    schema: Schema
    rows: tuple[tuple[Optional[str], ...], ...]
    source_tags: Optional[tuple[tuple[Optional[str], ...], ...]] = None

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        for i, r in enumerate(rows):
            if len(r) != self.schema.m:
                raise ModelError(f"row {i} has {len(r)} cells, schema has {self.schema.m}")
            for v in r:
                if v is not None and not isinstance(v, str):
                    raise ModelError(f"cell values must be strings or None, got {v!r}")
        if self.source_tags is not None:
            tags = tuple(tuple(t) for t in self.source_tags)
            if len(tags) != len(rows) or any(len(t) != self.schema.m for t in tags):
                raise ModelError("source_tags shape does not match rows")
            object.__setattr__(self, "source_tags", tags)

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def m(self) -> int:
        return self.schema.m

    @property
    def shape(self) -> tuple[int, int]:
        return self.n, self.m

    def cell(self, i: int, j: int) -> Optional[str]:
        return self.rows[i][j]

    def entity(self, i: int) -> Optional[str]:
        return self.rows[i][self.schema.key_attribute_index]

    def cells(self) -> Iterator[tuple[int, int, Optional[str]]]:
        for i, row in enumerate(self.rows):
            for j, v in enumerate(row):
                yield i, j, v

    def check_keys(self) -> "Table":
        """Enforce ground-truth invariants: n >= 1, key cells non-NULL and unique."""
        if self.n < 1:
            raise ModelError("table needs at least one tuple")
        keys = [self.entity(i) for i in range(self.n)]
        if any(k is None for k in keys):
            raise ModelError("key attribute cells must not be NULL")
        if len(set(keys)) != len(keys):
            raise ModelError("key attribute values must be unique")
        return self

    def with_rows(self, rows) -> "Table":
        return replace(self, rows=tuple(tuple(r) for r in rows))


# ---------------------------------------------------------------------------
# Capability matrix, evidence, plan, document
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CapabilityMatrix:
    """n x m grid of labels; ``None`` marks a not-yet-annotated cell."""

    labels: tuple[tuple[Optional[CapabilityLabel], ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(tuple(r) for r in self.labels))
        widths = {len(r) for r in self.labels}
        if len(widths) > 1:
            raise ModelError("ragged capability matrix")

    @classmethod
    def blank(cls, n: int, m: int) -> "CapabilityMatrix":
        return cls(tuple((None,) * m for _ in range(n)))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.labels), (len(self.labels[0]) if self.labels else 0)

    def __getitem__(self, pos: tuple[int, int]) -> Optional[CapabilityLabel]:
        i, j = pos
        return self.labels[i][j]

    def updated(self, changes: dict[tuple[int, int], Optional[CapabilityLabel]]) -> "CapabilityMatrix":
        grid = [list(r) for r in self.labels]
        for (i, j), lab in changes.items():
            grid[i][j] = lab
        return CapabilityMatrix(tuple(tuple(r) for r in grid))

    def holes(self) -> list[tuple[int, int]]:
        return [
            (i, j)
            for i, row in enumerate(self.labels)
            for j, lab in enumerate(row)
            if lab is None
        ]

    @property
    def is_complete(self) -> bool:
        return not self.holes()

    @property
    def is_refined(self) -> bool:
        return all(lab is not None and lab.is_refined for row in self.labels for lab in row)


@dataclass(frozen=True)
class EvidenceItem:
    id: str
    cell_ref: tuple[int, int]
    canonical_text: str
    fragments: tuple[str, ...]
    sub_capability: Optional[Sub] = None
    source_tag: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "fragments", tuple(self.fragments))
        object.__setattr__(self, "cell_ref", tuple(self.cell_ref))
        if not self.id:
            raise ModelError("evidence id must be nonempty")
        if not self.fragments or any(not isinstance(f, str) or not f.strip() for f in self.fragments):
            raise ModelError(f"evidence {self.id} needs nonempty fragments")

    @property
    def text(self) -> str:
        return " ".join(self.fragments)


@dataclass(frozen=True)
class Section:
    title: str
    summary: str
    assigned_evidence_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "assigned_evidence_ids", tuple(self.assigned_evidence_ids))


@dataclass(frozen=True)
class WritingPlan:
    document_type: str
    sections: tuple[Section, ...]

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(self.sections))
        if not self.sections:
            raise ModelError("a writing plan needs at least one section")

    @property
    def K(self) -> int:
        return len(self.sections)


def count_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class SynthDocument:
    sections: tuple[tuple[str, str], ...]
    assembled_text: str = ""
    token_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(tuple(s) for s in self.sections))
        if not self.assembled_text:
            object.__setattr__(self, "assembled_text", assemble_text(self.sections))
        if not self.token_count:
            object.__setattr__(self, "token_count", count_tokens(self.assembled_text))
        if self.token_count <= 0:
            raise ModelError("document is empty")


def assemble_text(sections: Sequence[tuple[str, str]]) -> str:
    return "\n\n".join(f"# {title}\n{body.strip()}" for title, body in sections) + "\n"


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

NULL_TOKEN = "null"
NULL_SYNONYMS = frozenset({"", "null", "n/a", "none", "-", "nan"})

_THOUSANDS = re.compile(r"(?<![\d.,])(\d{1,3}(?:,\d{3})+)(?=\.\d|(?![\d,]))")
_WS = re.compile(r"\s+")


def _is_punct(ch: str) -> bool:
    cat = unicodedata.category(ch)
    return cat.startswith("P") or cat.startswith("S")


def _keep_punct(s: str, k: int) -> bool:
    ch = s[k]
    prev = s[k - 1] if k > 0 else ""
    nxt = s[k + 1] if k + 1 < len(s) else ""
    if ch in ".-/" and prev.isdigit() and nxt.isdigit():
        return True
    # sign of a leading negative number
    return ch == "-" and nxt.isdigit() and prev in ("", " ")


def _strip_punct(s: str) -> str:
    return "".join(ch for k, ch in enumerate(s) if not _is_punct(ch) or _keep_punct(s, k))


def _normalize_once(s: str) -> str:
    s = s.casefold()
    s = _WS.sub(" ", s).strip()
    if s in NULL_SYNONYMS:
        return NULL_TOKEN
    s = _THOUSANDS.sub(lambda m: m.group(1).replace(",", ""), s)
    s = _strip_punct(s)
    s = _WS.sub(" ", s).strip()
    if s in NULL_SYNONYMS:
        return NULL_TOKEN
    return s


def normalize_cell(raw: Optional[str]) -> str:
    """Normalize a cell value for exact-match comparison.

    Case-folds, collapses whitespace, maps null synonyms to ``"null"``, drops
    thousands separators and strips punctuation except decimal points and
    ``-``/``/`` between digits and a leading minus sign. ``None`` maps to the
    NULL token.
    """
    if raw is None:
        return NULL_TOKEN
    s = str(raw)
    # Iterate to a fixed point so that the function is idempotent even where
    # one rule exposes input for another (e.g. "(n/a)").
    for _ in range(8):
        t = _normalize_once(s)
        if t == s:
            break
        s = t
    return s


def is_null(value: Optional[str]) -> bool:
    return normalize_cell(value) == NULL_TOKEN


def canonical_evidence(entity: str, attribute: str, value: Optional[str]) -> str:
    if value is None:
        raise ModelError("NULL cells have no canonical evidence")
    return f"the attribute {attribute} of entity {entity} is {value}"


def _constrained_columns(schema: Schema) -> set[int]:
    cols = set()
    for c in schema.cross_constraints:
        cols.update((schema.index(c.left), schema.index(c.right)))
    for r in schema.resolution_rules:
        cols.add(schema.index(r.attribute))
        if r.auxiliary:
            cols.add(schema.index(r.auxiliary))
    return cols


def eligible_missing_cells(table: Table) -> list[tuple[int, int]]:
    """Non-key, non-NULL cells outside any cross-constraint or resolution rule."""
    skip = _constrained_columns(table.schema) | {table.schema.key_attribute_index}
    return [(i, j) for i, j, v in table.cells() if v is not None and j not in skip]


def inject_missing_cells(table: Table, fraction: float, seed: int) -> tuple[Table, list[tuple[int, int]]]:
    """NULL out ``floor(fraction * eligible)`` cells chosen reproducibly from ``seed``."""
    if not 0 <= fraction < 1:
        raise ModelError(f"fraction must be in [0, 1), got {fraction}")
    eligible = eligible_missing_cells(table)
    if not eligible:
        raise ModelError("table has no eligible non-key, non-NULL cells")
    k = math.floor(round(fraction * len(eligible), 9))
    removed = sorted(random.Random(seed).sample(eligible, k))
    rows = [list(r) for r in table.rows]
    for i, j in removed:
        rows[i][j] = None
    return table.with_rows(rows), removed
