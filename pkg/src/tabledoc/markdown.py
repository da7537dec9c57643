"""Pipe-table rendering and parsing."""

from __future__ import annotations

import logging
import re
from typing import Optional

from .model import Schema, Table, is_null, normalize_cell

logger = logging.getLogger(__name__)

NULL_MARKER = "NULL"

_SPLIT = re.compile(r"(?<!\\)\|")
_SEPARATOR_CELL = re.compile(r"^:?-{1,}:?$")


class TableNotFound(ValueError):
    pass


def _escape(value: Optional[str]) -> str:
    if value is None:
        return NULL_MARKER
    # pipe cells cannot span lines; everything else is kept as is
    return re.sub(r"[\r\n]+", " ", value).replace("|", "\\|")


def render_markdown(table: Table, null_marker: str = NULL_MARKER) -> str:
    header = "| " + " | ".join(_escape(n) for n in table.schema.names) + " |"
    sep = "|" + "|".join("---" for _ in table.schema.names) + "|"
    lines = [header, sep]
    for row in table.rows:
        cells = [null_marker if v is None else _escape(v) for v in row]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)


def split_row(line: str) -> list[str]:
    s = line.strip()
    if s.startswith("|"):
        s = s[1:]
    if s.endswith("|") and not s.endswith("\\|"):
        s = s[:-1]
    return [c.strip().replace("\\|", "|") for c in _SPLIT.split(s)]


def _is_separator(cells: list[str]) -> bool:
    nonblank = [c for c in cells if c]
    return bool(nonblank) and all(_SEPARATOR_CELL.match(c.replace(" ", "")) for c in nonblank)


def header_key(name: str) -> str:
    return normalize_cell(name).replace(" ", "")


def find_table_lines(text: str) -> list[str]:
    """Return the lines of the first block of >= 2 consecutive pipe rows."""
    block: list[str] = []
    for line in text.splitlines():
        if "|" in line and line.strip():
            block.append(line)
            continue
        if len(block) >= 2:
            return block
        block = []
    if len(block) >= 2:
        return block
    raise TableNotFound("no pipe-delimited table found")


def parse_markdown_table(text: str, schema: Schema, notes: Optional[list[str]] = None) -> Table:
    """Parse the first pipe table in ``text`` into a :class:`Table` over ``schema``.

    Columns are matched to schema attributes by normalized header name, so
    the model may reorder them. Attributes without a matching header come
    back all-NULL. Data rows whose arity differs from the header are padded
    with NULLs or truncated, and a line is appended to ``notes``.
    """
    lines = find_table_lines(text)
    header = split_row(lines[0])
    # Exact names win; normalized names only fill what is left, so two
    # attributes that normalize alike ("A_A", "Aa") still map correctly.
    col_map: dict[int, int] = {}
    exact = {n: j for j, n in enumerate(schema.names)}
    for k, h in enumerate(header):
        j = exact.get(h)
        if j is not None and j not in col_map.values():
            col_map[k] = j
    loose = {}
    for j, n in enumerate(schema.names):
        loose.setdefault(header_key(n), j)
    for k, h in enumerate(header):
        j = loose.get(header_key(h))
        if k not in col_map and j is not None and j not in col_map.values():
            col_map[k] = j

    rows = []
    for line in lines[1:]:
        cells = split_row(line)
        if _is_separator(cells):
            continue
        if len(cells) != len(header):
            msg = f"row {len(rows)} has {len(cells)} cells, header has {len(header)}; repaired"
            logger.warning(msg)
            if notes is not None:
                notes.append(msg)
            cells = (cells + [""] * len(header))[: len(header)]
        row: list[Optional[str]] = [None] * schema.m
        for k, j in col_map.items():
            v = cells[k]
            row[j] = None if is_null(v) else v
        rows.append(tuple(row))
    return Table(schema, tuple(rows))


def describe_schema(schema: Schema, include_cross_constraints: bool = True) -> str:
    """Plain-text schema block for prompts.

    Explicit resolution rules are always listed. Cross-attribute constraints
    are implicit knowledge reserved for synthesis and are omitted when
    ``include_cross_constraints`` is false.
    """
    lines = [f"Entity type: {schema.entity_type}", "Attributes:"]
    for j, a in enumerate(schema.attributes):
        head = f"- {a.name} ({a.data_type.value}"
        if j == schema.key_attribute_index:
            head += ", entity identifier"
        head += ")"
        if a.description:
            head += f": {a.description}"
        extras = []
        if a.unit:
            extras.append(f"unit: {a.unit}")
        if a.format:
            extras.append(f"format: {a.format}")
        if a.constraints:
            label = "allowed values" if a.data_type.value == "enum" else "constraints"
            extras.append(f"{label}: {'; '.join(a.constraints)}")
        if a.examples:
            extras.append(f"examples: {', '.join(a.examples)}")
        if extras:
            head += " [" + " | ".join(extras) + "]"
        lines.append(head)
    if schema.resolution_rules:
        lines.append("Conflict resolution rules:")
        lines.extend(f"- {r}" for r in schema.resolution_rules)
    if include_cross_constraints and schema.cross_constraints:
        lines.append("Cross-attribute constraints:")
        lines.extend(f"- {c}" for c in schema.cross_constraints)
    return "\n".join(lines)
