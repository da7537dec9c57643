"""Run a candidate model on a (document, schema) pair and parse its table."""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from typing import Optional, Union

from . import prompts
from .llm import ChatRequest, Gateway, StructuredParseError, extract_structured
from .markdown import TableNotFound, describe_schema, header_key, parse_markdown_table
from .model import ModelError, Schema, SynthDocument, Table, is_null, normalize_cell
from .serialize import table_from_json, table_to_json

logger = logging.getLogger(__name__)

OUTPUT_FORMATS = ("markdown_table", "structured_rows")
CHUNKING = ("none", "sectioned")

_FORMAT_DIRECTIVES = {
    "markdown_table": (
        "Output only a markdown pipe table whose header row lists the schema attributes "
        "in order, one row per entity."
    ),
    "structured_rows": (
        'Output only a JSON object {"rows": [{"<attribute>": "<value or NULL>", ...}, ...]} '
        "with one object per entity."
    ),
}


class ExtractionFailed(RuntimeError):
    def __init__(self, message: str, raw_response: str = ""):
        super().__init__(message)
        self.raw_response = raw_response


@dataclass(frozen=True)
class ExtractionConfig:
    candidate_model: str
    output_format: str = "markdown_table"
    chunking: str = "none"
    max_retries: int = 1

    def __post_init__(self):
        if self.output_format not in OUTPUT_FORMATS:
            raise ValueError(f"output_format must be one of {OUTPUT_FORMATS}")
        if self.chunking not in CHUNKING:
            raise ValueError(f"chunking must be one of {CHUNKING}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class Prediction:
    table: Table
    raw_response: str
    model_name: str
    latency_ms: int = 0
    token_usage: tuple[int, int] = (0, 0)
    output_format: str = "markdown_table"
    notes: tuple[str, ...] = field(default_factory=tuple)

    def to_json(self) -> dict:
        return {
            "model": self.model_name,
            "output_format": self.output_format,
            "raw_response": self.raw_response,
            "table": table_to_json(self.table),
            "usage": {"prompt": self.token_usage[0], "completion": self.token_usage[1]},
            "notes": list(self.notes),
        }
    # latency is wall-clock, so it goes to run logs rather than the artifact

    @classmethod
    def from_json(cls, obj: dict, schema: Schema) -> "Prediction":
        usage = obj.get("usage") or {}
        return cls(
            table=table_from_json(obj["table"], schema),
            raw_response=obj.get("raw_response", ""),
            model_name=obj.get("model", "unknown"),
            latency_ms=int(obj.get("latency_ms", 0)),
            token_usage=(int(usage.get("prompt", 0)), int(usage.get("completion", 0))),
            output_format=obj.get("output_format", "markdown_table"),
            notes=tuple(obj.get("notes", ())),
        )


def render_extraction_prompt(document_text: str, schema: Schema, output_format: str = "markdown_table",
                             template: Optional[str] = None) -> str:
    # Cross-attribute constraints stay hidden: resolving conflicts with them
    # is one of the capabilities under test.
    template = template or prompts.load_templates()["extractor"]
    return prompts.render(
        template,
        {
            "schema_definition": describe_schema(schema, include_cross_constraints=False),
            "document": document_text,
            "entity_type": schema.entity_type,
            "output_format": _FORMAT_DIRECTIVES[output_format],
        },
    )


def parse_structured_rows(content: str, schema: Schema, notes: Optional[list] = None) -> Table:
    try:
        obj = extract_structured(content)
    except StructuredParseError as exc:
        raise TableNotFound(str(exc)) from exc
    rows = obj.get("rows") if isinstance(obj, dict) else obj
    if not isinstance(rows, list):
        raise TableNotFound("structured reply has no 'rows' list")
    keys = {header_key(n): j for j, n in enumerate(schema.names)}
    out = []
    for k, raw in enumerate(rows):
        row = [None] * schema.m
        if isinstance(raw, dict):
            for name, v in raw.items():
                j = keys.get(header_key(str(name)))
                if j is not None and v is not None:
                    row[j] = None if is_null(str(v)) else str(v)
        elif isinstance(raw, list):
            if len(raw) != schema.m and notes is not None:
                notes.append(f"row {k} has {len(raw)} cells, schema has {schema.m}; repaired")
            for j, v in enumerate(raw[: schema.m]):
                row[j] = None if v is None or is_null(str(v)) else str(v)
        else:
            continue
        out.append(tuple(row))
    return Table(schema, tuple(out))


def split_sections(text: str) -> list[str]:
    """Split an assembled document on its ``# `` section headers."""
    parts = re.split(r"(?m)^(?=# )", text)
    return [p for p in parts if p.strip()]


def _dedupe_by_key(table: Table) -> Table:
    seen = set()
    rows = []
    kj = table.schema.key_attribute_index
    for row in table.rows:
        key = normalize_cell(row[kj])
        if key in seen:
            continue
        seen.add(key)
        rows.append(row)
    return table.with_rows(rows)


def _extract_once(text: str, schema: Schema, cfg: ExtractionConfig, gateway: Gateway,
                  template: Optional[str]) -> tuple[Table, str, tuple[int, int], list[str]]:
    prompt = render_extraction_prompt(text, schema, cfg.output_format, template)
    attempts = cfg.max_retries + 1
    raw = ""
    usage = [0, 0]
    for attempt in range(1, attempts + 1):
        req = ChatRequest.user(
            cfg.candidate_model, prompt,
            response_format_hint="structured_object" if cfg.output_format == "structured_rows" else "free_text",
        )
        response = gateway.complete(req, tag="extractor")
        raw = response.content or ""
        usage[0] += response.usage[0]
        usage[1] += response.usage[1]
        notes: list[str] = []
        try:
            if not raw or not raw.strip():
                raise TableNotFound("empty response")
            if cfg.output_format == "markdown_table":
                table = parse_markdown_table(raw, schema, notes)
            else:
                table = parse_structured_rows(raw, schema, notes)
            return table, raw, (usage[0], usage[1]), notes
        except (TableNotFound, ModelError) as exc:
            logger.warning("extraction attempt %d unparseable: %s", attempt, exc)
    raise ExtractionFailed(f"no parseable table after {attempts} attempt(s)", raw)


def run_extraction(
    document: Union[SynthDocument, str],
    schema: Schema,
    cfg: ExtractionConfig,
    gateway: Gateway,
    template: Optional[str] = None,
) -> Prediction:
    text = document.assembled_text if isinstance(document, SynthDocument) else document
    if not text or not text.strip():
        raise ValueError("document is empty")
    start = time.perf_counter()
    if cfg.chunking == "sectioned":
        chunks = split_sections(text)
    else:
        chunks = [text]
    rows, raws, notes = [], [], []
    usage = [0, 0]
    for chunk in chunks:
        table, raw, u, n = _extract_once(chunk, schema, cfg, gateway, template)
        rows.extend(table.rows)
        raws.append(raw)
        notes.extend(n)
        usage[0] += u[0]
        usage[1] += u[1]
    table = Table(schema, tuple(rows))
    if len(chunks) > 1:
        table = _dedupe_by_key(table)
    return Prediction(
        table=table,
        raw_response="\n\n".join(raws),
        model_name=cfg.candidate_model,
        latency_ms=int((time.perf_counter() - start) * 1000),
        token_usage=(usage[0], usage[1]),
        output_format=cfg.output_format,
        notes=tuple(notes),
    )
