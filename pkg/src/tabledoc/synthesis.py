"""Table-to-document synthesis.

Five stages run in order for one case:

1. annotation: an LLM assigns a coarse capability (or EMPTY) to every
   cell; a code checker re-prompts for holes and falls back to EMPTY.
2. refinement: per labelled cell, an LLM picks a sub-capability and writes
   evidence fragments; an LLM verifier gates each cell with a 3-item
   checklist, feeding failures back for regeneration.
3. planning: an LLM groups evidence ids into sections; a code checker
   re-prompts until every id is covered.
4. writing: section by section, checked by a 2-item LLM verifier.
5. assembly into a single markdown document plus provenance.

Every stage's artifact is written to the case directory together with a
checkpoint so an aborted run can resume.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from . import prompts
from .llm import Gateway, StructuredParseError, extract_structured
from .markdown import describe_schema, render_markdown
from .model import (
    CATEGORY_DEFINITIONS,
    EMPTY_LABEL,
    SUB_DEFINITIONS,
    TAXONOMY,
    CapabilityLabel,
    CapabilityMatrix,
    Category,
    EvidenceItem,
    ModelError,
    Section,
    Sub,
    SynthDocument,
    Table,
    WritingPlan,
    assemble_text,
    canonical_evidence,
    parse_category,
    parse_sub,
)
from .serialize import (
    dump_json,
    evidence_from_json,
    evidence_to_json,
    load_json,
    matrix_from_json,
    matrix_to_json,
    plan_from_json,
    plan_to_json,
    schema_to_json,
    table_to_json,
)

logger = logging.getLogger(__name__)

NO_PREVIOUS_SECTION = "(none: this is the first section)"
NO_FEEDBACK = "(none)"


class SynthesisError(RuntimeError):
    pass


class AnnotationParseError(SynthesisError):
    pass


class EvidenceParseError(SynthesisError):
    pass


class PlannerParseError(SynthesisError):
    pass


class PlanCoverageError(SynthesisError):
    pass


class WriterEmptyOutput(SynthesisError):
    pass


class AssemblyIncomplete(SynthesisError):
    pass


class JudgeParseError(SynthesisError):
    pass


class DegradedCase(SynthesisError):
    def __init__(self, result: "CaseResult"):
        super().__init__(f"case degraded: {len(result.flagged)} item(s) exhausted their retries")
        self.result = result


# ---------------------------------------------------------------------------
# Configuration and verdicts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoopConfig:
    annotation_rounds: int = 3
    evidence_retries: int = 3
    section_retries: int = 3

    def __post_init__(self):
        for name in ("annotation_rounds", "evidence_retries", "section_retries"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


EVIDENCE_CHECKS = ("value_correctness", "label_alignment", "schema_leakage")
SECTION_CHECKS = ("faithful_grounding", "schema_leakage")


@dataclass(frozen=True)
class VerifierVerdict:
    status: str
    checks: Mapping[str, bool]
    fail_rationale: Optional[str] = None
    revise_suggestion: Optional[str] = None
    errors: tuple = ()

    def __post_init__(self):
        if self.status not in ("PASS", "FAIL"):
            raise ValueError(f"bad verdict status {self.status!r}")
        object.__setattr__(self, "checks", dict(self.checks))
        all_true = bool(self.checks) and all(self.checks.values())
        if (self.status == "PASS") != all_true:
            raise ValueError("status must be PASS exactly when every check is true")
        if self.status == "FAIL" and not self.fail_rationale:
            raise ValueError("a FAIL verdict needs a rationale")

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    @classmethod
    def failed(cls, names: Sequence[str], rationale: str, suggestion: Optional[str] = None):
        return cls("FAIL", {n: False for n in names}, rationale, suggestion)

    def feedback(self) -> str:
        parts = [f"Previous attempt failed: {self.fail_rationale}"]
        if self.revise_suggestion:
            parts.append(f"Suggested revision: {self.revise_suggestion}")
        for err in self.errors:
            parts.append(
                f"- [{err.get('type', 'error')}] {err.get('description', '')} "
                f"Fix: {err.get('suggestion', '')}".rstrip()
            )
        return "\n".join(parts)


@dataclass(frozen=True)
class QualityScores:
    lexical_richness: int
    logical_consistency: int
    textual_coherence: int

    def __post_init__(self):
        for name in ("lexical_richness", "logical_consistency", "textual_coherence"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or not 1 <= v <= 5:
                raise JudgeParseError(f"{name} must be an integer in 1..5, got {v!r}")

    @property
    def average(self) -> float:
        return (self.lexical_richness + self.logical_consistency + self.textual_coherence) / 3

    def to_json(self) -> dict:
        return {
            "lexical_richness": self.lexical_richness,
            "logical_consistency": self.logical_consistency,
            "textual_coherence": self.textual_coherence,
            "average": round(self.average, 2),
        }


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------


class Agents:
    """Binds prompt templates to a gateway and a model name per agent."""

    def __init__(
        self,
        gateway: Gateway,
        model: str = "default",
        models: Optional[Mapping[str, str]] = None,
        templates: Optional[Mapping[str, str]] = None,
        gateways: Optional[Mapping[str, Gateway]] = None,
    ):
        self.gateway = gateway
        self.model = model
        self.models = dict(models or {})
        self.templates = dict(templates or prompts.load_templates())
        self.gateways = dict(gateways or {})

    def prompt(self, agent: str, **values) -> str:
        return prompts.render(self.templates[agent], values)

    def ask(self, agent: str, structured: bool = True, **values) -> str:
        gw = self.gateways.get(agent, self.gateway)
        return gw.ask(
            self.models.get(agent, self.model),
            self.prompt(agent, **values),
            tag=agent,
            structured=structured,
        )


def _cell_desc(table: Table, i: int, j: int) -> str:
    return (
        f"entity {table.entity(i)!s} / attribute {table.schema.names[j]} "
        f"(row {i + 1}, column {j + 1}) = {table.cell(i, j) if table.cell(i, j) is not None else 'NULL'}"
    )


def _capability_definition() -> str:
    lines = []
    for cat, subs in TAXONOMY.items():
        lines.append(f"- {cat.value} ({cat.title}): {CATEGORY_DEFINITIONS[cat]}")
        lines.extend(f"    - {s.value}: {SUB_DEFINITIONS[s]}" for s in subs)
    lines.append("- EMPTY: the value is stated directly and can be copied")
    return "\n".join(lines)


def _coarse_grid(table: Table, matrix: CapabilityMatrix) -> str:
    header = "| " + " | ".join(table.schema.names) + " |"
    sep = "|" + "|".join("---" for _ in table.schema.names) + "|"
    rows = [
        "| " + " | ".join(lab.category.value if lab else "?" for lab in row) + " |"
        for row in matrix.labels
    ]
    return "\n".join([header, sep, *rows])


# ---------------------------------------------------------------------------
# Step 1: capability annotation
# ---------------------------------------------------------------------------


def check_annotation_completeness(matrix: CapabilityMatrix) -> list[tuple[int, int]]:
    return matrix.holes()


def _parse_assignments(content: str, table: Table, cells) -> dict[tuple[int, int], CapabilityLabel]:
    try:
        obj = extract_structured(content)
    except StructuredParseError as exc:
        raise AnnotationParseError(str(exc)) from exc
    if not isinstance(obj, dict) or not isinstance(obj.get("assignments"), dict):
        raise AnnotationParseError("response has no 'assignments' object")
    rows = {str(table.entity(i)): i for i in range(table.n)}
    cols = {n: j for j, n in enumerate(table.schema.names)}
    out = {}
    for entity, attrs in obj["assignments"].items():
        i = rows.get(str(entity))
        if i is None or not isinstance(attrs, dict):
            continue
        for attr, raw in attrs.items():
            j = cols.get(attr)
            if j is None or (i, j) not in cells:
                continue
            if isinstance(raw, list):
                raw = raw[0] if raw else None
            cat = parse_category(raw)
            if cat is None:
                continue  # out of vocabulary: stays unannotated
            out[(i, j)] = CapabilityLabel(cat)
    return out


def annotate_capabilities(
    table: Table,
    agents: Agents,
    matrix: Optional[CapabilityMatrix] = None,
) -> CapabilityMatrix:
    """One annotator call filling the holes of ``matrix`` (all cells if None)."""
    matrix = matrix or CapabilityMatrix.blank(table.n, table.m)
    holes = set(matrix.holes())
    if not holes:
        return matrix
    content = agents.ask(
        "annotator",
        markdown_table=render_markdown(table),
        table_metadata=describe_schema(table.schema),
        capability_definition=_capability_definition(),
        target_cells="\n".join(f"- {_cell_desc(table, i, j)}" for i, j in sorted(holes)),
    )
    try:
        labels = _parse_assignments(content, table, holes)
    except AnnotationParseError as exc:
        logger.warning("annotation response unusable: %s", exc)
        labels = {}
    return matrix.updated(labels)


def annotation_loop(table: Table, agents: Agents, cfg: LoopConfig = LoopConfig()) -> CapabilityMatrix:
    matrix = CapabilityMatrix.blank(table.n, table.m)
    for round_no in range(1, cfg.annotation_rounds + 1):
        matrix = annotate_capabilities(table, agents, matrix)
        holes = check_annotation_completeness(matrix)
        logger.info("annotation round %d: %d hole(s) left", round_no, len(holes))
        if not holes:
            return matrix
    return matrix.updated({pos: EMPTY_LABEL for pos in matrix.holes()})


def _force_null_labels(table: Table, matrix: CapabilityMatrix) -> CapabilityMatrix:
    """NULL ground-truth cells are missing values by construction."""
    ef = CapabilityLabel.of(Sub.MISSING_VALUE_FAITHFULNESS)
    return matrix.updated({(i, j): ef for i, j, v in table.cells() if v is None})


# ---------------------------------------------------------------------------
# Step 2: refinement and evidence generation
# ---------------------------------------------------------------------------


@dataclass
class CellEvidence:
    cell_ref: tuple[int, int]
    sub: Optional[Sub]
    fragments: tuple[str, ...]
    source_tag: Optional[str] = None


def _parse_refinement(content: str, category: Category) -> tuple[Sub, tuple[str, ...]]:
    try:
        obj = extract_structured(content)
    except StructuredParseError as exc:
        raise EvidenceParseError(str(exc)) from exc
    if not isinstance(obj, dict):
        raise EvidenceParseError("refiner reply is not an object")
    sub = parse_sub(obj.get("sub_capability"))
    if sub is None or sub not in TAXONOMY[category]:
        raise EvidenceParseError(
            f"sub-capability {obj.get('sub_capability')!r} is not part of {category.value}"
        )
    frags = obj.get("evidence")
    if isinstance(frags, str):
        frags = [frags]
    if not isinstance(frags, list) or not frags or not all(isinstance(f, str) and f.strip() for f in frags):
        raise EvidenceParseError("refiner reply has no evidence fragments")
    return sub, tuple(f.strip() for f in frags)


def refine_cell(
    table: Table,
    matrix: CapabilityMatrix,
    pos: tuple[int, int],
    agents: Agents,
    feedback: Optional[str] = None,
) -> tuple[Sub, tuple[str, ...]]:
    i, j = pos
    label = matrix[pos]
    category = label.category
    content = agents.ask(
        "refiner",
        markdown_table=render_markdown(table),
        target_schema=describe_schema(table.schema),
        coarse_capability_matrix=_coarse_grid(table, matrix),
        sub_capability_list="\n".join(
            f"- {s.value}: {SUB_DEFINITIONS[s]}" for s in TAXONOMY[category]
        ),
        target_cell=f"{_cell_desc(table, i, j)}; coarse label {category.value} ({category.title})",
        canonical_evidence=canonical_evidence(
            str(table.entity(i)), table.schema.names[j], table.cell(i, j)
        ),
        feedback=feedback or NO_FEEDBACK,
    )
    return _parse_refinement(content, category)


def refine_and_generate(matrix: CapabilityMatrix, table: Table, agents: Agents) -> list[CellEvidence]:
    """Single unverified pass over all cells.

    Labelled cells go through the refiner; EMPTY cells carry their canonical
    sentence; NULL cells produce nothing. Cells whose refiner reply cannot be
    parsed are skipped here; :func:`evidence_loop` retries them.
    """
    if not matrix.is_complete:
        raise SynthesisError("capability matrix has unannotated cells")
    out = []
    for i, j, value in table.cells():
        if value is None:
            continue
        label = matrix[i, j]
        if label.is_empty:
            out.append(CellEvidence((i, j), None, (canonical_evidence(str(table.entity(i)), table.schema.names[j], value),)))
            continue
        try:
            sub, frags = refine_cell(table, matrix, (i, j), agents)
        except EvidenceParseError as exc:
            logger.warning("cell (%d,%d): %s", i, j, exc)
            continue
        out.append(CellEvidence((i, j), sub, frags))
    return out


def _parse_evidence_verdict(content: str) -> VerifierVerdict:
    try:
        obj = extract_structured(content)
        evaluation = obj["evaluation"]
        checks = {name: evaluation[name] for name in EVIDENCE_CHECKS}
        if not all(isinstance(v, bool) for v in checks.values()):
            raise TypeError("non-boolean check")
        status = str(obj["status"]).upper()
        feedback = obj.get("feedback") or {}
    except (StructuredParseError, KeyError, TypeError, AttributeError):
        return VerifierVerdict.failed(EVIDENCE_CHECKS, "unparseable verdict")
    rationale = _none_str(feedback.get("fail_rationale")) if isinstance(feedback, dict) else None
    suggestion = _none_str(feedback.get("revise_suggest")) if isinstance(feedback, dict) else None
    all_true = all(checks.values())
    if all_true and status == "PASS":
        return VerifierVerdict("PASS", checks)
    if all_true or status not in ("PASS", "FAIL"):
        return VerifierVerdict.failed(EVIDENCE_CHECKS, "unparseable verdict")
    failed = [k for k, v in checks.items() if not v]
    return VerifierVerdict(
        "FAIL", checks, rationale or f"failed checks: {', '.join(failed)}", suggestion
    )


def _none_str(v) -> Optional[str]:
    if v is None:
        return None
    s = str(v).strip()
    return None if s.lower() in ("", "none", "null") else s


def verify_evidence(
    fragments: Sequence[str], value: str, sub: Sub, table: Table, agents: Agents
) -> VerifierVerdict:
    content = agents.ask(
        "refine_verifier",
        original_value=value,
        sub_capability=f"{sub.value} ({sub.category.value}): {SUB_DEFINITIONS[sub]}",
        schema_definition=describe_schema(table.schema),
        generated_evidence_text="\n".join(f"- {f}" for f in fragments),
    )
    return _parse_evidence_verdict(content)


@dataclass
class EvidenceOutcome:
    evidence: list[EvidenceItem]
    matrix: CapabilityMatrix
    flagged: list[tuple[int, int]]
    attempts: dict[tuple[int, int], int]


def _number_evidence(table: Table, cells: Sequence[CellEvidence], taken: set[str] = frozenset()) -> list[EvidenceItem]:
    items = []
    k = 0
    for c in cells:
        k += 1
        while f"e{k}" in taken:
            k += 1
        i, j = c.cell_ref
        items.append(
            EvidenceItem(
                id=f"e{k}",
                cell_ref=c.cell_ref,
                canonical_text=canonical_evidence(str(table.entity(i)), table.schema.names[j], table.cell(i, j)),
                fragments=c.fragments,
                sub_capability=c.sub,
                source_tag=c.source_tag,
            )
        )
    return items


def evidence_loop(
    matrix: CapabilityMatrix, table: Table, agents: Agents, cfg: LoopConfig = LoopConfig()
) -> EvidenceOutcome:
    """Refine and verify each labelled cell with bounded retries.

    Returns evidence numbered e1.. in row-major cell order, the refined
    capability matrix, and the cells that never passed verification. A
    flagged cell keeps its last parseable attempt, or falls back to its
    canonical sentence with an EMPTY label if no attempt parsed.
    """
    if not matrix.is_complete:
        raise SynthesisError("capability matrix has unannotated cells")
    matrix = _force_null_labels(table, matrix)
    cells: list[CellEvidence] = []
    refined: dict[tuple[int, int], CapabilityLabel] = {}
    flagged = []
    attempts = {}
    for i, j, value in table.cells():
        if value is None:
            continue
        label = matrix[i, j]
        entity, attr = str(table.entity(i)), table.schema.names[j]
        if label.is_empty:
            cells.append(CellEvidence((i, j), None, (canonical_evidence(entity, attr, value),)))
            continue
        feedback = None
        last = None
        passed = False
        for attempt in range(1, cfg.evidence_retries + 1):
            attempts[(i, j)] = attempt
            try:
                sub, frags = refine_cell(table, matrix, (i, j), agents, feedback)
            except EvidenceParseError as exc:
                verdict = VerifierVerdict.failed(
                    EVIDENCE_CHECKS, f"refiner output unusable: {exc}",
                    "return a JSON object with a valid sub_capability and evidence list",
                )
            else:
                last = (sub, frags)
                verdict = verify_evidence(frags, value, sub, table, agents)
            if verdict.passed:
                passed = True
                break
            feedback = verdict.feedback()
            logger.info("cell (%d,%d) attempt %d failed: %s", i, j, attempt, verdict.fail_rationale)
        if not passed:
            flagged.append((i, j))
        if last is None:
            cells.append(CellEvidence((i, j), None, (canonical_evidence(entity, attr, value),)))
            refined[(i, j)] = EMPTY_LABEL
        else:
            cells.append(CellEvidence((i, j), last[0], last[1]))
            refined[(i, j)] = CapabilityLabel.of(last[0])
    return EvidenceOutcome(_number_evidence(table, cells), matrix.updated(refined), flagged, attempts)


def evidence_from_external(table: Table, external: Sequence[EvidenceItem]) -> tuple[list[EvidenceItem], CapabilityMatrix]:
    """Entry point for pre-built (e.g. multi-source) evidence; skips steps 1-2.

    Cell labels come from the items' sub-capabilities. Non-NULL cells with no
    supplied evidence get their canonical sentence and an EMPTY label.
    Evidence pointing at NULL cells is dropped.
    """
    ids = {e.id for e in external}
    if len(ids) != len(external):
        raise ModelError("duplicate evidence ids in external evidence")
    by_cell: dict[tuple[int, int], list[EvidenceItem]] = {}
    for e in external:
        i, j = e.cell_ref
        if not (0 <= i < table.n and 0 <= j < table.m):
            raise ModelError(f"evidence {e.id} points outside the table")
        if table.cell(i, j) is None:
            logger.warning("dropping evidence %s for NULL cell %s", e.id, e.cell_ref)
            continue
        by_cell.setdefault((i, j), []).append(e)
    labels = {}
    missing = []
    for i, j, v in table.cells():
        if v is None:
            continue
        items = by_cell.get((i, j))
        if not items:
            missing.append(CellEvidence((i, j), None, (canonical_evidence(str(table.entity(i)), table.schema.names[j], v),)))
            labels[(i, j)] = EMPTY_LABEL
            continue
        subs = [e.sub_capability for e in items if e.sub_capability is not None]
        labels[(i, j)] = CapabilityLabel.of(subs[0]) if subs else EMPTY_LABEL
    matrix = _force_null_labels(table, CapabilityMatrix.blank(table.n, table.m).updated(labels))
    kept = [e for cell in sorted(by_cell) for e in by_cell[cell]]
    return kept + _number_evidence(table, missing, ids), matrix


# ---------------------------------------------------------------------------
# Step 3: planning
# ---------------------------------------------------------------------------


def _parse_plan(content: str, known_ids: set[str]) -> WritingPlan:
    try:
        obj = extract_structured(content)
        doc_type = str(obj["document_type"]).strip()
        blueprint = obj["blueprint"]
        if not isinstance(blueprint, list) or not blueprint:
            raise TypeError("empty blueprint")
        sections = []
        for s in blueprint:
            ids = tuple(str(x) for x in s["assigned_evidence_ids"])
            unknown = [x for x in ids if x not in known_ids]
            if unknown:
                raise PlannerParseError(f"unknown_evidence_id: {', '.join(unknown)}")
            sections.append(Section(str(s["title"]).strip(), str(s.get("summary", "")).strip(), ids))
    except PlannerParseError:
        raise
    except (StructuredParseError, KeyError, TypeError, AttributeError) as exc:
        raise PlannerParseError(f"malformed plan: {exc}") from exc
    if not doc_type:
        raise PlannerParseError("plan has no document_type")
    # Section numbering is positional (1..K) regardless of the ids the model used.
    return WritingPlan(doc_type, tuple(sections))


def _evidence_listing(evidence: Sequence[EvidenceItem]) -> str:
    lines = []
    for e in evidence:
        tag = f" (source: {e.source_tag})" if e.source_tag else ""
        lines.append(f"[{e.id}]{tag} " + " / ".join(e.fragments))
    return "\n".join(lines)


def plan_sections(evidence: Sequence[EvidenceItem], agents: Agents, feedback: Optional[str] = None) -> WritingPlan:
    if not evidence:
        raise SynthesisError("cannot plan a document without evidence")
    content = agents.ask(
        "planner",
        list_of_evidences_with_ids=_evidence_listing(evidence),
        feedback=feedback or NO_FEEDBACK,
    )
    return _parse_plan(content, {e.id for e in evidence})


def check_plan_coverage(plan: WritingPlan, evidence: Sequence[EvidenceItem]) -> set[str]:
    assigned = {eid for s in plan.sections for eid in s.assigned_evidence_ids}
    return {e.id for e in evidence} - assigned


def planning_loop(evidence: Sequence[EvidenceItem], agents: Agents, cfg: LoopConfig = LoopConfig()) -> WritingPlan:
    feedback = None
    for attempt in range(1, cfg.section_retries + 1):
        try:
            plan = plan_sections(evidence, agents, feedback)
        except PlannerParseError as exc:
            feedback = f"The previous plan was rejected: {exc}. Use only the listed evidence ids."
            logger.info("planning attempt %d rejected: %s", attempt, exc)
            continue
        missing = check_plan_coverage(plan, evidence)
        if not missing:
            return plan
        ordered = sorted(missing, key=_id_order)
        feedback = (
            "The previous plan left these evidence ids unassigned; insert each into the "
            f"most suitable section: {', '.join(ordered)}"
        )
        logger.info("planning attempt %d missed %s", attempt, ordered)
    raise PlanCoverageError(f"no covering plan after {cfg.section_retries} attempt(s)")


def _id_order(eid: str):
    digits = "".join(ch for ch in eid if ch.isdigit())
    return (int(digits) if digits else 0, eid)


# ---------------------------------------------------------------------------
# Step 4: section writing
# ---------------------------------------------------------------------------


def _section_evidence_listing(items: Sequence[EvidenceItem]) -> str:
    return "\n".join(f"- {frag}" for e in items for frag in e.fragments)


def write_section(
    index: int,
    section: Section,
    table: Table,
    prev_summary: Optional[str],
    evidence_by_id: Mapping[str, EvidenceItem],
    agents: Agents,
    feedback: Optional[str] = None,
) -> str:
    items = [evidence_by_id[eid] for eid in section.assigned_evidence_ids]
    body = agents.ask(
        "writer",
        structured=False,
        section_index=index,
        section_title=section.title,
        schema_definition=describe_schema(table.schema),
        previous_summary=prev_summary or NO_PREVIOUS_SECTION,
        current_summary=section.summary or section.title,
        list_of_evidences=_section_evidence_listing(items),
        feedback=feedback or NO_FEEDBACK,
    )
    body = (body or "").strip()
    if not body:
        raise WriterEmptyOutput(f"writer returned no text for section {index}")
    return body


def _parse_section_verdict(content: str) -> VerifierVerdict:
    try:
        obj = extract_structured(content)
        status = str(obj["verification_status"]).upper()
        errors = obj.get("errors") or []
        if not isinstance(errors, list) or not all(isinstance(e, dict) for e in errors):
            raise TypeError("errors must be a list of objects")
        evaluation = obj.get("evaluation")
        if evaluation is not None:
            checks = {name: evaluation[name] for name in SECTION_CHECKS}
            if not all(isinstance(v, bool) for v in checks.values()):
                raise TypeError("non-boolean check")
        elif status == "PASS" and not errors:
            checks = {name: True for name in SECTION_CHECKS}
        else:
            checks = {name: True for name in SECTION_CHECKS}
            for e in errors:
                t = str(e.get("type", "")).lower()
                if "ground" in t:
                    checks["faithful_grounding"] = False
                elif "leak" in t:
                    checks["schema_leakage"] = False
    except (StructuredParseError, KeyError, TypeError, AttributeError):
        return VerifierVerdict.failed(SECTION_CHECKS, "unparseable verdict")
    all_true = all(checks.values())
    if status == "PASS" and all_true:
        return VerifierVerdict("PASS", checks)
    if all_true or status not in ("PASS", "FAIL"):
        return VerifierVerdict.failed(SECTION_CHECKS, "unparseable verdict")
    failed = [k for k, v in checks.items() if not v]
    rationale = "; ".join(str(e.get("description", "")) for e in errors if e.get("description"))
    return VerifierVerdict(
        "FAIL", checks, rationale or f"failed checks: {', '.join(failed)}", None, tuple(errors)
    )


def verify_section(body: str, items: Sequence[EvidenceItem], table: Table, agents: Agents) -> VerifierVerdict:
    if not body.strip():
        raise WriterEmptyOutput("cannot verify an empty section")
    content = agents.ask(
        "section_verifier",
        section_content=body,
        list_of_evidences=_section_evidence_listing(items),
        markdown_table_and_schema=render_markdown(table) + "\n\n" + describe_schema(table.schema),
    )
    return _parse_section_verdict(content)


@dataclass
class SectionOutcome:
    bodies: list[str]
    flagged: list[int]
    attempts: list[int]


def section_loop(
    plan: WritingPlan,
    table: Table,
    evidence: Sequence[EvidenceItem],
    agents: Agents,
    cfg: LoopConfig = LoopConfig(),
) -> SectionOutcome:
    by_id = {e.id: e for e in evidence}
    bodies, flagged, attempts = [], [], []
    prev_summary = None
    for k, section in enumerate(plan.sections, start=1):
        items = [by_id[eid] for eid in section.assigned_evidence_ids]
        feedback = None
        body = ""
        passed = False
        for attempt in range(1, cfg.section_retries + 1):
            try:
                candidate = write_section(k, section, table, prev_summary, by_id, agents, feedback)
            except WriterEmptyOutput as exc:
                verdict = VerifierVerdict.failed(SECTION_CHECKS, str(exc), "write the full section text")
            else:
                body = candidate
                verdict = verify_section(body, items, table, agents)
            if verdict.passed:
                passed = True
                break
            feedback = verdict.feedback()
        attempts.append(attempt)
        if not passed:
            flagged.append(k)
        bodies.append(body)
        prev_summary = section.summary or section.title
    return SectionOutcome(bodies, flagged, attempts)


# ---------------------------------------------------------------------------
# Step 5: assembly and judging
# ---------------------------------------------------------------------------


def assemble_document(plan: WritingPlan, bodies: Sequence[Optional[str]]) -> SynthDocument:
    if not plan.sections or len(bodies) != plan.K or any(not b or not b.strip() for b in bodies):
        raise AssemblyIncomplete(f"expected {plan.K} verified section(s), got {sum(1 for b in bodies if b)}")
    pairs = tuple((s.title, b.strip()) for s, b in zip(plan.sections, bodies))
    return SynthDocument(pairs, assemble_text(pairs))


def build_provenance(plan: WritingPlan, evidence: Sequence[EvidenceItem]) -> dict[str, list[int]]:
    out = {e.id: [] for e in evidence}
    for k, s in enumerate(plan.sections, start=1):
        for eid in s.assigned_evidence_ids:
            if k not in out[eid]:
                out[eid].append(k)
    return out


def missing_fragments(document_text: str, evidence: Sequence[EvidenceItem]) -> list[str]:
    """Ids of evidence items with at least one fragment absent from the text."""
    return [e.id for e in evidence if not all(f in document_text for f in e.fragments)]


def _parse_scores(content: str) -> QualityScores:
    try:
        obj = extract_structured(content)
        return QualityScores(
            obj["lexical_richness"], obj["logical_consistency"], obj["textual_coherence"]
        )
    except (StructuredParseError, KeyError, TypeError) as exc:
        raise JudgeParseError(f"malformed judge reply: {exc}") from exc


def judge_document(doc: SynthDocument, agents: Agents) -> QualityScores:
    content = agents.ask("judge", rubric=prompts.rubric_text(), document=doc.assembled_text)
    return _parse_scores(content)


# ---------------------------------------------------------------------------
# Checkpointing and the full case run
# ---------------------------------------------------------------------------

STAGES = ("annotation", "evidence", "plan", "sections", "assembly")
STAGE_FILES = {
    "annotation": ("capability_matrix.json",),
    "evidence": ("capability_matrix.json", "evidence.json", "evidence_status.json"),
    "plan": ("plan.json",),
    "sections": ("sections.json",),
    "assembly": ("document.md", "provenance.json"),
}


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Checkpoint:
    """``checkpoint.json``: last completed stage plus SHA-256 of its artifacts."""

    def __init__(self, out_dir: Optional[Path]):
        self.out_dir = Path(out_dir) if out_dir else None
        self.state = {"completed": [], "digests": {}}
        if self.out_dir and (self.out_dir / "checkpoint.json").exists():
            self.state = load_json(self.out_dir / "checkpoint.json")

    @property
    def last_stage(self) -> Optional[str]:
        return self.state["completed"][-1] if self.state["completed"] else None

    def done(self, stage: str) -> bool:
        if not self.out_dir or stage not in self.state["completed"]:
            return False
        for name in STAGE_FILES[stage]:
            path = self.out_dir / name
            if not path.exists() or self.state["digests"].get(name) != _digest(path):
                return False
        return True

    def mark(self, stage: str):
        if not self.out_dir:
            return
        if stage not in self.state["completed"]:
            self.state["completed"].append(stage)
        for name in STAGE_FILES[stage]:
            self.state["digests"][name] = _digest(self.out_dir / name)
        self.state["last_completed_stage"] = stage
        dump_json(self.state, self.out_dir / "checkpoint.json")

    def reset_after(self, stage: str):
        k = STAGES.index(stage)
        self.state["completed"] = [s for s in self.state["completed"] if STAGES.index(s) <= k]


@dataclass
class CaseResult:
    table: Table
    matrix: CapabilityMatrix
    evidence: list[EvidenceItem]
    plan: WritingPlan
    document: Optional[SynthDocument]
    provenance: dict
    flagged: list = field(default_factory=list)
    quality: Optional[QualityScores] = None
    timings: dict = field(default_factory=dict)

    @property
    def degraded(self) -> bool:
        return bool(self.flagged)


def synthesize(
    table: Table,
    agents: Agents,
    cfg: LoopConfig = LoopConfig(),
    out_dir=None,
    external_evidence: Optional[Sequence[EvidenceItem]] = None,
    allow_degraded: bool = False,
    judge: bool = False,
) -> CaseResult:
    """Run the whole workflow for one ground-truth table.

    With ``external_evidence`` the run enters at planning. A case with
    flagged items (verifier retries exhausted, or fragments missing from the
    assembled text) raises :class:`DegradedCase` unless ``allow_degraded``;
    in that case the release files (document.md, provenance.json) are not
    written and ``quarantine.json`` lists the flagged items instead.
    """
    table.check_keys()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        dump_json(schema_to_json(table.schema), out / "schema.json")
        dump_json(table_to_json(table), out / "table.json")
    ckpt = Checkpoint(out)
    timings = {}
    flagged: list = []

    t0 = time.perf_counter()
    if external_evidence is not None:
        evidence, matrix = evidence_from_external(table, external_evidence)
        if out:
            dump_json(matrix_to_json(matrix), out / "capability_matrix.json")
            dump_json(evidence_to_json(evidence), out / "evidence.json")
            dump_json({"flagged_cells": [], "entry": "external"}, out / "evidence_status.json")
            ckpt.mark("annotation")
            ckpt.mark("evidence")
    elif ckpt.done("evidence"):
        matrix = matrix_from_json(load_json(out / "capability_matrix.json"))
        evidence = evidence_from_json(load_json(out / "evidence.json"), table)
        flagged.extend(
            {"kind": "cell", "cell_ref": list(c)} for c in load_json(out / "evidence_status.json")["flagged_cells"]
        )
    else:
        if ckpt.done("annotation"):
            coarse = matrix_from_json(load_json(out / "capability_matrix.json"))
        else:
            coarse = annotation_loop(table, agents, cfg)
            if out:
                dump_json(matrix_to_json(coarse), out / "capability_matrix.json")
                ckpt.mark("annotation")
        timings["annotation"] = time.perf_counter() - t0
        outcome = evidence_loop(coarse, table, agents, cfg)
        matrix, evidence = outcome.matrix, outcome.evidence
        flagged.extend({"kind": "cell", "cell_ref": list(c)} for c in outcome.flagged)
        if out:
            dump_json(matrix_to_json(matrix), out / "capability_matrix.json")
            dump_json(evidence_to_json(evidence), out / "evidence.json")
            dump_json({"flagged_cells": [list(c) for c in outcome.flagged]}, out / "evidence_status.json")
            ckpt.reset_after("annotation")
            ckpt.mark("evidence")
    timings["evidence"] = time.perf_counter() - t0

    if ckpt.done("plan"):
        plan = plan_from_json(load_json(out / "plan.json"))
    else:
        plan = planning_loop(evidence, agents, cfg)
        if out:
            dump_json(plan_to_json(plan), out / "plan.json")
            ckpt.reset_after("evidence")
            ckpt.mark("plan")
    timings["plan"] = time.perf_counter() - t0

    if ckpt.done("sections"):
        saved = load_json(out / "sections.json")
        bodies, section_flags = saved["bodies"], saved["flagged"]
    else:
        so = section_loop(plan, table, evidence, agents, cfg)
        bodies, section_flags = so.bodies, so.flagged
        if out:
            dump_json({"bodies": bodies, "flagged": section_flags, "attempts": so.attempts}, out / "sections.json")
            ckpt.reset_after("plan")
            ckpt.mark("sections")
    flagged.extend({"kind": "section", "section": k} for k in section_flags)
    timings["sections"] = time.perf_counter() - t0

    document = assemble_document(plan, bodies) if all(b for b in bodies) else None
    if document is None:
        flagged.append({"kind": "assembly", "detail": "missing section text"})
        absent = []
    else:
        absent = missing_fragments(document.assembled_text, evidence)
        flagged.extend({"kind": "fragment", "evidence_id": eid} for eid in absent)

    provenance = {
        "document_type": plan.document_type,
        "sections": [s.title for s in plan.sections],
        "evidence_sections": build_provenance(plan, evidence),
        "token_count": document.token_count if document else 0,
        "degraded": bool(flagged),
        "flagged": flagged,
    }
    result = CaseResult(table, matrix, evidence, plan, document, provenance, flagged, timings=timings)

    if flagged and not allow_degraded:
        if out:
            dump_json({"flagged": flagged}, out / "quarantine.json")
        raise DegradedCase(result)
    if document is None:
        raise AssemblyIncomplete("cannot release a case without all sections")

    if out:
        (out / "document.md").write_text(document.assembled_text, encoding="utf-8")
        dump_json(provenance, out / "provenance.json")
        ckpt.mark("assembly")
        quarantine = out / "quarantine.json"
        if quarantine.exists():
            quarantine.unlink()
    if judge:
        result.quality = judge_document(document, agents)
        if out:
            dump_json(result.quality.to_json(), out / "quality.json")
    timings["total"] = time.perf_counter() - t0
    return result
