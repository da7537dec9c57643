"""tabledoc: build table-extraction benchmarks by writing documents from tables.

The workflow runs in two directions. :func:`synthesize` turns a ground-truth
table into a document whose cells are recoverable, each with a
capability label saying what skill recovering it takes.
:func:`run_extraction` asks a candidate model to rebuild the table, and
:func:`evaluate` / :func:`compute_metrics` score the result per cell and per
capability.
"""

from .model import (
    NULL_TOKEN,
    SUB_TO_CATEGORY,
    TAXONOMY,
    AttributeSpec,
    CapabilityLabel,
    CapabilityMatrix,
    Category,
    CrossConstraint,
    DataType,
    EMPTY_LABEL,
    EvidenceItem,
    ModelError,
    ResolutionRule,
    Schema,
    Section,
    Sub,
    SynthDocument,
    Table,
    WritingPlan,
    canonical_evidence,
    inject_missing_cells,
    normalize_cell,
)
from .markdown import parse_markdown_table, render_markdown
from .llm import ChatRequest, ChatResponse, Gateway, HTTPBackend, ScriptedBackend, extract_structured
from .matching import max_weight_matching, similarity
from .synthesis import Agents, LoopConfig, synthesize
from .extraction import ExtractionConfig, Prediction, run_extraction
from .evaluation import (
    AlignmentConfig,
    align_rows,
    compute_metrics,
    corpus_stats,
    evaluate,
    f1_score,
    relative_drop,
    score_cells,
)
from .bundle import load_case, validate_case

__version__ = "0.1.0"
