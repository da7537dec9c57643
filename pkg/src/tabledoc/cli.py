"""Command-line entry point: ``tabledoc <command> ...``.

Exit codes: 0 success, 1 a case failed (or validation found violations),
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import glob as globlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import bundle
from .config import ConfigError, RunConfig
from .evaluation import Counts, EvalReport, corpus_stats, evaluate, metrics_from_counts
from .extraction import ExtractionConfig, ExtractionFailed, OUTPUT_FORMATS, CHUNKING, Prediction, run_extraction
from .llm import LLMError
from .matching import SIMILARITIES
from .model import TAXONOMY, ModelError, SynthDocument
from .serialize import dump_json, evidence_from_json, load_json, load_schema, load_table
from .synthesis import DegradedCase, SynthesisError, judge_document, synthesize

logger = logging.getLogger("tabledoc")

OK, CASE_FAILED, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# flag dest -> config key
_CONFIG_FLAGS = {
    "backend": "llm.backend",
    "base_url": "llm.base_url",
    "llm_model": "llm.model",
    "api_key_env": "llm.api_key_env",
    "transcript": "llm.transcript",
    "rate_limit": "llm.rate_limit_rpm",
    "token_budget": "llm.token_budget",
    "parallelism": "run.parallelism",
    "output_root": "run.output_root",
    "prompt_dir": "run.prompt_dir",
    "tau": "align.tau",
    "sim": "align.similarity",
}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="JSON config file")
    g.add_argument("--backend", choices=("http", "scripted"))
    g.add_argument("--base-url")
    g.add_argument("--llm-model", help="model used by every agent unless overridden per agent")
    g.add_argument("--api-key-env", help="name of the environment variable holding the API key")
    g.add_argument("--transcript", help="scripted backend transcript (JSON)")
    g.add_argument("--rate-limit", type=int, help="requests per minute")
    g.add_argument("--token-budget", type=int)
    g.add_argument("--parallelism", type=int)
    g.add_argument("--output-root")
    g.add_argument("--prompt-dir", help="directory of template overrides")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="tabledoc", description="Table-to-document benchmark synthesis and scoring")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="synthesize a document from a ground-truth table")
    p.add_argument("--schema", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--evidence", help="external source-tagged evidence; starts at planning")
    p.add_argument("--allow-degraded", action="store_true")
    p.add_argument("--judge", action="store_true", help="also score document quality")
    p.add_argument("--out", required=True, help="case bundle directory")

    p = sub.add_parser("extract", parents=[common], help="run a candidate model on a case document")
    p.add_argument("--case", required=True)
    p.add_argument("--model", required=True, help="candidate model name")
    p.add_argument("--format", choices=OUTPUT_FORMATS, default="markdown_table")
    p.add_argument("--chunking", choices=CHUNKING, default="none")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="score a prediction against a case")
    p.add_argument("--case", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--sim", choices=SIMILARITIES)
    p.add_argument("--out", required=True)

    p = sub.add_parser("judge", parents=[common], help="score document quality of a case")
    p.add_argument("--case", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", parents=[common], help="aggregate eval reports per model")
    p.add_argument("--glob", required=True, help="pattern matching report.json files")
    p.add_argument("--corpus", help="pattern matching case directories for corpus statistics")
    p.add_argument("--out", required=True, help="summary.json or summary.md")

    p = sub.add_parser("validate", parents=[common], help="re-run deterministic bundle checks")
    p.add_argument("--case", required=True, action="append")
    return parser


def _config(args) -> RunConfig:
    flags = {key: getattr(args, dest, None) for dest, key in _CONFIG_FLAGS.items()}
    return RunConfig.resolve(flags, config_file=args.config)


class RunLog:
    """Per-command structured log, written next to the outputs."""

    def __init__(self, command: str):
        self.data = {
            "command": command,
            "started_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "timings": {},
        }
        self._t0 = time.perf_counter()

    def gateway(self, gw):
        s = gw.stats
        self.data["backend"] = {
            "calls": s.calls,
            "retries": s.retries,
            "prompt_tokens": s.prompt_tokens,
            "completion_tokens": s.completion_tokens,
            "calls_by_agent": dict(sorted(s.by_tag.items())),
        }

    def write(self, path: Path, status: str, **extra):
        self.data.update(extra)
        self.data["status"] = status
        self.data["elapsed_s"] = round(time.perf_counter() - self._t0, 4)
        path.parent.mkdir(parents=True, exist_ok=True)
        dump_json(self.data, path)


def _log_path_for(out: Path) -> Path:
    return out.with_name(out.name + ".log.json")


def _read_inputs(fn, *paths):
    for p in paths:
        if not Path(p).exists():
            raise UsageError(f"no such file or directory: {p}")
    try:
        return fn()
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read input: {exc}") from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig) -> int:
    def load():
        schema = load_schema(args.schema)
        table = load_table(args.table, schema)
        external = evidence_from_json(load_json(args.evidence), table) if args.evidence else None
        return table, external

    paths = [args.schema, args.table] + ([args.evidence] if args.evidence else [])
    try:
        table, external = _read_inputs(load, *paths)
    except ModelError as exc:
        logger.error("invalid case input: %s", exc)
        return CASE_FAILED
    out = cfg.out_path(args.out)
    gw = cfg.build_gateway()
    log = RunLog("synth")
    try:
        result = synthesize(
            table, cfg.agents(gw), cfg.loop_config(), out_dir=out, external_evidence=external,
            allow_degraded=args.allow_degraded, judge=args.judge,
        )
    except DegradedCase as exc:
        log.gateway(gw)
        log.write(out / "run_log.json", "degraded", timings=exc.result.timings, flagged=exc.result.flagged)
        logger.error("case degraded: %d flagged item(s); see %s", len(exc.result.flagged), out / "quarantine.json")
        return CASE_FAILED
    except (SynthesisError, LLMError, ModelError) as exc:
        log.gateway(gw)
        log.write(out / "run_log.json", "failed", error=f"{type(exc).__name__}: {exc}")
        logger.error("synthesis failed: %s", exc)
        return CASE_FAILED
    log.gateway(gw)
    log.write(out / "run_log.json", "ok", timings={k: round(v, 4) for k, v in result.timings.items()})
    logger.info("wrote %s", out)
    return OK


def _load_document(case: Path) -> str:
    return (case / "document.md").read_text(encoding="utf-8")


def cmd_extract(args, cfg: RunConfig) -> int:
    case = Path(args.case)
    schema, text = _read_inputs(
        lambda: (load_schema(case / "schema.json"), _load_document(case)),
        case / "schema.json", case / "document.md",
    )
    gw = cfg.build_gateway()
    xcfg = ExtractionConfig(args.model, args.format, args.chunking)
    out = cfg.out_path(args.out)
    log = RunLog("extract")
    try:
        pred = run_extraction(text, schema, xcfg, gw, template=cfg.templates()["extractor"])
    except (ExtractionFailed, LLMError) as exc:
        log.gateway(gw)
        log.write(_log_path_for(out), "failed", error=str(exc), raw_response=getattr(exc, "raw_response", ""))
        logger.error("extraction failed: %s", exc)
        return CASE_FAILED
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_json(pred.to_json(), out)
    log.gateway(gw)
    log.write(_log_path_for(out), "ok", timings={"extraction_ms": pred.latency_ms})
    return OK


def cmd_eval(args, cfg: RunConfig) -> int:
    case = Path(args.case)
    schema, gt, matrix = _read_inputs(
        lambda: bundle.load_case_table(case),
        case / "schema.json", case / "table.json", case / "capability_matrix.json",
    )
    obj = _read_inputs(lambda: load_json(args.pred), args.pred)
    out = cfg.out_path(args.out)
    log = RunLog("eval")
    try:
        pred = Prediction.from_json(obj, schema)
        scored = evaluate(pred.table, gt, matrix, cfg.alignment(), case_id=case.name)
    except (ModelError, KeyError) as exc:
        logger.error("cannot score %s against %s: %s", args.pred, case, exc)
        log.write(_log_path_for(out), "failed", error=str(exc))
        return CASE_FAILED
    report = metrics_from_counts(scored.counts, [scored])
    doc = {
        "model": pred.model_name,
        "case": case.name,
        "alignment_config": {"tau": cfg["align.tau"], "similarity": cfg["align.similarity"]},
        **report.to_json(verdicts=True),
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_json(doc, out)
    log.write(_log_path_for(out), "ok")
    return OK


def cmd_judge(args, cfg: RunConfig) -> int:
    case = Path(args.case)
    text = _read_inputs(lambda: _load_document(case), case / "document.md")
    gw = cfg.build_gateway()
    out = cfg.out_path(args.out)
    log = RunLog("judge")
    try:
        doc = SynthDocument((("document", text),), assembled_text=text)
        scores = judge_document(doc, cfg.agents(gw))
    except (SynthesisError, LLMError, ModelError) as exc:
        log.gateway(gw)
        log.write(_log_path_for(out), "failed", error=str(exc))
        logger.error("judge failed: %s", exc)
        return CASE_FAILED
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_json(scores.to_json(), out)
    log.gateway(gw)
    log.write(_log_path_for(out), "ok")
    return OK


SUB_ORDER = [s for subs in TAXONOMY.values() for s in subs]


def summarize(reports: Sequence[dict]) -> dict:
    """Sum counts per model, then compute rates once per model."""
    per_model: dict[str, tuple[Counts, list]] = {}
    for rep in reports:
        model = rep.get("model", "unknown")
        counts, cases = per_model.setdefault(model, (Counts(), []))
        counts += Counts.from_json(rep["counts"])
        cases.append(rep.get("case", ""))
    models = {}
    for model in sorted(per_model):
        counts, cases = per_model[model]
        report: EvalReport = metrics_from_counts(counts)
        models[model] = {"cases": sorted(cases), "metrics": report.metrics_json(), "counts": counts.to_json()}
    return {"models": models}


def _pct(v) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def summary_markdown(summary: dict) -> str:
    models = summary["models"]
    lines = ["## Overall", "", "| Model | P | R | F1 | R_dir | R_ind | Δ (%) |", "|---|---|---|---|---|---|---|"]
    for name, m in models.items():
        x = m["metrics"]
        lines.append(
            f"| {name} | {_pct(x['precision'])} | {_pct(x['recall'])} | {_pct(x['f1'])} | "
            f"{_pct(x['recall_direct'])} | {_pct(x['recall_indirect'])} | {_pct(x['delta_pct'])} |"
        )
    cats = list(TAXONOMY)
    lines += ["", "## Capability success rate", "",
              "| Model | " + " | ".join(c.value for c in cats) + " |",
              "|---|" + "---|" * len(cats)]
    for name, m in models.items():
        lines.append(f"| {name} | " + " | ".join(_pct(m["metrics"]["cssr"].get(c.value)) for c in cats) + " |")
    lines += ["", "## Sub-capability success rate", "",
              "| Model | " + " | ".join(s.value for s in SUB_ORDER) + " |",
              "|---|" + "---|" * len(SUB_ORDER)]
    for name, m in models.items():
        lines.append(f"| {name} | " + " | ".join(_pct(m["metrics"]["scssr"].get(s.value)) for s in SUB_ORDER) + " |")
    if "corpus" in summary:
        c = summary["corpus"]
        lines += ["", "## Corpus", "", "| | Min | Max | Avg |", "|---|---|---|---|"]
        for k in ("rows", "columns", "tokens"):
            lo, hi, avg = c[k]
            lines.append(f"| {k} | {lo} | {hi} | {avg:.1f} |")
    return "\n".join(lines) + "\n"


def cmd_report(args, cfg: RunConfig) -> int:
    # run logs sit beside their reports and would match broad patterns
    paths = sorted(p for p in globlib.glob(args.glob, recursive=True) if not p.endswith(".log.json"))
    if not paths:
        raise UsageError(f"no report files match {args.glob!r}")
    with ThreadPoolExecutor(cfg["run.parallelism"]) as pool:
        reports = list(pool.map(load_json, paths))
    summary = summarize(reports)
    if args.corpus:
        dirs = sorted(p for p in globlib.glob(args.corpus, recursive=True) if Path(p).is_dir())
        if not dirs:
            raise UsageError(f"no case directories match {args.corpus!r}")
        summary["corpus"] = corpus_stats(bundle.load_case(d) for d in dirs)
    out = cfg.out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".md":
        out.write_text(summary_markdown(summary), encoding="utf-8")
    else:
        dump_json(summary, out)
    return OK


def cmd_validate(args, cfg: RunConfig) -> int:
    with ThreadPoolExecutor(cfg["run.parallelism"]) as pool:
        results = list(pool.map(bundle.validate_case, args.case))
    status = OK
    for case, problems in zip(args.case, results):
        if problems:
            status = CASE_FAILED
            print(f"{case}: {len(problems)} violation(s)")
            for p in problems:
                print(f"  - {p}")
        else:
            print(f"{case}: ok")
    return status


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "eval": cmd_eval,
    "judge": cmd_judge,
    "report": cmd_report,
    "validate": cmd_validate,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return USAGE
    except SystemExit as exc:  # --help
        return OK if exc.code in (0, None) else USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"tabledoc {args.command}: {exc}", file=sys.stderr)
        return USAGE


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
