"""Release gates. Each test prints one ``[PASS]``/``[FAIL]`` line; the lines are
repeated in the terminal summary."""

import functools
import itertools
import json
import random
import shutil
import time

import numpy as np
import pytest

import tabledoc.evaluation as evaluation
from conftest import fixture_path, scripted
from randomized import check_identities, random_case
from tabledoc.bundle import find_cases, load_case, validate_case
from tabledoc.cli import dispatch
from tabledoc.evaluation import AlignmentConfig, align_rows, compute_metrics, corpus_stats, evaluate, f1_score, relative_drop
from tabledoc.llm import Gateway, ScriptedBackend
from tabledoc.model import NULL_TOKEN, AttributeSpec, CapabilityLabel, CapabilityMatrix, Schema, Sub, Table, normalize_cell
from tabledoc.serialize import load_json, load_schema, load_table
from tabledoc.synthesis import Agents, DegradedCase, LoopConfig, annotation_loop, synthesize

RESULTS: dict[int, str] = {}


def criterion(num: int, title: str):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            ok, detail = False, ""
            try:
                detail = fn(*args, **kwargs) or ""
                ok = True
            except Exception as exc:
                detail = (str(exc).splitlines() or [type(exc).__name__])[0][:160]
                raise
            finally:
                line = f"[{'PASS' if ok else 'FAIL'}] {num}. {title} ({time.perf_counter() - t0:.2f}s) {detail}".rstrip()
                RESULTS[num] = line
                print(line)

        return wrapper

    return deco


# ---------------------------------------------------------------------------

REFERENCE = [
    # model, P, R, F1, R_dir, R_ind, delta
    ("Qwen3-4B", 44.09, 27.20, 33.65, 35.47, 19.33, 45.50),
    ("Qwen3-32B", 68.64, 58.18, 62.98, 73.84, 43.25, 41.43),
    ("Llama3.1-8B", 70.99, 62.35, 66.39, 74.10, 51.15, 30.97),
    ("Llama3.1-70B", 75.67, 73.81, 74.73, 91.00, 57.40, 36.92),
    ("DeepSeek-V3.2", 85.23, 85.37, 85.30, 96.37, 74.91, 22.27),
    ("GPT-5-mini", 85.81, 83.17, 84.47, 92.93, 73.88, 20.50),
    ("GPT-5", 88.53, 83.59, 85.99, 92.48, 75.12, 18.77),
    ("Gemini-3-flash", 90.46, 88.24, 89.34, 95.93, 80.90, 15.67),
]
TOL = 0.01 + 1e-9


@criterion(1, "F1 and relative-drop formulas reproduce the reference rows")
def test_formula_reproduction():
    worst_f1 = worst_delta = 0.0
    for name, p, r, f1, r_dir, r_ind, delta in REFERENCE:
        got_f1, got_delta = f1_score(p, r), relative_drop(r_dir, r_ind)
        assert abs(got_f1 - f1) <= TOL, f"{name}: F1 {got_f1} vs {f1}"
        assert abs(got_delta - delta) <= TOL, f"{name}: delta {got_delta} vs {delta}"
        worst_f1 = max(worst_f1, abs(got_f1 - f1))
        worst_delta = max(worst_delta, abs(got_delta - delta))
    return f"max |dF1|={worst_f1:.2f}, max |dDelta|={worst_delta:.2f}"


# ---------------------------------------------------------------------------

_PERMS = {k: np.array(list(itertools.permutations(range(k)))) for k in range(1, 8)}


def brute_force(w: np.ndarray, tau: float) -> float:
    w = np.where(w >= tau, w, 0.0)
    size = max(w.shape)
    pad = np.zeros((size, size))
    pad[: w.shape[0], : w.shape[1]] = w
    perms = _PERMS[size]
    return float(pad[np.arange(size), perms].sum(axis=1).max())


def dummy_table(n):
    schema = Schema("x", (AttributeSpec("Key"),))
    return Table(schema, tuple((f"r{i}",) for i in range(n)))


@criterion(2, "row alignment equals brute-force optimum on 1000 random instances")
def test_matching_oracle(monkeypatch):
    rng = np.random.default_rng(20251)
    current = {}
    monkeypatch.setattr(evaluation, "key_weights", lambda pred, gt, sim: current["w"])
    t0 = time.perf_counter()
    for _ in range(1000):
        n_pred, n_gt = rng.integers(1, 8, size=2)
        w = rng.random((n_pred, n_gt))
        tau = float(rng.choice([0.0, 0.25, 0.5, 0.85]))
        current["w"] = w
        al = align_rows(dummy_table(n_pred), dummy_table(n_gt), AlignmentConfig(tau=tau))
        total = sum(s for *_, s in al.pairs)
        assert all(s >= tau and s == w[p, g] for p, g, s in al.pairs)
        assert len({p for p, _, _ in al.pairs}) == len(al.pairs) == len({g for _, g, _ in al.pairs})
        assert abs(total - brute_force(w, tau)) < 1e-9
    elapsed = time.perf_counter() - t0
    assert elapsed < 10, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------

HOSPITAL = fixture_path("hospital")


def synth_hospital(out):
    return dispatch(["synth", "--backend", "scripted", "--transcript", str(HOSPITAL / "transcript.json"),
                     "--schema", str(HOSPITAL / "schema.json"), "--table", str(HOSPITAL / "table.json"),
                     "--out", str(out)])


def oracle_prediction(case_dir, out):
    return dispatch(["extract", "--backend", "scripted", "--transcript", str(HOSPITAL / "oracle_extractor.json"),
                     "--case", str(case_dir), "--model", "oracle", "--out", str(out)])


@criterion(3, "offline synth, validate and oracle extraction on the 4x4 fixture")
def test_offline_end_to_end(tmp_path):
    case = tmp_path / "hospital"
    t0 = time.perf_counter()
    assert synth_hospital(case) == 0
    synth_s = time.perf_counter() - t0
    assert synth_s < 5, f"synth took {synth_s:.1f}s"
    prov = load_json(case / "provenance.json")
    assert prov["degraded"] is False and prov["flagged"] == []
    matrix = load_case(case).matrix
    present = {lab.sub.value if lab.sub else lab.category.value for row in matrix.labels for lab in row}
    assert present == {"EMPTY", "unit_transformation", "arithmetic_reasoning", "missing_value_faithfulness",
                       "constraint_based_resolution"}
    assert validate_case(case) == []
    assert oracle_prediction(case, tmp_path / "pred.json") == 0
    assert dispatch(["eval", "--case", str(case), "--pred", str(tmp_path / "pred.json"),
                     "--out", str(tmp_path / "report.json")]) == 0
    m = load_json(tmp_path / "report.json")["metrics"]
    assert (m["precision"], m["recall"], m["f1"]) == (100.0, 100.0, 100.0)
    assert m["cssr"] and all(v == 100.0 for v in m["cssr"].values())
    assert m["scssr"] and all(v == 100.0 for v in m["scssr"].values())
    return f"synth {synth_s:.2f}s, labels {len(present)}, CSSR {sorted(m['cssr'])}"


# ---------------------------------------------------------------------------


@criterion(4, "a fabricated value in the NULL cell zeroes faithfulness and costs 1/|C| recall")
def test_faithfulness_scoring():
    case = load_case(fixture_path("cases", "hospital"))
    gw = Gateway(ScriptedBackend.from_file(HOSPITAL / "oracle_extractor.json"))
    from tabledoc.extraction import ExtractionConfig, run_extraction

    pred = run_extraction(case.document, case.schema, ExtractionConfig("oracle"), gw).table
    null_cells = [(i, j) for i, j, v in case.table.cells() if v is None]
    assert len(null_cells) == 1
    i, j = null_cells[0]
    rows = [list(r) for r in pred.rows]
    assert normalize_cell(rows[i][j]) == NULL_TOKEN
    rows[i][j] = "2025-01-15"
    fabricated = pred.with_rows([tuple(r) for r in rows])

    before = compute_metrics([evaluate(pred, case.table, case.matrix)])
    after = compute_metrics([evaluate(fabricated, case.table, case.matrix)])
    n_cells = case.table.n * case.table.m
    assert before.scssr["missing_value_faithfulness"] == 100.0
    assert after.scssr["missing_value_faithfulness"] == 0.0
    assert before.counts.tp - after.counts.tp == 1
    assert before.recall - after.recall == pytest.approx(100 / n_cells, abs=1e-9)
    return f"recall {before.recall} -> {after.recall} (1/{n_cells})"


# ---------------------------------------------------------------------------


@criterion(5, "metric identities on 200 randomized fixtures")
def test_randomized_identities():
    t0 = time.perf_counter()
    for seed in range(1000, 1200):
        pred, gt, matrix = random_case(seed)
        check_identities(compute_metrics([evaluate(pred, gt, matrix)]))
        sizes = [len(align_rows(pred, gt, AlignmentConfig(tau=t)).pairs) for t in (0.0, 0.5, 0.85, 0.95, 1.0)]
        assert sizes == sorted(sizes, reverse=True), f"seed {seed}: {sizes}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 20, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------

NULLS = ["", "null", "n/a", "none", "-", "nan"]
WORDS = ["abc", "corp", "delta", "holdings", "north", "river", "ltd", "group"]


def _recase(rng, s):
    return "".join(ch.upper() if rng.random() < 0.5 else ch for ch in s)


def _pad(rng, s):
    return " " * rng.randrange(3) + s + " \t"[: rng.randrange(3)]


def normalization_corpus(seed=7, size=500):
    """(raw, expected-or-None) pairs; expected is computed from the generator,
    not from the implementation."""
    rng = random.Random(seed)
    out = []
    for k in range(size):
        kind = k % 5
        if kind == 0:  # case, spacing, trailing punctuation
            words = rng.sample(WORDS, rng.randint(1, 3))
            raw = _pad(rng, "  ".join(_recase(rng, w) for w in words) + rng.choice(["", ".", ",", "!"]))
            out.append((raw, " ".join(words)))
        elif kind == 1:  # thousands separators
            n = rng.randrange(1000, 10**9)
            out.append((_pad(rng, f"{n:,}"), str(n)))
        elif kind == 2:  # null synonyms
            out.append((_pad(rng, _recase(rng, rng.choice(NULLS))), NULL_TOKEN))
        elif kind == 3:  # dates keep their separators
            y, m, d = rng.randrange(1990, 2030), rng.randrange(1, 13), rng.randrange(1, 29)
            raw = f"{y}-{m:02d}-{d:02d}" if rng.random() < 0.5 else f"{m:02d}/{d:02d}/{y}"
            out.append((_pad(rng, raw), raw))
        else:  # noise: only idempotence is checked
            alphabet = "aZ 09.,-/$%()'\"éß\tN/A"
            out.append(("".join(rng.choice(alphabet) for _ in range(rng.randrange(12))), None))
    return out


@criterion(6, "normalization idempotence and example classes over a 500-string corpus")
def test_normalization_suite():
    corpus = normalization_corpus()
    assert len(corpus) == 500
    checked = 0
    for raw, expected in corpus:
        once = normalize_cell(raw)
        assert normalize_cell(once) == once, f"not idempotent on {raw!r}"
        if expected is not None:
            assert once == expected, f"{raw!r} -> {once!r}, expected {expected!r}"
            checked += 1
    return f"{checked} class examples, 500 idempotence checks"


# ---------------------------------------------------------------------------


def adversarial_agents(retries_e, retries_s):
    """Hospital transcript with every verifier reply replaced by FAIL,
    enough copies of each generator reply for the configured budgets."""
    from conftest import section_verdict_json, verdict_json

    entries = [(e["match"], e["response"]) for e in load_json(HOSPITAL / "transcript.json")["entries"]]
    out = []
    for match, response in entries:
        if "evidence verifier" in match:
            out += [(match, verdict_json(False, "value cannot be recovered"))] * retries_e
        elif "section verifier" in match:
            out += [(match, section_verdict_json(False, "mentions an ungrounded figure"))] * retries_s
        elif "evidence refiner" in match:
            out += [(match, response)] * retries_e
        elif "section writer" in match:
            out += [(match, response)] * retries_s
        else:
            out.append((match, response))
    return scripted(out, strict=False)


@criterion(7, "always-FAIL verifiers stop at the configured retry counts; annotation falls back after 3 rounds")
def test_loop_bounds(hospital_table):
    seen = []
    for re_, rs in ((3, 3), (2, 4), (1, 1)):
        agents, backend = adversarial_agents(re_, rs)
        with pytest.raises(DegradedCase) as exc:
            synthesize(hospital_table, agents, LoopConfig(evidence_retries=re_, section_retries=rs))
        calls = agents.gateway.stats.by_tag
        assert calls["refiner"] == calls["refine_verifier"] == 3 * re_, calls
        assert calls["writer"] == calls["section_verifier"] == 2 * rs, calls
        flagged = exc.value.result.flagged
        assert sorted(f["cell_ref"] for f in flagged if f["kind"] == "cell") == [[0, 2], [0, 3], [1, 3]]
        assert sorted(f["section"] for f in flagged if f["kind"] == "section") == [1, 2]
        assert exc.value.result.provenance["degraded"] is True
        seen.append(f"{re_}/{rs}")

    agents, backend = scripted([("### Role: capability annotator", '{"assignments": {}}')] * 5, strict=False)
    matrix = annotation_loop(hospital_table, agents, LoopConfig(annotation_rounds=3))
    assert len(backend.requests) == 3
    assert matrix.is_complete and all(lab.is_empty for row in matrix.labels for lab in row)
    return f"retry budgets {', '.join(seen)}; annotator calls 3"


# ---------------------------------------------------------------------------


@criterion(8, "corpus statistics over bundled fixtures and a hand-computed 2-case corpus")
def test_corpus_stats():
    cases = [load_case(p) for p in find_cases(fixture_path("cases"))]
    assert len(cases) == 2
    stats = corpus_stats(cases)
    for key in ("rows", "columns", "tokens"):
        lo, hi, avg = stats[key]
        assert lo <= avg <= hi
    rows = sorted(c.table.n for c in cases)
    assert stats["rows"] == (rows[0], rows[-1], sum(rows) / 2)
    tokens = [len((c.path / "document.md").read_text().split()) for c in cases]
    assert stats["tokens"] == (min(tokens), max(tokens), sum(tokens) / 2)

    def synthetic(n, m, words, label):
        schema = Schema("x", tuple(AttributeSpec(f"A{j}") for j in range(m)))
        table = Table(schema, tuple((f"k{i}",) + ("v",) * (m - 1) for i in range(n)))
        return type("C", (), {"table": table, "matrix": CapabilityMatrix(((label,) * m,) * n), "token_count": words})()

    ta = CapabilityLabel.of(Sub.UNIT_TRANSFORMATION)
    s = corpus_stats([synthetic(2, 3, 120, ta), synthetic(6, 5, 481, CapabilityLabel.of(Sub.LOGICAL_REASONING))])
    assert s["rows"] == (2, 6, 4.0)
    assert s["columns"] == (3, 5, 4.0)
    assert s["tokens"] == (120, 481, 300.5)
    assert s["cells"] == 36 and s["category_share"] == {"RI": 30 / 36, "TA": 6 / 36}
    return "rows {} cols {} tokens {}".format(*(stats[k] for k in ("rows", "columns", "tokens")))


@pytest.fixture
def hospital_table():
    schema = load_schema(HOSPITAL / "schema.json")
    return load_table(HOSPITAL / "table.json", schema)
