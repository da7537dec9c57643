"""Hypothesis properties for normalization, serialization and parsing."""

import json

from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from tabledoc.llm import extract_structured
from tabledoc.markdown import parse_markdown_table, render_markdown
from tabledoc.model import (
    AttributeSpec,
    CrossConstraint,
    ResolutionRule,
    Schema,
    Table,
    canonical_evidence,
    eligible_missing_cells,
    inject_missing_cells,
    normalize_cell,
)
from tabledoc.serialize import (
    schema_from_json,
    schema_to_json,
    table_from_csv,
    table_from_json,
    table_to_csv,
    table_to_json,
)

cell_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc")), min_size=0, max_size=20
)
messy = st.one_of(
    cell_text,
    st.from_regex(r"\s*-?\$?[0-9]{1,3}(,[0-9]{3}){0,3}(\.[0-9]+)?\s*", fullmatch=True),
    st.sampled_from(["N/A", "none", "(n/a)", "--", "-.5", "2025-06-20", " NaN ", "1/2/2024", "Ⅻ", "ﬁ"]),
)


@settings(max_examples=500)
@given(messy)
def test_normalize_idempotent(s):
    once = normalize_cell(s)
    assert normalize_cell(once) == once


@given(messy)
def test_normalize_is_casefolded_and_trimmed(s):
    out = normalize_cell(s)
    assert out == out.strip()
    assert "  " not in out
    assert out.casefold() == out or normalize_cell(out.casefold()) == out


names = st.from_regex(r"[A-Z][a-z]{0,6}(_[A-Z][a-z]{0,5})?", fullmatch=True)
plain = st.text(alphabet="abcdefghij 0123456789-.", min_size=1, max_size=12).map(str.strip).filter(bool)


@st.composite
def schemas(draw):
    attr_names = draw(st.lists(names, min_size=2, max_size=5, unique=True))
    types = ["text"] + [draw(st.sampled_from(["text", "integer", "decimal", "date"])) for _ in attr_names[1:]]
    attrs = tuple(
        AttributeSpec(n, description=draw(st.sampled_from(["", "some value"])), data_type=t,
                      unit=draw(st.sampled_from([None, "USD"])), examples=tuple(draw(st.lists(plain, max_size=2))))
        for n, t in zip(attr_names, types)
    )
    constraints, rules = (), ()
    nums = [a.name for a in attrs if a.data_type.value in ("integer", "decimal")]
    if len(nums) >= 2 and draw(st.booleans()):
        constraints = (CrossConstraint(nums[0], draw(st.sampled_from(["<", "<=", "=", ">=", ">"])), nums[1]),)
    if nums and draw(st.booleans()):
        rules = (ResolutionRule(nums[0], draw(st.sampled_from(["max", "min", "highest_precision"]))),)
    return Schema(draw(plain), attrs, 0, constraints, rules)


@st.composite
def tables(draw, with_nulls=True):
    schema = draw(schemas())
    n = draw(st.integers(1, 6))
    keys = draw(st.lists(plain, min_size=n, max_size=n, unique_by=normalize_cell))
    value = st.one_of(st.none(), plain) if with_nulls else plain
    rows = tuple((k,) + tuple(draw(value) for _ in range(schema.m - 1)) for k in keys)
    return Table(schema, rows)


@given(schemas())
def test_schema_round_trip(schema):
    assert schema_from_json(json.loads(json.dumps(schema_to_json(schema)))) == schema


@given(tables())
def test_table_json_round_trip(table):
    assert table_from_json(json.loads(json.dumps(table_to_json(table))), table.schema) == table


@given(tables())
def test_table_csv_round_trip(table):
    assert table_from_csv(table_to_csv(table), table.schema) == table


@given(tables())
def test_markdown_round_trip(table):
    # Values that normalize to NULL read back as NULL; exclude them here.
    assume(all(v is None or normalize_cell(v) != "null" for _, _, v in table.cells()))
    assert parse_markdown_table(render_markdown(table), table.schema) == table


@given(st.recursive(
    st.one_of(st.none(), st.booleans(), st.integers(), st.text(max_size=8)),
    lambda inner: st.one_of(st.lists(inner, max_size=3), st.dictionaries(st.text(max_size=5), inner, max_size=3)),
    max_leaves=10,
).filter(lambda v: isinstance(v, (list, dict))), st.sampled_from(["", "Sure! ", "```json\n"]),
    st.sampled_from(["", " hope that helps", "\n```"]))
def test_extract_structured_finds_embedded_json(obj, prefix, suffix):
    assert extract_structured(prefix + json.dumps(obj) + suffix) == obj


@given(plain, names, plain)
def test_canonical_evidence_contains_parts(entity, attr, value):
    text = canonical_evidence(entity, attr, value)
    assert entity in text and attr in text and value in text


@settings(suppress_health_check=[HealthCheck.too_slow])
@given(tables(), st.floats(0, 0.99), st.integers(0, 2**32))
def test_inject_missing_invariants(table, fraction, seed):
    eligible = eligible_missing_cells(table)
    assume(eligible)
    out, removed = inject_missing_cells(table, fraction, seed)
    before = sum(v is None for _, _, v in table.cells())
    after = sum(v is None for _, _, v in out.cells())
    k = int(fraction * len(eligible) + 1e-9)
    assert len(removed) == k and after - before == k
    assert [out.entity(i) for i in range(out.n)] == [table.entity(i) for i in range(table.n)]
    assert inject_missing_cells(table, fraction, seed) == (out, removed)
