from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import pytest

from tabledoc.llm import Gateway, ScriptedBackend
from tabledoc.model import AttributeSpec, CrossConstraint, Schema, Table
from tabledoc.serialize import load_schema, load_table
from tabledoc.synthesis import Agents

FIXTURES = Path(str(resources.files("tabledoc") / "fixtures"))


def fixture_path(*parts) -> Path:
    return FIXTURES.joinpath(*parts)


def scripted(entries, strict=True, **gw):
    """Agents + backend over an in-memory transcript of (match, response) pairs."""
    backend = ScriptedBackend([{"match": m, "response": r} for m, r in entries], strict=strict)
    gateway = Gateway(backend, sleep=lambda s: None, **gw)
    return Agents(gateway), backend


def verdict_json(passed: bool, rationale="wrong value", suggestion="fix it") -> str:
    checks = {"value_correctness": passed, "label_alignment": True, "schema_leakage": True}
    return json.dumps({
        "status": "PASS" if passed else "FAIL",
        "evaluation": checks,
        "feedback": {"fail_rationale": None if passed else rationale,
                     "revise_suggest": None if passed else suggestion},
    })


def section_verdict_json(passed: bool, description="mentions an unlisted amount") -> str:
    if passed:
        return json.dumps({"verification_status": "PASS",
                           "evaluation": {"faithful_grounding": True, "schema_leakage": True},
                           "errors": []})
    return json.dumps({"verification_status": "FAIL",
                       "evaluation": {"faithful_grounding": True, "schema_leakage": False},
                       "errors": [{"type": "schema_leakage", "description": description}]})


@pytest.fixture
def hospital_schema() -> Schema:
    return load_schema(fixture_path("hospital", "schema.json"))


@pytest.fixture
def hospital_table(hospital_schema) -> Table:
    return load_table(fixture_path("hospital", "table.json"), hospital_schema)


@pytest.fixture
def small_schema() -> Schema:
    return Schema(
        "company",
        (
            AttributeSpec("Name"),
            AttributeSpec("Revenue", data_type="integer", unit="USD"),
            AttributeSpec("Founded", data_type="date"),
        ),
    )


@pytest.fixture
def small_table(small_schema) -> Table:
    return Table(
        small_schema,
        (("ABC Corp", "3480000", "2001-05-02"), ("Delta Ltd", "12000", None), ("Echo Inc", "77", "1999-01-01")),
    )


@pytest.fixture
def dated_schema() -> Schema:
    return Schema(
        "stay",
        (AttributeSpec("Id"), AttributeSpec("Start", data_type="date"), AttributeSpec("End", data_type="date"),
         AttributeSpec("Cost", data_type="integer")),
        cross_constraints=(CrossConstraint("End", ">=", "Start"),),
    )


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for num in sorted(results):
            terminalreporter.write_line(results[num])
