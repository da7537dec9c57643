"""Prompt templates, one text file per agent, with ``{placeholder}`` slots.

Only bare ``{identifier}`` tokens are placeholders, so JSON examples inside a
template are left alone. A directory passed to :func:`load_templates`
overrides the bundled files by name.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

AGENTS = (
    "annotator",
    "refiner",
    "refine_verifier",
    "planner",
    "writer",
    "section_verifier",
    "judge",
    "extractor",
)

_PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")

# Judge scale per dimension, 1 (poor) to 5 (excellent).
RUBRIC = {
    "lexical_richness": {
        1: "same few words recycled throughout",
        2: "plain wording with little range",
        3: "serviceable vocabulary, some variation",
        4: "varied and precise word choice",
        5: "expert, finely shaded vocabulary",
    },
    "logical_consistency": {
        1: "claims stand alone with no links between them",
        2: "reasoning is hard to trace",
        3: "ordering is sensible with simple connectives",
        4: "arguments build on one another convincingly",
        5: "every claim follows and is clearly attributed",
    },
    "textual_coherence": {
        1: "reader loses the thread repeatedly",
        2: "abrupt shifts between ideas",
        3: "readable despite a few clumsy joins",
        4: "flows well with minor rough spots",
        5: "reads as one continuous, natural piece",
    },
}


class PromptError(KeyError):
    pass


def rubric_text() -> str:
    lines = []
    for dim, levels in RUBRIC.items():
        lines.append(dim.replace("_", " ").title() + ":")
        lines.extend(f"  {score} = {desc}" for score, desc in levels.items())
    return "\n".join(lines)


def load_templates(override_dir: Optional[Path] = None) -> dict[str, str]:
    pkg = resources.files(__name__)
    templates = {name: (pkg / f"{name}.txt").read_text(encoding="utf-8") for name in AGENTS}
    if override_dir:
        for name in AGENTS:
            path = Path(override_dir) / f"{name}.txt"
            if path.exists():
                templates[name] = path.read_text(encoding="utf-8")
    return templates


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER.findall(template))


def render(template: str, values: Mapping[str, object]) -> str:
    missing = placeholders(template) - set(values)
    if missing:
        raise PromptError(f"no value for placeholder(s): {sorted(missing)}")
    return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), template)
