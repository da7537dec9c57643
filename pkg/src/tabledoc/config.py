"""Layered run configuration: flags > environment > config file > defaults.

Keys are dotted (``llm.base_url``). The config file is JSON with one nested
object per prefix::

    {"llm": {"backend": "http", "base_url": "http://localhost:8000/v1",
             "model": "qwen3-8b", "models": {"judge": "other-model"}},
     "align": {"tau": 0.9}}

Every key can also come from ``TABLEDOC_<KEY>`` with dots turned into
underscores, e.g. ``TABLEDOC_ALIGN_TAU=0.9``. The API key itself is read only
from the environment variable named by ``llm.api_key_env``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .evaluation import AlignmentConfig
from .llm import Gateway, HTTPBackend, ScriptedBackend
from .synthesis import Agents, LoopConfig
from . import prompts

ENV_PREFIX = "TABLEDOC_"

# key -> (default, type)
KEYS: dict[str, tuple[Any, type]] = {
    "llm.backend": ("http", str),
    "llm.base_url": (None, str),
    "llm.model": (None, str),
    "llm.models": ({}, dict),
    "llm.api_key_env": ("TABLEDOC_API_KEY", str),
    "llm.transcript": (None, str),
    "llm.strict": (True, bool),
    "llm.timeout": (120.0, float),
    "llm.max_attempts": (3, int),
    "llm.backoff_base": (1.0, float),
    "llm.rate_limit_rpm": (None, int),
    "llm.token_budget": (None, int),
    "loop.annotation_rounds": (3, int),
    "loop.evidence_retries": (3, int),
    "loop.section_retries": (3, int),
    "align.tau": (0.85, float),
    "align.similarity": ("normalized_edit", str),
    "run.parallelism": (1, int),
    "run.output_root": (".", str),
    "run.prompt_dir": (None, str),
}

BACKENDS = ("http", "scripted")


class ConfigError(ValueError):
    pass


def env_name(key: str) -> str:
    return ENV_PREFIX + key.upper().replace(".", "_")


def _coerce(key: str, value: Any) -> Any:
    if value is None:
        return None
    kind = KEYS[key][1]
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is dict:
            value = json.loads(value) if isinstance(value, str) else value
            if not isinstance(value, dict):
                raise ValueError(value)
            return {str(k): str(v) for k, v in value.items()}
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return kind(value)
    except (TypeError, ValueError, json.JSONDecodeError):
        raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None


def _flatten(obj: Mapping, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if key in KEYS:
            out[key] = v
        elif isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return out


def read_config_file(path) -> dict[str, Any]:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a JSON object")
    return _flatten(obj)


@dataclass
class RunConfig:
    values: dict[str, Any]
    sources: dict[str, str] = field(default_factory=dict)

    @classmethod
    def resolve(
        cls,
        flags: Optional[Mapping[str, Any]] = None,
        env: Optional[Mapping[str, str]] = None,
        config_file=None,
    ) -> "RunConfig":
        env = os.environ if env is None else env
        values = {k: d for k, (d, _) in KEYS.items()}
        sources = {k: "default" for k in KEYS}
        layers = [
            ("file", read_config_file(config_file) if config_file else {}),
            ("env", {k: env[env_name(k)] for k in KEYS if env_name(k) in env}),
            ("flag", {k: v for k, v in (flags or {}).items() if v is not None}),
        ]
        for source, layer in layers:
            for key, raw in layer.items():
                if key not in KEYS:
                    raise ConfigError(f"unknown config key {key!r}")
                values[key] = _coerce(key, raw)
                sources[key] = source
        cfg = cls(values, sources)
        cfg.check()
        return cfg

    def __getitem__(self, key: str):
        return self.values[key]

    def check(self):
        v = self.values
        if v["llm.backend"] not in BACKENDS:
            raise ConfigError(f"llm.backend must be one of {BACKENDS}")
        if v["run.parallelism"] < 1:
            raise ConfigError("run.parallelism must be >= 1")
        if v["llm.max_attempts"] < 1:
            raise ConfigError("llm.max_attempts must be >= 1")
        try:
            self.loop_config()
            self.alignment()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def loop_config(self) -> LoopConfig:
        return LoopConfig(
            self["loop.annotation_rounds"], self["loop.evidence_retries"], self["loop.section_retries"]
        )

    def alignment(self) -> AlignmentConfig:
        return AlignmentConfig(self["align.tau"], self["align.similarity"])

    def api_key(self, env: Optional[Mapping[str, str]] = None) -> str:
        env = os.environ if env is None else env
        key = env.get(self["llm.api_key_env"], "")
        if not key:
            raise ConfigError(f"live backend needs a credential in ${self['llm.api_key_env']}")
        return key

    def build_gateway(self, env: Optional[Mapping[str, str]] = None) -> Gateway:
        """Backend selection happens here so credentials are checked only when used."""
        if self["llm.backend"] == "scripted":
            if not self["llm.transcript"]:
                raise ConfigError("scripted backend needs llm.transcript")
            try:
                backend = ScriptedBackend.from_file(self["llm.transcript"], strict=self["llm.strict"])
            except (OSError, ValueError, KeyError) as exc:
                raise ConfigError(f"cannot load transcript: {exc}") from exc
        else:
            if not self["llm.base_url"]:
                raise ConfigError("http backend needs llm.base_url")
            backend = HTTPBackend(self["llm.base_url"], self.api_key(env), timeout=self["llm.timeout"])
        return Gateway(
            backend,
            max_attempts=self["llm.max_attempts"],
            backoff_base=self["llm.backoff_base"],
            token_budget=self["llm.token_budget"],
            requests_per_minute=self["llm.rate_limit_rpm"],
        )

    def templates(self) -> dict[str, str]:
        d = self["run.prompt_dir"]
        return prompts.load_templates(Path(d) if d else None)

    def agents(self, gateway: Gateway) -> Agents:
        return Agents(
            gateway,
            model=self["llm.model"] or "default",
            models=self["llm.models"],
            templates=self.templates(),
        )

    def out_path(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self["run.output_root"]) / p
