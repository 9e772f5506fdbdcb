"""Application configuration: a JSON file plus CONTEXTD_* overrides.

Every referenced path and value is validated at load time so subcommands
fail fast with a config error instead of deep inside a workflow.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .runner import DEFAULT_PER_QUERY_BUDGET_MS, DEFAULT_REFRESH_MS
from .taxonomy import builtin_doc, load_taxonomy

ENV_PREFIX = "CONTEXTD_"


@dataclass
class AppConfig:
    backends: dict = field(default_factory=dict)   # name -> endpoint
    taxonomy_path: str = ""
    annotation_threshold: float = 0.9
    per_query_budget_ms: float = DEFAULT_PER_QUERY_BUDGET_MS
    cycle_period_ms: float = 252.0
    refresh_fast_ms: float = DEFAULT_REFRESH_MS["fast"]
    refresh_slow_ms: float = DEFAULT_REFRESH_MS["slow"]

    def validate(self) -> "AppConfig":
        if not 0.0 < self.annotation_threshold < 1.0:
            raise ConfigError(
                f"annotation threshold must be in (0, 1), got {self.annotation_threshold}"
            )
        for value, name in [
            (self.per_query_budget_ms, "per_query_budget_ms"),
            (self.cycle_period_ms, "cycle_period_ms"),
            (self.refresh_fast_ms, "refresh_fast_ms"),
            (self.refresh_slow_ms, "refresh_slow_ms"),
        ]:
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        for name, endpoint in self.backends.items():
            if not endpoint:
                raise ConfigError(f"backend {name!r} has an empty endpoint")
        if self.taxonomy_path:
            path = Path(self.taxonomy_path)
            if not path.exists():
                raise ConfigError(f"taxonomy file {self.taxonomy_path!r} does not exist")
            try:
                doc = load_taxonomy(path)
            except Exception as exc:
                raise ConfigError(f"taxonomy file {self.taxonomy_path!r}: {exc}") from exc
            if doc != builtin_doc():
                raise ConfigError(
                    f"taxonomy file {self.taxonomy_path!r} differs from the packaged "
                    f"taxonomy (version {builtin_doc().taxonomy_version}); prompts "
                    f"would not be reproducible"
                )
        return self

    def resolve_backend(self, name_or_endpoint: str) -> str:
        """A backend flag is either a configured name or a literal endpoint."""
        return self.backends.get(name_or_endpoint, name_or_endpoint)


def _apply_env(raw: dict, env) -> dict:
    """CONTEXTD_THRESHOLD=0.95, CONTEXTD_BACKEND_VILT=host:port, etc."""
    mapping = {
        "THRESHOLD": ("annotation_threshold", float),
        "TAXONOMY": ("taxonomy_path", str),
        "BUDGET_MS": ("per_query_budget_ms", float),
        "CYCLE_MS": ("cycle_period_ms", float),
        "REFRESH_FAST_MS": ("refresh_fast_ms", float),
        "REFRESH_SLOW_MS": ("refresh_slow_ms", float),
    }
    for key, value in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        suffix = key[len(ENV_PREFIX) :]
        if suffix.startswith("BACKEND_"):
            raw.setdefault("backends", {})[suffix[len("BACKEND_") :].lower()] = value
            continue
        if suffix in mapping:
            field_name, cast = mapping[suffix]
            try:
                raw[field_name] = cast(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return raw


def load_config(path=None, env=None) -> AppConfig:
    """Load config from JSON; env overrides win. Missing explicit path errors."""
    env = os.environ if env is None else env
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path!r} does not exist")
        try:
            raw = json.loads(p.read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path!r} is malformed: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    raw = _apply_env(dict(raw), env)
    known = {
        "backends",
        "taxonomy_path",
        "annotation_threshold",
        "per_query_budget_ms",
        "cycle_period_ms",
        "refresh_fast_ms",
        "refresh_slow_ms",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return AppConfig(**raw).validate()
