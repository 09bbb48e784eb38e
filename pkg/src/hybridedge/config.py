"""Manager configuration file.

One YAML document::

    cluster:            # ClusterConfig fields
      heartbeat_interval_ms: 1000
      manager_schedulable: false
    rules: default      # preset name or a list of rules
    calibration: profiles.yaml   # path (relative to this file) or inline mapping
    manager: {host: 127.0.0.1, port: 8471, api_port: 8470}
    metrics_log: metrics.jsonl

The path comes from ``--config``, else ``$HYBRIDEDGE_CONFIG``, else built-in defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .api import DEFAULT_API_PORT
from .calibration import CalibrationRegistry, load_registry
from .classifier import DEFAULT_RULES, ClassificationRule, resolve_rules
from .errors import ParseError
from .model import ClusterConfig

ENV_VAR = "HYBRIDEDGE_CONFIG"
DEFAULT_AGENT_PORT = 8471
TOP_LEVEL_KEYS = ("cluster", "rules", "calibration", "manager", "metrics_log")


@dataclass
class Settings:
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    rules: tuple[ClassificationRule, ...] = DEFAULT_RULES
    registry: CalibrationRegistry = field(default_factory=CalibrationRegistry.default)
    host: str = "127.0.0.1"
    port: int = DEFAULT_AGENT_PORT
    api_port: int = DEFAULT_API_PORT
    metrics_log: str | None = None
    source: str | None = None


def config_path(flag: str | None = None) -> str | None:
    return flag or os.environ.get(ENV_VAR) or None


def settings_from_dict(doc: Mapping[str, Any] | None, base_dir: Path | None = None) -> Settings:
    doc = dict(doc or {})
    unknown = set(doc) - set(TOP_LEVEL_KEYS)
    if unknown:
        raise ParseError(f"unknown config sections {sorted(unknown)}; known: {list(TOP_LEVEL_KEYS)}")
    try:
        cluster = ClusterConfig.from_dict(doc.get("cluster"))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"cluster: {exc}") from None
    calibration = doc.get("calibration")
    if isinstance(calibration, str) and base_dir is not None:
        calibration = str(base_dir / calibration)
    registry = load_registry(calibration)
    rules = resolve_rules(doc.get("rules"), registry.flavor_kinds)
    manager = dict(doc.get("manager") or {})
    metrics_log = doc.get("metrics_log")
    if metrics_log and base_dir is not None:
        metrics_log = str(base_dir / metrics_log)
    return Settings(
        cluster=cluster,
        rules=rules,
        registry=registry,
        host=str(manager.get("host", "127.0.0.1")),
        port=int(manager.get("port", DEFAULT_AGENT_PORT)),
        api_port=int(manager.get("api_port", DEFAULT_API_PORT)),
        metrics_log=metrics_log,
    )


def load_settings(flag: str | None = None) -> Settings:
    path = config_path(flag)
    if path is None:
        return Settings()
    p = Path(path)
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"invalid config file {p}", mark.line + 1 if mark else None) from None
    if doc is not None and not isinstance(doc, Mapping):
        raise ParseError(f"config file {p} must hold a mapping")
    settings = settings_from_dict(doc, p.parent)
    settings.source = str(p)
    return settings
