"""Loading and overriding the global configuration."""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, TypeVar, Union

import yaml
from pydantic import BaseModel, ValidationError

from .errors import ConfigError
from .models import GlobalConfig

SEED_LEAVES = ("sampler.seed", "train.seed", "controller.seed")

Section = TypeVar("Section", bound=BaseModel)


def _read_document(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise ConfigError([f"{path}: file not found"]) from exc
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return data


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(document: Dict[str, Any], assignment: str) -> None:
    """Set one dotted leaf, e.g. ``scene.head.h_hair=0.015``."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError([f"override {assignment!r} must look like section.key=value"])
    parts = key.strip().split(".")
    node = document
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError([f"{key}: {part} is not a section"])
        node = child
    node[parts[-1]] = _parse_value(raw.strip())


def _format_errors(exc: ValidationError) -> List[str]:
    problems = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        problems.append(f"{loc}: {err['msg']}")
    return problems


def validate_config(document: Dict[str, Any]) -> GlobalConfig:
    try:
        return GlobalConfig.model_validate(document)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc


def update_section(section: Section, update: Dict[str, Any], name: str) -> Section:
    """Copy of one config section with ``update`` applied and validated like a loaded file."""
    try:
        return type(section).model_validate({**section.model_dump(), **update})
    except ValidationError as exc:
        raise ConfigError([f"{name}.{p}" for p in _format_errors(exc)]) from exc


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    seed: Optional[int] = None,
) -> GlobalConfig:
    """Read JSON/YAML (or defaults), apply dotted overrides and the global seed, validate."""
    document = _read_document(path) if path is not None else {}
    for assignment in overrides:
        apply_override(document, assignment)
    if seed is not None:
        for leaf in SEED_LEAVES:
            apply_override(document, f"{leaf}={int(seed)}")
    return validate_config(document)
