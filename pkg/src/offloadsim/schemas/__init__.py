"""Versioned JSON schemas for every document the package reads or writes."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

from ..errors import ConfigurationError

NAMES = (
    "scenario",
    "scenario_config",
    "calibration",
    "plan_request",
    "plan_response",
    "summary",
)


@lru_cache(maxsize=None)
def load(name: str) -> dict:
    text = resources.files(__package__).joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def errors(doc, name: str) -> list[jsonschema.ValidationError]:
    validator = jsonschema.Draft202012Validator(load(name))
    return sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))


def error_path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path)


def validate(doc, name: str, exc=ConfigurationError) -> None:
    """Raise ``exc`` naming the first offending field if ``doc`` is invalid."""
    errs = errors(doc, name)
    if errs:
        first = errs[0]
        where = error_path(first) or "<root>"
        raise exc(f"{name} document invalid at {where}: {first.message}")
