"""Versioned JSON schemas for every machine-readable artifact.

Each emitted JSON carries a ``"schema": "<kind>/v<n>"`` field; the matching
schema file ``<kind>.v<n>.schema.json`` lives next to this module and is the
contract consumers can pin against. Validation runs on every write.
"""
from __future__ import annotations

import json
import os
from functools import lru_cache

import jsonschema

_DIR = os.path.dirname(__file__)


class ArtifactError(ValueError):
    """Payload is missing its schema tag or does not validate."""


def available_schemas() -> list:
    ids = []
    for fname in sorted(os.listdir(_DIR)):
        if fname.endswith(".schema.json"):
            kind, version = fname[:-len(".schema.json")].rsplit(".", 1)
            ids.append(f"{kind}/{version}")
    return ids


@lru_cache(maxsize=None)
def load_schema(schema_id: str) -> dict:
    if "/" not in schema_id:
        raise ArtifactError(f"schema id {schema_id!r} is not of the form kind/version")
    kind, version = schema_id.rsplit("/", 1)
    path = os.path.join(_DIR, f"{kind}.{version}.schema.json")
    if not os.path.exists(path):
        raise ArtifactError(
            f"unknown schema {schema_id!r}; available: {', '.join(available_schemas())}")
    with open(path, "r") as fh:
        return json.load(fh)


def validate_artifact(payload: dict) -> None:
    """Check a payload against the schema named by its own "schema" field."""
    if not isinstance(payload, dict) or "schema" not in payload:
        raise ArtifactError("artifact payload carries no \"schema\" field")
    schema = load_schema(payload["schema"])
    try:
        jsonschema.validate(payload, schema,
                            format_checker=jsonschema.Draft202012Validator.FORMAT_CHECKER)
    except jsonschema.ValidationError as exc:
        raise ArtifactError(f"artifact does not match {payload['schema']}: {exc.message}") from exc


def strip_timing(obj):
    """Recursive copy with every "timing" key removed.

    Timing is the one place nondeterminism is allowed, so byte-comparison
    of reruns goes through this filter.
    """
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k != "timing"}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj
