"""Miscellaneous utility functions."""
import datetime
import hashlib
import json
import re
from importlib import metadata
from typing import Any

import numpy as np


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, (np.ndarray, tuple, set, frozenset)):
        return list(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def canonical_json(data: Any) -> str:
    """Serialize ``data`` with sorted keys and compact separators."""
    return json.dumps(
        data,
        sort_keys=True,
        separators=(",", ":"),
        default=_json_default,
        allow_nan=True,
    )


def config_hash(data: Any) -> str:
    """Return the SHA-256 hex digest of the canonical JSON of ``data``."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def slugify(text: str) -> str:
    """Return ``text`` reduced to characters that are safe in file names."""
    slug = re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("_")
    return slug or "_"


def code_version() -> str:
    """Return the installed package version."""
    try:
        return metadata.version("pymixloss")
    except metadata.PackageNotFoundError:
        return "unknown"


def utc_timestamp() -> str:
    """Return the current UTC time in ISO 8601 format."""
    now = datetime.datetime.now(datetime.timezone.utc)
    return now.replace(microsecond=0).isoformat()
