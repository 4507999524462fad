"""JSON serialization utilities."""
import dataclasses
from pathlib import Path

import numpy as np


def serialize_for_json(value):
    """
    Convert config values (including nested structures) to JSON-safe values.

    Dataclasses become dicts, tuples become lists, paths become strings and
    numpy scalars become Python numbers.
    """
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: serialize_for_json(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {k: serialize_for_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [serialize_for_json(v) for v in value]
    return value
