"""Shared parsing and serialization helpers.

Sizes are plain integers (bytes). Costs are exact rationals: the JSON
formats accept integers and strings ("3", "7/2", "1.5"), never floats,
so that repeated runs and cross-checks can compare values exactly.
"""

from __future__ import annotations

import hashlib
import json
import re
from fractions import Fraction

_SIZE_RE = re.compile(r"^\s*(\d+)\s*(B|KiB|MiB|GiB)?\s*$")

_SIZE_FACTOR = {
    None: 1,
    "B": 1,
    "KiB": 1024,
    "MiB": 1024 ** 2,
    "GiB": 1024 ** 3,
}


class FormatError(ValueError):
    """Raised when an input document is malformed."""


def parse_bytes(value) -> int:
    """Parse a byte count: a nonnegative int or a string like "4 KiB"."""
    if isinstance(value, bool):
        raise FormatError(f"byte count must be an integer, got {value!r}")
    if isinstance(value, int):
        if value < 0:
            raise FormatError(f"byte count must be nonnegative, got {value}")
        return value
    if isinstance(value, str):
        m = _SIZE_RE.match(value)
        if not m:
            raise FormatError(f"cannot parse byte count {value!r}")
        return int(m.group(1)) * _SIZE_FACTOR[m.group(2)]
    raise FormatError(f"byte count must be an int or string, got {type(value).__name__}")


def parse_cost(value) -> Fraction:
    """Parse an exact cost: int, or a string Fraction() accepts ("7/2", "1.5").

    JSON floats are rejected on purpose; they would poison exact
    objective comparisons downstream.
    """
    if isinstance(value, bool):
        raise FormatError(f"cost must be an integer or string, got {value!r}")
    if isinstance(value, int):
        cost = Fraction(value)
    elif isinstance(value, str):
        try:
            cost = Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise FormatError(f"cannot parse cost {value!r}") from exc
    elif isinstance(value, float):
        raise FormatError(f"cost must not be a float (got {value!r}); write it as a string")
    else:
        raise FormatError(f"cost must be an int or string, got {type(value).__name__}")
    if cost < 0:
        raise FormatError(f"cost must be nonnegative, got {value!r}")
    return cost


def format_cost(cost: Fraction) -> str | int:
    """Render a cost for JSON: int when integral, else the "p/q" string."""
    if cost.denominator == 1:
        return int(cost)
    return f"{cost.numerator}/{cost.denominator}"


def cost_str(cost: Fraction) -> str:
    """Render a cost as a string (for CSV cells and log lines)."""
    if cost.denominator == 1:
        return str(int(cost))
    return f"{cost.numerator}/{cost.denominator}"


def canonical_json_dumps(obj) -> str:
    """Serialize with a fixed layout so reruns are byte-identical."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def require(condition: bool, message: str) -> None:
    """Validation helper: raise FormatError with *message* unless *condition*."""
    if not condition:
        raise FormatError(message)
