"""Flat ``key=value`` text files with dotted section prefixes.

Values are typed on read: ``true``/``false`` become booleans, numbers become
int or float, comma-separated numbers become tuples of floats and anything
else stays a string.
"""

from __future__ import annotations

import math


class KvSyntaxError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if "," in text:
        parts = [p.strip() for p in text.split(",")]
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            return text
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(float(v)) if not isinstance(v, str) else v for v in value)
    return str(value)


def load_kv(text: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment line."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise KvSyntaxError(f"expected key=value, got {raw!r}", n)
        key, value = line.split("=", 1)
        key = key.strip()
        if not key or any(c.isspace() for c in key):
            raise KvSyntaxError(f"invalid key {key!r}", n)
        if key in out:
            raise KvSyntaxError(f"duplicate key {key!r}", n)
        out[key] = parse_value(value)
    return out


def dump_kv(mapping: dict, prefix: str = "") -> str:
    return "".join(f"{prefix}{k}={format_value(v)}\n" for k, v in mapping.items())
