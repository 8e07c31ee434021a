"""Flat `key = value` config files for the CLI.

Lines are `key = value`; blank lines and lines starting with `#` are
ignored. Values keep their raw string form; typed accessors live on the
config dataclasses that consume them.
"""

from .errors import DataError


def read_kv(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise DataError(f"{path}:{lineno}: empty key")
            if key in out:
                raise DataError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def write_kv(path, mapping):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in mapping.items():
            fh.write(f"{key} = {value}\n")


def parse_bool(text, key):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise DataError(f"config key {key!r}: cannot parse boolean from {text!r}")


def parse_float_list(text):
    text = text.strip()
    if not text:
        return []
    return [float(tok) for tok in text.split(",")]
