"""Key-value text manifests: one ``key = value`` pair per line, ``#`` comments."""
from __future__ import annotations

from pathlib import Path

from .exceptions import FormatError


def write_manifest(path, entries: dict):
    lines = []
    for key, val in entries.items():
        key = str(key)
        val = str(val)
        if "=" in key or "\n" in key or "\n" in val:
            raise FormatError(f"cannot encode manifest entry {key!r}")
        lines.append(f"{key} = {val}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: manifest not found")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip()] = val.strip()
    return out
