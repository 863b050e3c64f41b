"""Deterministic JSON reading/writing used by every file format in the package.

All writers funnel through here so that identical in-memory artifacts always
produce byte-identical files (fixed key order, fixed float formatting via the
shortest round-trip repr, trailing newline).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import IoError, SchemaError


def dump_json(obj: Any, path: str | Path) -> None:
    text = json.dumps(obj, indent=2, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_json(path: str | Path) -> Any:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {p}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{p} is not valid JSON: {e}") from e


def dump_jsonl(records: Iterable[Any], path: str | Path) -> None:
    lines = [json.dumps(r, ensure_ascii=False, separators=(", ", ": ")) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def iter_jsonl(path: str | Path) -> Iterator[Any]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {p}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{p}:{lineno} is not valid JSON: {e}") from e
