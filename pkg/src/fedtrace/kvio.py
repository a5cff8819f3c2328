"""INI-style key/value files with deterministic byte output.

All plain-text manifests (snapshots, round records, session configs) go
through this module so that identical data always serializes to identical
bytes: fixed section/key order as supplied by the caller, `repr` floats,
LF line endings, UTF-8.
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Iterable, Mapping

Sections = Mapping[str, Mapping[str, str]]


def dump_kv(sections: Sections) -> str:
    lines: list[str] = []
    for name, fields in sections.items():
        lines.append(f"[{name}]")
        for key, value in fields.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def write_kv(path: str | Path, sections: Sections) -> None:
    Path(path).write_text(dump_kv(sections), encoding="utf-8")


def read_kv(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.RawConfigParser()
    parser.optionxform = str  # keep key case
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    return {name: dict(parser[name]) for name in parser.sections()}


def fmt_float(x: float) -> str:
    return repr(float(x))


def fmt_ints(values: Iterable[int]) -> str:
    return ",".join(str(int(v)) for v in values)


def parse_ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


def fmt_bool(value: bool) -> str:
    return "true" if value else "false"


def parse_bool(text: str) -> bool:
    text = text.strip().lower()
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")
