"""Key-value configuration files shared by all modules.

Format: one `key = value` per line, `#` comments, blank lines ignored.
Repeated keys accumulate into a list (used by scenario scripts and
realism constraints). Keys are dotted paths, values stay raw strings;
callers convert.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ParseError


def parse_kv(text: str) -> dict[str, list[str]]:
    """Parse key-value text into {key: [values in file order]}."""
    out: dict[str, list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno, raw.index(line[0]) + 1)
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ParseError("empty key", lineno)
        out.setdefault(key, []).append(value)
    return out


def load_kv(path: str | Path) -> dict[str, list[str]]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def single(kv: dict[str, list[str]], key: str, default: str | None = None) -> str:
    """Fetch a key expected to appear at most once."""
    values = kv.get(key)
    if not values:
        if default is None:
            raise KeyError(key)
        return default
    return values[-1]


def dump_kv(pairs: list[tuple[str, str]]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs)
