"""Parser for the key/list override files used by the rule table and the
category-to-code mapping.

Format, one entry per line::

    process = ["S", "T", "R", "I", "D", "E"]

Blank lines and `#` comments are ignored. Keys are snake_case tokens;
values are bracketed lists of double-quoted strings.
"""

from __future__ import annotations

import re

from .errors import SchemaError

_LINE_RE = re.compile(r'^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*\[(.*)\]\s*$')
_ITEM_RE = re.compile(r'\s*"([^"]*)"\s*(?:,|$)')


def parse_list_table(text: str, source: str = "<string>") -> dict[str, list[str]]:
    table: dict[str, list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE_RE.match(line)
        if not m:
            raise SchemaError(f"cannot parse line {lineno}: {raw.strip()!r}", source)
        key, body = m.group(1), m.group(2).strip()
        if key in table:
            raise SchemaError(f"duplicate key {key!r} at line {lineno}", source)
        items: list[str] = []
        pos = 0
        while pos < len(body):
            item = _ITEM_RE.match(body, pos)
            if not item:
                raise SchemaError(f"malformed list at line {lineno}", source)
            items.append(item.group(1))
            pos = item.end()
        table[key] = items
    return table


def load_list_table(path) -> dict[str, list[str]]:
    with open(path, encoding="utf-8") as fh:
        return parse_list_table(fh.read(), source=str(path))
