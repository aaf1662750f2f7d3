"""NIST SP 800-53 control-code model.

Covers canonicalization of control codes found in free text, a bundled
catalog subset with family-level fallback, and the default mapping from
STRIDE categories to mitigation codes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Iterable, Iterator

from .errors import ModeMismatchError, NotACodeError, SchemaError
from .listcfg import load_list_table, parse_list_table

# The 20 control families of SP 800-53 Rev. 5.
FAMILIES = frozenset(
    {
        "AC", "AT", "AU", "CA", "CM", "CP", "IA", "IR", "MA", "MP",
        "PE", "PL", "PM", "PS", "PT", "RA", "SA", "SC", "SI", "SR",
    }
)

STRICT = "strict"
BASE_ONLY = "base_only"

_CODE_RE = re.compile(r"([A-Za-z]{2})-([0-9]+)(?:\(([0-9]+)\))?$")


@dataclass(frozen=True)
class ControlCode:
    """One control identifier, e.g. SC-7 or SC-7(3)."""

    family: str
    number: int
    enhancement: int | None = None

    def __post_init__(self):
        if len(self.family) != 2 or not self.family.isalpha() or not self.family.isupper():
            raise NotACodeError(self.family)
        if self.number < 1 or (self.enhancement is not None and self.enhancement < 1):
            raise NotACodeError(self.canonical)

    @property
    def canonical(self) -> str:
        text = f"{self.family}-{self.number}"
        if self.enhancement is not None:
            text += f"({self.enhancement})"
        return text

    @property
    def base(self) -> "ControlCode":
        return self if self.enhancement is None else ControlCode(self.family, self.number)

    def sort_key(self):
        return (self.family, self.number, self.enhancement or 0)

    def __str__(self) -> str:
        return self.canonical


def normalize_code(raw: str) -> ControlCode:
    """Canonicalize a raw token like ``"sc-7(3)"`` or ``"IA-2: Identification..."``.

    The title suffix after the first colon is dropped, the family is
    uppercased, and an optional parenthesized enhancement is parsed.
    Raises NotACodeError when the remainder is not a control code.
    """
    if not raw or not raw.strip():
        raise NotACodeError(raw)
    token = raw.split(":", 1)[0].strip()
    m = _CODE_RE.match(token)
    if not m:
        raise NotACodeError(raw)
    family = m.group(1).upper()
    number = int(m.group(2))
    enhancement = int(m.group(3)) if m.group(3) else None
    if number < 1 or (enhancement is not None and enhancement < 1):
        raise NotACodeError(raw)
    return ControlCode(family, number, enhancement)


class CodeSet:
    """A set of control codes with a fixed comparison mode.

    In ``base_only`` mode (the default) enhancements are ignored when
    comparing, intersecting, or counting codes, so SC-7(3) and SC-7 are
    the same member. ``strict`` mode keeps them distinct.
    """

    __slots__ = ("codes", "comparison_mode")

    def __init__(self, codes: Iterable[ControlCode] = (), comparison_mode: str = BASE_ONLY):
        if comparison_mode not in (STRICT, BASE_ONLY):
            raise ValueError(f"unknown comparison mode {comparison_mode!r}")
        object.__setattr__(self, "codes", frozenset(codes))
        object.__setattr__(self, "comparison_mode", comparison_mode)

    def __setattr__(self, name, value):
        raise AttributeError("CodeSet is immutable")

    @classmethod
    def of(cls, *tokens: str, comparison_mode: str = BASE_ONLY) -> "CodeSet":
        return cls((normalize_code(t) for t in tokens), comparison_mode)

    def _keys(self) -> frozenset[ControlCode]:
        if self.comparison_mode == BASE_ONLY:
            return frozenset(c.base for c in self.codes)
        return self.codes

    def _check_mode(self, other: "CodeSet"):
        if self.comparison_mode != other.comparison_mode:
            raise ModeMismatchError(
                f"cannot compare {self.comparison_mode} set with {other.comparison_mode} set"
            )

    def __len__(self) -> int:
        return len(self._keys())

    def __iter__(self) -> Iterator[ControlCode]:
        return iter(sorted(self._keys(), key=ControlCode.sort_key))

    def __contains__(self, code: ControlCode) -> bool:
        key = code.base if self.comparison_mode == BASE_ONLY else code
        return key in self._keys()

    def __eq__(self, other) -> bool:
        if not isinstance(other, CodeSet):
            return NotImplemented
        return (
            self.comparison_mode == other.comparison_mode
            and self._keys() == other._keys()
        )

    def __hash__(self) -> int:
        return hash((self.comparison_mode, self._keys()))

    def __repr__(self) -> str:
        members = ", ".join(c.canonical for c in self)
        return f"CodeSet({{{members}}}, mode={self.comparison_mode})"

    @property
    def is_empty(self) -> bool:
        return not self.codes

    def intersection_size(self, other: "CodeSet") -> int:
        self._check_mode(other)
        return len(self._keys() & other._keys())

    def union_size(self, other: "CodeSet") -> int:
        self._check_mode(other)
        return len(self._keys() | other._keys())

    def union(self, other: "CodeSet") -> "CodeSet":
        self._check_mode(other)
        return CodeSet(self.codes | other.codes, self.comparison_mode)

    def canonical_tokens(self) -> list[str]:
        return [c.canonical for c in self]


@dataclass(frozen=True)
class CatalogEntry:
    code: ControlCode
    title: str


class LookupMiss(Enum):
    """Outcome of a catalog lookup that found no exact entry."""

    KNOWN_FAMILY_ONLY = "known_family_only"
    UNKNOWN = "unknown"


class ControlCatalog:
    """Read-only catalog of control codes and titles."""

    def __init__(self, entries: Iterable[CatalogEntry]):
        self._entries: dict[ControlCode, CatalogEntry] = {}
        for entry in entries:
            if entry.code in self._entries:
                raise SchemaError(f"duplicate catalog code {entry.code.canonical}")
            self._entries[entry.code] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[CatalogEntry]:
        return iter(sorted(self._entries.values(), key=lambda e: e.code.sort_key()))

    def lookup(self, code: ControlCode) -> CatalogEntry | LookupMiss:
        entry = self._entries.get(code)
        if entry is not None:
            return entry
        if code.family in FAMILIES:
            return LookupMiss.KNOWN_FAMILY_ONLY
        return LookupMiss.UNKNOWN

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "ControlCatalog":
        entries = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "\t" not in line:
                raise SchemaError(f"expected CODE<TAB>Title at line {lineno}", source)
            token, title = line.split("\t", 1)
            entries.append(CatalogEntry(normalize_code(token), title.strip()))
        return cls(entries)

    @classmethod
    def from_file(cls, path) -> "ControlCatalog":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), source=str(path))


def lookup_control(code: ControlCode, catalog: ControlCatalog) -> CatalogEntry | LookupMiss:
    return catalog.lookup(code)


def _data_text(name: str) -> str:
    return resources.files("threatforge.data").joinpath(name).read_text(encoding="utf-8")


_default_catalog: ControlCatalog | None = None


def default_catalog() -> ControlCatalog:
    global _default_catalog
    if _default_catalog is None:
        _default_catalog = ControlCatalog.from_text(_data_text("catalog.tsv"), "catalog.tsv")
    return _default_catalog


_CATEGORY_LETTERS = ("S", "T", "R", "I", "D", "E")


def _build_category_map(raw: dict[str, list[str]], source: str) -> dict[str, CodeSet]:
    mapping: dict[str, CodeSet] = {}
    for letter, tokens in raw.items():
        if letter not in _CATEGORY_LETTERS:
            raise SchemaError(f"unknown STRIDE letter {letter!r}", source)
        if not tokens:
            raise SchemaError(f"empty code list for {letter}", source)
        mapping[letter] = CodeSet.of(*tokens)
    missing = [c for c in _CATEGORY_LETTERS if c not in mapping]
    if missing:
        raise SchemaError(f"missing categories: {', '.join(missing)}", source)
    return mapping


_default_category_map: dict[str, CodeSet] | None = None


def load_category_codes(path=None) -> dict[str, CodeSet]:
    """Load a category-to-mitigation-codes table, bundled default when no path."""
    global _default_category_map
    if path is not None:
        return _build_category_map(load_list_table(path), str(path))
    if _default_category_map is None:
        _default_category_map = _build_category_map(
            parse_list_table(_data_text("category_codes.txt"), "category_codes.txt"),
            "category_codes.txt",
        )
    return _default_category_map


def default_mitigation_codes(category) -> CodeSet:
    """Default mitigation code set for a STRIDE category (letter or enum)."""
    letter = category if isinstance(category, str) else category.letter
    return load_category_codes()[letter]
