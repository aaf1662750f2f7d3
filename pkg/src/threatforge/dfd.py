"""Data-flow-diagram model and its block-structured description language.

The DSL encodes banking-system designs::

    dfd "Bank Account System" {
      external "Bank Customer" {}
      process  "Open Account" { running_as = network_service, isolation = app_container }
      store    "Customer Account DB" {}
      boundary "Internet" contains ["Bank Customer"]
      flow "Account Request" from "Bank Customer" to "Open Account" { crosses = ["Internet"] }
    }

Quoted names are the identifiers. Comments run from ``#`` to end of line.
Keys are snake_case and closed: unknown keys or enum values are parse
errors. Parsed graphs are immutable; rendering a graph to prose is a pure
function, so the same graph always produces byte-identical text.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .errors import (
    DslSyntaxError,
    DuplicateIdError,
    InvalidGraphError,
    UnknownAttributeError,
    UnknownReferenceError,
)


class ElementKind(Enum):
    EXTERNAL_ENTITY = "external"
    PROCESS = "process"
    DATA_STORE = "store"

    @property
    def label(self) -> str:
        return _KIND_LABELS[self]


_KIND_LABELS = {
    ElementKind.EXTERNAL_ENTITY: "external entity",
    ElementKind.PROCESS: "process",
    ElementKind.DATA_STORE: "data store",
}

# The three managed-setting knobs, with their closed value sets.
ATTRIBUTE_VALUES: Mapping[str, frozenset[str]] = {
    "running_as": frozenset({"none", "network_service", "kernel_system_local_admin", "other"}),
    "isolation": frozenset({"none", "app_container", "other"}),
    "accepts_input_from": frozenset({"none", "kernel_system_local_admin", "any", "other"}),
}

_ATTRIBUTE_PROSE = {
    ("running_as", "network_service"): "running as network service",
    ("running_as", "kernel_system_local_admin"): "running as kernel, system, or local admin",
    ("running_as", "other"): "running as other",
    ("isolation", "app_container"): "with AppContainer isolation",
    ("isolation", "other"): "with other isolation",
    ("accepts_input_from", "kernel_system_local_admin"): "accepting input from kernel, system, or local admin",
    ("accepts_input_from", "any"): "accepting input from any source",
    ("accepts_input_from", "other"): "accepting input from other sources",
}


@dataclass(frozen=True)
class DfdElement:
    id: str
    name: str
    kind: ElementKind
    attributes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        # Canonicalize: "none" equals absent, fixed order, so equality
        # survives a serialize round-trip.
        object.__setattr__(
            self,
            "attributes",
            tuple(sorted((k, v) for k, v in self.attributes if v != "none")),
        )

    def attribute(self, key: str, default: str = "none") -> str:
        for k, v in self.attributes:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class DataFlow:
    id: str
    name: str
    source: str
    sink: str
    crosses: tuple[str, ...] = ()
    self_loop: bool = False


@dataclass(frozen=True)
class TrustBoundary:
    id: str
    name: str
    contains: tuple[str, ...] = ()


@dataclass(frozen=True)
class DfdGraph:
    title: str
    elements: tuple[DfdElement, ...] = ()
    flows: tuple[DataFlow, ...] = ()
    boundaries: tuple[TrustBoundary, ...] = ()

    def element(self, element_id: str) -> DfdElement | None:
        for e in self.elements:
            if e.id == element_id:
                return e
        return None


@dataclass(frozen=True)
class SystemDescription:
    """Rendered prose plus its whitespace-token count."""

    text: str
    token_count: int

    @classmethod
    def from_text(cls, text: str) -> "SystemDescription":
        return cls(text, len(text.split()))


@dataclass(frozen=True)
class Diagnostic:
    code: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}[{self.subject}]: {self.message}"


# --- lexer ---------------------------------------------------------------

_SYMBOLS = {"{", "}", "[", "]", "=", ","}


@dataclass(frozen=True)
class _Token:
    kind: str  # "string" | "ident" | symbol
    value: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    for lineno, raw in enumerate(source.splitlines(), 1):
        i = 0
        while i < len(raw):
            ch = raw[i]
            if ch == "#":
                break
            if ch.isspace():
                i += 1
                continue
            col = i + 1
            if ch == '"':
                end = raw.find('"', i + 1)
                if end < 0:
                    raise DslSyntaxError("unterminated string", lineno, col)
                tokens.append(_Token("string", raw[i + 1 : end], lineno, col))
                i = end + 1
            elif ch in _SYMBOLS:
                tokens.append(_Token(ch, ch, lineno, col))
                i = i + 1
            elif ch.isalpha() or ch == "_":
                j = i
                while j < len(raw) and (raw[j].isalnum() or raw[j] == "_"):
                    j += 1
                tokens.append(_Token("ident", raw[i:j], lineno, col))
                i = j
            else:
                raise DslSyntaxError(f"unexpected character {ch!r}", lineno, col)
    return tokens


class _TokenStream:
    def __init__(self, tokens: list[_Token]):
        self._tokens = tokens
        self._pos = 0

    def peek(self) -> _Token | None:
        return self._tokens[self._pos] if self._pos < len(self._tokens) else None

    def next(self) -> _Token:
        tok = self.peek()
        if tok is None:
            last = self._tokens[-1] if self._tokens else None
            raise DslSyntaxError(
                "unexpected end of input",
                last.line if last else 1,
                last.col if last else 1,
            )
        self._pos += 1
        return tok

    def expect(self, kind: str, value: str | None = None) -> _Token:
        tok = self.next()
        if tok.kind != kind or (value is not None and tok.value != value):
            want = value or kind
            raise DslSyntaxError(f"expected {want!r}, found {tok.value!r}", tok.line, tok.col)
        return tok

    def at_end(self) -> bool:
        return self.peek() is None


# --- parser --------------------------------------------------------------


def _parse_string_list(ts: _TokenStream) -> list[str]:
    ts.expect("[")
    items: list[str] = []
    tok = ts.peek()
    if tok is not None and tok.kind == "]":
        ts.next()
        return items
    while True:
        items.append(ts.expect("string").value)
        tok = ts.next()
        if tok.kind == "]":
            return items
        if tok.kind != ",":
            raise DslSyntaxError(f"expected ',' or ']', found {tok.value!r}", tok.line, tok.col)


def _parse_attr_block(ts: _TokenStream, allowed: dict) -> dict[str, object]:
    """Parse ``{ key = value, ... }`` where allowed maps key -> value parser."""
    ts.expect("{")
    out: dict[str, object] = {}
    tok = ts.peek()
    if tok is not None and tok.kind == "}":
        ts.next()
        return out
    while True:
        key_tok = ts.expect("ident")
        key = key_tok.value
        if key not in allowed:
            raise UnknownAttributeError(key, key_tok.line, key_tok.col)
        if key in out:
            raise DuplicateIdError(key, key_tok.line, key_tok.col)
        ts.expect("=")
        out[key] = allowed[key](ts)
        tok = ts.next()
        if tok.kind == "}":
            return out
        if tok.kind != ",":
            raise DslSyntaxError(f"expected ',' or '}}', found {tok.value!r}", tok.line, tok.col)


def _enum_value(key: str):
    def parse(ts: _TokenStream) -> str:
        tok = ts.next()
        if tok.kind not in ("ident", "string"):
            raise DslSyntaxError(f"expected value for {key!r}", tok.line, tok.col)
        if tok.value not in ATTRIBUTE_VALUES[key]:
            raise UnknownAttributeError(tok.value, tok.line, tok.col)
        return tok.value

    return parse


def _bool_value(ts: _TokenStream) -> bool:
    tok = ts.expect("ident")
    if tok.value not in ("true", "false"):
        raise DslSyntaxError(f"expected true or false, found {tok.value!r}", tok.line, tok.col)
    return tok.value == "true"


_KIND_KEYWORDS = {
    "external": ElementKind.EXTERNAL_ENTITY,
    "process": ElementKind.PROCESS,
    "store": ElementKind.DATA_STORE,
}

_ELEMENT_ATTRS = {key: _enum_value(key) for key in ATTRIBUTE_VALUES}
_FLOW_ATTRS = {"crosses": _parse_string_list, "self_loop": _bool_value}


def parse_dfd(source: str) -> DfdGraph:
    """Parse DSL text into a validated DfdGraph.

    Rejects invalid input with position-carrying errors; the returned
    graph always passes validate().
    """
    ts = _TokenStream(_tokenize(source))
    ts.expect("ident", "dfd")
    title = ts.expect("string").value
    ts.expect("{")

    elements: list[DfdElement] = []
    flows: list[DataFlow] = []
    boundaries: list[TrustBoundary] = []
    seen_ids: dict[str, _Token] = {}

    def claim_id(tok: _Token):
        if tok.value in seen_ids:
            raise DuplicateIdError(tok.value, tok.line, tok.col)
        seen_ids[tok.value] = tok

    while True:
        tok = ts.next()
        if tok.kind == "}":
            break
        if tok.kind != "ident":
            raise DslSyntaxError(f"expected declaration, found {tok.value!r}", tok.line, tok.col)
        if tok.value in _KIND_KEYWORDS:
            name_tok = ts.expect("string")
            claim_id(name_tok)
            attrs = _parse_attr_block(ts, _ELEMENT_ATTRS)
            elements.append(
                DfdElement(
                    id=name_tok.value,
                    name=name_tok.value,
                    kind=_KIND_KEYWORDS[tok.value],
                    attributes=tuple(sorted(attrs.items())),
                )
            )
        elif tok.value == "boundary":
            name_tok = ts.expect("string")
            claim_id(name_tok)
            ts.expect("ident", "contains")
            members = _parse_string_list(ts)
            boundaries.append(
                TrustBoundary(id=name_tok.value, name=name_tok.value, contains=tuple(members))
            )
        elif tok.value == "flow":
            name_tok = ts.expect("string")
            claim_id(name_tok)
            ts.expect("ident", "from")
            source_tok = ts.expect("string")
            ts.expect("ident", "to")
            sink_tok = ts.expect("string")
            attrs: dict[str, object] = {}
            nxt = ts.peek()
            if nxt is not None and nxt.kind == "{":
                attrs = _parse_attr_block(ts, _FLOW_ATTRS)
            flows.append(
                DataFlow(
                    id=name_tok.value,
                    name=name_tok.value,
                    source=source_tok.value,
                    sink=sink_tok.value,
                    crosses=tuple(attrs.get("crosses", ())),
                    self_loop=bool(attrs.get("self_loop", False)),
                )
            )
        else:
            raise DslSyntaxError(f"unknown declaration {tok.value!r}", tok.line, tok.col)

    if not ts.at_end():
        tok = ts.next()
        raise DslSyntaxError(f"trailing input {tok.value!r}", tok.line, tok.col)

    graph = DfdGraph(
        title=title,
        elements=tuple(elements),
        flows=tuple(flows),
        boundaries=tuple(boundaries),
    )
    problems = validate(graph)
    if problems:
        first = problems[0]
        if first.code == "UnknownReference":
            raise UnknownReferenceError(first.subject)
        if first.code == "DuplicateId":
            raise DuplicateIdError(first.subject)
        raise InvalidGraphError(problems)
    return graph


# --- validation ----------------------------------------------------------


def validate(graph: DfdGraph) -> list[Diagnostic]:
    """Check every graph invariant; empty list means the graph is valid.

    Diagnostics are data, not failures, and come out in deterministic
    order: graph-level first, then by element id, then by flow id.
    """
    out: list[Diagnostic] = []
    if not graph.title.strip():
        out.append(Diagnostic("EmptyTitle", "<graph>", "graph title must be non-empty"))
    if not graph.elements:
        out.append(Diagnostic("EmptyGraph", "<graph>", "graph must declare at least one element"))

    element_ids: set[str] = set()
    dup_elements: list[str] = []
    for e in graph.elements:
        if e.id in element_ids:
            dup_elements.append(e.id)
        element_ids.add(e.id)
    for dup in sorted(set(dup_elements)):
        out.append(Diagnostic("DuplicateId", dup, "element id declared more than once"))

    membership: dict[str, list[str]] = {}
    boundary_ids: set[str] = set()
    for b in sorted(graph.boundaries, key=lambda b: b.id):
        if b.id in boundary_ids:
            out.append(Diagnostic("DuplicateId", b.id, "boundary id declared more than once"))
        boundary_ids.add(b.id)
        for member in b.contains:
            if member not in element_ids:
                out.append(
                    Diagnostic("UnknownReference", member, f'boundary "{b.id}" contains unknown element')
                )
            membership.setdefault(member, []).append(b.id)
    for member in sorted(membership):
        if len(membership[member]) > 1:
            names = ", ".join(membership[member])
            out.append(
                Diagnostic("BoundaryOverlap", member, f"element belongs to multiple boundaries: {names}")
            )

    flow_ids: set[str] = set()
    for f in graph.flows:
        if f.id in flow_ids or f.id in element_ids:
            out.append(Diagnostic("DuplicateId", f.id, "flow id collides with another id"))
        flow_ids.add(f.id)
        for endpoint, role in ((f.source, "source"), (f.sink, "sink")):
            if endpoint not in element_ids:
                out.append(
                    Diagnostic("UnknownReference", endpoint, f'flow "{f.id}" has unknown {role}')
                )
        if f.source == f.sink and not f.self_loop:
            out.append(
                Diagnostic("SelfLoop", f.id, "flow loops back to its source without self_loop marker")
            )
        for crossed in f.crosses:
            if crossed not in boundary_ids:
                out.append(
                    Diagnostic("UnknownReference", crossed, f'flow "{f.id}" crosses unknown boundary')
                )
    return out


# --- rendering -----------------------------------------------------------


def _join_names(names: Iterable[str]) -> str:
    quoted = [f'"{n}"' for n in names]
    if len(quoted) == 1:
        return quoted[0]
    return ", ".join(quoted[:-1]) + " and " + quoted[-1]


def _element_sentence(element: DfdElement, boundary_of: Mapping[str, str]) -> str:
    article = "an" if element.kind is ElementKind.EXTERNAL_ENTITY else "a"
    clauses: list[str] = []
    for key in ("running_as", "isolation", "accepts_input_from"):
        value = element.attribute(key)
        if value != "none":
            clauses.append(_ATTRIBUTE_PROSE[(key, value)])
    if element.id in boundary_of:
        clauses.append(f'inside the "{boundary_of[element.id]}" trust boundary')
    sentence = f'"{element.name}" is {article} {element.kind.label}'
    if clauses:
        sentence += " " + ", ".join(clauses)
    return sentence + "."


def _flow_sentence(flow: DataFlow) -> str:
    sentence = f'The data flow "{flow.name}" carries data from "{flow.source}" to "{flow.sink}"'
    if flow.crosses:
        label = "trust boundary" if len(flow.crosses) == 1 else "trust boundaries"
        sentence += f", crossing the {_join_names(flow.crosses)} {label}"
    return sentence + "."


def render_description(graph: DfdGraph) -> SystemDescription:
    """Render a valid graph to deterministic prose, one sentence per line.

    Declaration order is preserved so the same graph always yields the
    same bytes.
    """
    problems = validate(graph)
    if problems:
        raise InvalidGraphError(problems)
    boundary_of: dict[str, str] = {}
    for b in graph.boundaries:
        for member in b.contains:
            boundary_of[member] = b.id
    lines = [f'The system under analysis is "{graph.title}".']
    for element in graph.elements:
        lines.append(_element_sentence(element, boundary_of))
    for flow in graph.flows:
        lines.append(_flow_sentence(flow))
    return SystemDescription.from_text("\n".join(lines))


# --- serialization -------------------------------------------------------


def serialize(graph: DfdGraph) -> str:
    """Write a graph back to DSL text; parse_dfd(serialize(g)) == g."""
    lines = [f'dfd "{graph.title}" {{']
    for e in graph.elements:
        attrs = [
            f"{key} = {e.attribute(key)}"
            for key in ("running_as", "isolation", "accepts_input_from")
            if e.attribute(key) != "none"
        ]
        body = f" {', '.join(attrs)} " if attrs else ""
        lines.append(f'  {e.kind.value} "{e.name}" {{{body}}}')
    for b in graph.boundaries:
        members = ", ".join(f'"{m}"' for m in b.contains)
        lines.append(f'  boundary "{b.name}" contains [{members}]')
    for f in graph.flows:
        attrs = []
        if f.crosses:
            crossed = ", ".join(f'"{c}"' for c in f.crosses)
            attrs.append(f"crosses = [{crossed}]")
        if f.self_loop:
            attrs.append("self_loop = true")
        suffix = f" {{ {', '.join(attrs)} }}" if attrs else ""
        lines.append(f'  flow "{f.name}" from "{f.source}" to "{f.sink}"{suffix}')
    lines.append("}")
    return "\n".join(lines) + "\n"
