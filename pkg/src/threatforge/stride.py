"""Deterministic STRIDE-per-element threat enumeration.

Serves two roles: generator of synthetic ground truth (standing in for a
drawing-tool scan) and sanity oracle for model outputs. The rule table is
editable configuration so users can match their own tool template.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Iterable, Mapping, Sequence

from . import nist
from .dfd import DataFlow, DfdElement, DfdGraph, ElementKind, validate
from .errors import InvalidGraphError, SchemaError, UnknownKindError
from .listcfg import load_list_table, parse_list_table


class StrideCategory(Enum):
    """The six threat categories, each paired with the property it violates."""

    SPOOFING = ("S", "Spoofing", "Authenticity")
    TAMPERING = ("T", "Tampering", "Integrity")
    REPUDIATION = ("R", "Repudiation", "Non-repudiability")
    INFORMATION_DISCLOSURE = ("I", "Information Disclosure", "Confidentiality")
    DENIAL_OF_SERVICE = ("D", "Denial of Service", "Availability")
    ELEVATION_OF_PRIVILEGE = ("E", "Elevation of Privilege", "Authorization")

    def __init__(self, letter: str, label: str, desired_property: str):
        self.letter = letter
        self.label = label
        self.desired_property = desired_property

    @classmethod
    def from_text(cls, token: str) -> "StrideCategory":
        cleaned = " ".join(token.replace("-", " ").split()).casefold()
        for category in cls:
            if cleaned == category.letter.casefold() or cleaned == category.label.casefold():
                return category
        raise SchemaError(f"not a STRIDE category: {token!r}")

    def __str__(self) -> str:
        return self.label


CATEGORY_ORDER: tuple[StrideCategory, ...] = tuple(StrideCategory)

# Subject kinds the rule table must cover: the three element kinds plus flows.
FLOW_KIND = "flow"
SUBJECT_KINDS = ("external", "process", "store", FLOW_KIND)


@dataclass(frozen=True)
class RuleTable:
    """Maps each subject kind to its applicable categories."""

    rows: Mapping[str, tuple[StrideCategory, ...]]

    def __post_init__(self):
        for kind in SUBJECT_KINDS:
            if kind not in self.rows:
                raise SchemaError(f"rule table missing kind {kind!r}")
            if not self.rows[kind]:
                raise SchemaError(f"rule table row for {kind!r} is empty")
        covered = {c for row in self.rows.values() for c in row}
        missing = [c.letter for c in CATEGORY_ORDER if c not in covered]
        if missing:
            raise SchemaError(f"categories never applicable: {', '.join(missing)}")

    def row(self, kind: str) -> tuple[StrideCategory, ...]:
        if kind not in self.rows:
            raise UnknownKindError(f"no rule row for kind {kind!r}")
        return self.rows[kind]


def _table_from_lists(raw: dict[str, list[str]], source: str) -> RuleTable:
    rows: dict[str, tuple[StrideCategory, ...]] = {}
    for kind, letters in raw.items():
        if kind not in SUBJECT_KINDS:
            raise SchemaError(f"unknown subject kind {kind!r}", source)
        categories = {StrideCategory.from_text(letter) for letter in letters}
        rows[kind] = tuple(c for c in CATEGORY_ORDER if c in categories)
    return RuleTable(rows)


_default_table: RuleTable | None = None


def load_rule_table(path=None) -> RuleTable:
    """Load a rule table; with no path, the bundled default matrix."""
    global _default_table
    if path is not None:
        return _table_from_lists(load_list_table(path), str(path))
    if _default_table is None:
        text = resources.files("threatforge.data").joinpath("rule_table.txt").read_text("utf-8")
        _default_table = _table_from_lists(parse_list_table(text, "rule_table.txt"), "rule_table.txt")
    return _default_table


def applicable_categories(kind, table: RuleTable | None = None) -> tuple[StrideCategory, ...]:
    """The table row for an element kind or "flow", verbatim and never empty."""
    if table is None:
        table = load_rule_table()
    key = kind.value if isinstance(kind, ElementKind) else str(kind)
    return table.row(key)


@dataclass(frozen=True)
class ThreatFinding:
    """One identified threat with its mitigation text and control codes."""

    category: StrideCategory
    subject_id: str
    description: str
    mitigation: str
    codes: nist.CodeSet


_DESCRIPTION_TEMPLATES = {
    StrideCategory.SPOOFING: (
        'An attacker could impersonate "{name}" or present forged credentials '
        "to gain unauthorized access."
    ),
    StrideCategory.TAMPERING: (
        'Data handled by "{name}" could be modified in transit or at rest '
        "without authorization."
    ),
    StrideCategory.REPUDIATION: (
        'Actions involving "{name}" could later be denied because the system '
        "keeps insufficient proof of who did what."
    ),
    StrideCategory.INFORMATION_DISCLOSURE: (
        'Sensitive information processed by "{name}" could be exposed to '
        "parties who are not authorized to read it."
    ),
    StrideCategory.DENIAL_OF_SERVICE: (
        '"{name}" could be overwhelmed or starved of resources, making the '
        "service unavailable to legitimate users."
    ),
    StrideCategory.ELEVATION_OF_PRIVILEGE: (
        'A low-privileged actor could abuse "{name}" to perform operations '
        "reserved for higher privilege levels."
    ),
}

_MITIGATION_TEMPLATES = {
    StrideCategory.SPOOFING: (
        "Require strong identification and authentication, including "
        "multi-factor authentication, and manage cryptographic keys for "
        "identity verification."
    ),
    StrideCategory.TAMPERING: (
        "Protect system boundaries and preserve the confidentiality and "
        "integrity of transmitted data."
    ),
    StrideCategory.REPUDIATION: (
        "Log security-relevant events and apply non-repudiation safeguards "
        "such as signed audit records."
    ),
    StrideCategory.INFORMATION_DISCLOSURE: (
        "Encrypt data in transit and enforce access control decisions on "
        "every read path."
    ),
    StrideCategory.DENIAL_OF_SERVICE: (
        "Apply denial-of-service protections such as rate limiting and "
        "capacity safeguards."
    ),
    StrideCategory.ELEVATION_OF_PRIVILEGE: (
        "Enforce least privilege so no component or account holds more "
        "authority than its function requires."
    ),
}


def _subject_kind(subject) -> str:
    if isinstance(subject, DfdElement):
        return subject.kind.value
    if isinstance(subject, DataFlow):
        return FLOW_KIND
    raise UnknownKindError(f"not an element or flow: {subject!r}")


def enumerate_threats(
    graph: DfdGraph,
    table: RuleTable | None = None,
    category_codes: Mapping[str, nist.CodeSet] | None = None,
) -> list[ThreatFinding]:
    """Enumerate exactly one finding per (subject, applicable category).

    Subjects are visited in declaration order (elements, then flows) and
    categories in S, T, R, I, D, E order, so repeat calls on the same
    inputs are byte-identical.
    """
    problems = validate(graph)
    if problems:
        raise InvalidGraphError(problems)
    if table is None:
        table = load_rule_table()
    if category_codes is None:
        category_codes = nist.load_category_codes()
    findings: list[ThreatFinding] = []
    for subject in (*graph.elements, *graph.flows):
        for category in table.row(_subject_kind(subject)):
            findings.append(
                ThreatFinding(
                    category=category,
                    subject_id=subject.id,
                    description=_DESCRIPTION_TEMPLATES[category].format(name=subject.name),
                    mitigation=_MITIGATION_TEMPLATES[category],
                    codes=category_codes[category.letter],
                )
            )
    return findings


# --- canonical text form ---------------------------------------------------

THREAT_TYPE_LABEL = "Threat Type:"
DESCRIPTION_LABEL = "Description:"
MITIGATION_LABEL = "Mitigation:"
CODES_LABEL = "NIST:"


def render_finding(finding: ThreatFinding) -> str:
    codes = ", ".join(finding.codes.canonical_tokens())
    return "\n".join(
        [
            f"{THREAT_TYPE_LABEL} {finding.category.label}",
            f"{DESCRIPTION_LABEL} {finding.description}",
            f"{MITIGATION_LABEL} {finding.mitigation}",
            f"{CODES_LABEL} {codes}",
        ]
    )


def render_findings(findings: Iterable[ThreatFinding]) -> str:
    """Canonical serialization: one labelled block per finding.

    This is the assistant-side text of fine-tune exports and the form the
    free-text parser is guaranteed to round-trip.
    """
    return "\n\n".join(render_finding(f) for f in findings)


def findings_code_union(findings: Sequence[ThreatFinding], comparison_mode: str = nist.BASE_ONLY) -> nist.CodeSet:
    """Union of all code sets across findings, in the requested mode."""
    codes: set[nist.ControlCode] = set()
    for f in findings:
        codes.update(f.codes.codes)
    return nist.CodeSet(codes, comparison_mode)
