"""Extraction of structured threat findings and control codes from
free-form model completions.

Parsing is heuristic and total: any text yields a ParsedOutput, never an
exception. Segmentation tries, in order, category headings, numbered
items mentioning a threat, then a single fallback block. Blocks with no
recognizable category are reported as unparsed spans rather than dropped
silently, and syntactically valid codes from unknown families are kept
(they should hurt precision, not disappear).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from . import nist
from .stride import StrideCategory, ThreatFinding

_CODE_TOKEN_RE = re.compile(r"\b([A-Za-z]{2})-([0-9]+)(?:\(([0-9]+)\))?")

_NAME_PATTERNS = {
    StrideCategory.SPOOFING: r"spoofing",
    StrideCategory.TAMPERING: r"tampering",
    StrideCategory.REPUDIATION: r"repudiation",
    StrideCategory.INFORMATION_DISCLOSURE: r"information[\s_-]+disclosure",
    StrideCategory.DENIAL_OF_SERVICE: r"denial[\s_-]+of[\s_-]+service",
    StrideCategory.ELEVATION_OF_PRIVILEGE: r"elevation[\s_-]+of[\s_-]+privilege",
}

_HEADING_NAME_RES = [
    (category, re.compile(rf"^{pattern}\b", re.IGNORECASE))
    for category, pattern in _NAME_PATTERNS.items()
]
_ANY_NAME_RE = re.compile(
    "|".join(f"(?P<{cat.name}>{pattern})" for cat, pattern in _NAME_PATTERNS.items()),
    re.IGNORECASE,
)
_HEADING_LETTER_RE = re.compile(r"^([STRIDEstride])\s*(?=[:.)\]]|$)")
_PAREN_LETTER_RE = re.compile(r"\(([STRIDEstride])\)")

# Optional list/label clutter before a category heading.
_HEADING_PREFIX_RE = re.compile(
    r"^\s*(?:#{1,6}\s*)?(?:\d+\s*[.):]\s*|[-*•]\s+)?"
    r"(?:(?:threat\s+type|threat\s+category|category|threat)\s*[:.]\s*)?",
    re.IGNORECASE,
)
_NUMBERED_ITEM_RE = re.compile(r"^\s*(?:\d+\s*[.):]|[-*•])\s+", re.IGNORECASE)
_THREAT_WORD_RE = re.compile(r"\bthreats?\b", re.IGNORECASE)
_DESCRIPTION_LABEL_RE = re.compile(r"^\s*description\s*[:.]\s*", re.IGNORECASE)
_CODE_LINE_RE = re.compile(r"^\s*nist\b", re.IGNORECASE)

_LETTER_TO_CATEGORY = {c.letter: c for c in StrideCategory}


@dataclass(frozen=True)
class ParsedOutput:
    findings: tuple[ThreatFinding, ...]
    unparsed_spans: tuple[tuple[int, int], ...]
    warnings: tuple[str, ...]


def load_cues(path=None) -> tuple[str, ...]:
    """Mitigation cue words; one per line, '#' comments allowed."""
    if path is None:
        text = resources.files("threatforge.data").joinpath("cues.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    cues = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            cues.append(line)
    return tuple(cues)


def _cue_re(cues: tuple[str, ...]) -> re.Pattern:
    alternatives = "|".join(rf"{re.escape(c)}\w*" for c in cues)
    return re.compile(rf"\b(?:{alternatives})\b", re.IGNORECASE)


def scan_codes(text: str) -> tuple[list[nist.ControlCode], list[str]]:
    """All control-code tokens in the text, deduplicated, plus warnings
    for codes whose family is not one of the 20 known families."""
    seen: dict[nist.ControlCode, None] = {}
    warnings: list[str] = []
    for m in _CODE_TOKEN_RE.finditer(text):
        number = int(m.group(2))
        enhancement = int(m.group(3)) if m.group(3) else None
        if number < 1 or (enhancement is not None and enhancement < 1):
            continue
        code = nist.ControlCode(m.group(1).upper(), number, enhancement)
        if code not in seen:
            seen[code] = None
            if code.family not in nist.FAMILIES:
                warnings.append(f"unknown control family in {code.canonical}")
    return list(seen), warnings


def extract_codes(text: str, comparison_mode: str = nist.BASE_ONLY) -> nist.CodeSet:
    """The set of control codes mentioned anywhere in the text."""
    codes, _ = scan_codes(text)
    return nist.CodeSet(codes, comparison_mode)


def _match_heading(line: str):
    """Category heading test; returns (category, remainder) or None."""
    prefix = _HEADING_PREFIX_RE.match(line)
    candidate = line[prefix.end():] if prefix else line
    for category, pattern in _HEADING_NAME_RES:
        m = pattern.match(candidate)
        if m:
            return category, candidate[m.end():]
    m = _HEADING_LETTER_RE.match(candidate)
    if m:
        return _LETTER_TO_CATEGORY[m.group(1).upper()], candidate[m.end():]
    return None


def _find_category(text: str) -> StrideCategory | None:
    """First category keyword in running text: full names, then (X)."""
    name_hit = _ANY_NAME_RE.search(text)
    paren_hit = _PAREN_LETTER_RE.search(text)
    if name_hit and (not paren_hit or name_hit.start() <= paren_hit.start()):
        return StrideCategory[name_hit.lastgroup]
    if paren_hit:
        return _LETTER_TO_CATEGORY[paren_hit.group(1).upper()]
    return None


def _lines_with_offsets(text: str) -> list[tuple[int, str]]:
    out = []
    offset = 0
    for line in text.splitlines(keepends=True):
        out.append((offset, line.rstrip("\n").rstrip("\r")))
        offset += len(line)
    return out


def _clean_region(lines: list[str]) -> str:
    kept = []
    for line in lines:
        if _CODE_LINE_RE.match(line):
            continue
        line = _DESCRIPTION_LABEL_RE.sub("", line).strip()
        if line:
            kept.append(line)
    return " ".join(kept)


def _strip_leading_punct(text: str) -> str:
    return text.lstrip(" \t:.-–—)(").strip()


def parse_findings(text: str, cues: tuple[str, ...] | None = None) -> ParsedOutput:
    """Parse a completion into findings; total over all inputs."""
    if not text or not text.strip():
        return ParsedOutput((), (), ())
    if cues is None:
        cues = load_cues()
    cue_re = _cue_re(cues)

    lines = _lines_with_offsets(text)

    # Heuristic 1: lines that are category headings.
    starts: list[tuple[int, StrideCategory | None, str]] = []
    for idx, (_, line) in enumerate(lines):
        if not line.strip():
            continue
        hit = _match_heading(line)
        if hit:
            starts.append((idx, hit[0], _strip_leading_punct(hit[1])))

    # Heuristic 2: numbered or bulleted items that talk about a threat.
    if not starts:
        for idx, (_, line) in enumerate(lines):
            if _NUMBERED_ITEM_RE.match(line) and _THREAT_WORD_RE.search(line):
                starts.append((idx, None, line.strip()))

    # Heuristic 3: the whole text as one block.
    if not starts:
        starts.append((0, None, lines[0][1].strip() if lines else ""))

    findings: list[ThreatFinding] = []
    unparsed: list[tuple[int, int]] = []
    warnings: list[str] = []
    seen_keys: set = set()

    first_start_offset = lines[starts[0][0]][0]
    if text[:first_start_offset].strip():
        unparsed.append((0, first_start_offset))

    for pos, (start_idx, heading_category, heading_rest) in enumerate(starts):
        end_idx = starts[pos + 1][0] if pos + 1 < len(starts) else len(lines)
        block_lines = [line for _, line in lines[start_idx:end_idx]]
        block_start = lines[start_idx][0]
        block_end = lines[end_idx][0] if end_idx < len(lines) else len(text)
        block_text = text[block_start:block_end]

        category = heading_category or _find_category(block_text)
        if category is None:
            unparsed.append((block_start, block_end - block_start))
            continue

        codes, code_warnings = scan_codes(block_text)
        warnings.extend(code_warnings)

        # Body lines: heading remainder (if any prose) plus following lines.
        body = ([heading_rest] if heading_rest else []) + block_lines[1:]
        body_text = "\n".join(body)
        cue_hit = cue_re.search(body_text)
        if cue_hit:
            desc_part = body_text[: cue_hit.start()]
            mit_part = body_text[cue_hit.end():]
        else:
            desc_part, mit_part = body_text, ""
        description = _clean_region(desc_part.splitlines())
        mitigation = _strip_leading_punct(_clean_region(mit_part.splitlines()))

        key = (category, frozenset(c.base for c in codes), description.casefold())
        if key in seen_keys:
            continue
        seen_keys.add(key)
        findings.append(
            ThreatFinding(
                category=category,
                subject_id="",
                description=description,
                mitigation=mitigation,
                codes=nist.CodeSet(codes),
            )
        )

    return ParsedOutput(tuple(findings), tuple(unparsed), tuple(warnings))
