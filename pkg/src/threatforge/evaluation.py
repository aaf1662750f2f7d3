"""Set-based scoring of mitigation codes plus text similarity.

Per sample: precision = |G ∩ T| / |G|, recall = |G ∩ T| / |T|, and
accuracy = |G ∩ T| / |G ∪ T| over code sets, with document-level cosine
similarity between the generated and ground-truth finding text. Reports
aggregate with unweighted per-sample means (macro averaging).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import requests

from .errors import (
    EmptyInputError,
    EmptyTextError,
    EndpointFailureError,
    ModeMismatchError,
)
from .extraction import ParsedOutput
from .nist import CodeSet
from .stride import ThreatFinding, findings_code_union, render_findings

EMBEDDING_ENDPOINT = "embedding_endpoint"
LEXICAL_FALLBACK = "lexical_fallback"

DEGENERATE_SETS = "degenerate_sets"
EMPTY_GENERATED = "empty_generated"
EMPTY_SIMILARITY = "empty_similarity"
SIMILARITY_FALLBACK = "similarity_fallback"


@dataclass(frozen=True)
class SimilarityProvider:
    kind: str = LEXICAL_FALLBACK
    endpoint: str = ""
    model_id: str = ""  # empty: let the endpoint use its loaded model

    def __post_init__(self):
        if self.kind not in (EMBEDDING_ENDPOINT, LEXICAL_FALLBACK):
            raise ValueError(f"unknown similarity provider kind {self.kind!r}")
        if self.kind == EMBEDDING_ENDPOINT and not self.endpoint:
            raise ValueError("embedding provider needs an endpoint")

    @property
    def label(self) -> str:
        if self.kind == LEXICAL_FALLBACK:
            return "lexical"
        suffix = f" model={self.model_id}" if self.model_id else ""
        return f"embedding:{self.endpoint}{suffix}"


class SetMetrics(NamedTuple):
    precision: float
    recall: float
    accuracy: float
    degenerate: bool


def set_metrics(generated: CodeSet, truth: CodeSet) -> SetMetrics:
    """Exact set-overlap metrics with explicit degenerate conventions:
    both sides empty scores (1, 1, 1); one side empty scores (0, 0, 0);
    either way the degenerate flag is raised."""
    if generated.comparison_mode != truth.comparison_mode:
        raise ModeMismatchError(
            f"generated is {generated.comparison_mode}, truth is {truth.comparison_mode}"
        )
    n_generated = len(generated)
    n_truth = len(truth)
    if n_generated == 0 and n_truth == 0:
        return SetMetrics(1.0, 1.0, 1.0, True)
    if n_generated == 0 or n_truth == 0:
        return SetMetrics(0.0, 0.0, 0.0, True)
    inter = generated.intersection_size(truth)
    union = generated.union_size(truth)
    return SetMetrics(inter / n_generated, inter / n_truth, inter / union, False)


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _term_frequencies(text: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for token in _TOKEN_RE.findall(text.lower()):
        counts[token] = counts.get(token, 0) + 1
    return counts


def _cosine(u: Sequence[float], v: Sequence[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


def lexical_similarity(a: str, b: str) -> float:
    """Cosine of L2-normalized term-frequency vectors over lowercased
    alphanumeric tokens. Needs no network."""
    tf_a = _term_frequencies(a)
    tf_b = _term_frequencies(b)
    if not tf_a or not tf_b:
        return 0.0
    dot = sum(count * tf_b.get(token, 0) for token, count in tf_a.items())
    norm_a = math.sqrt(sum(c * c for c in tf_a.values()))
    norm_b = math.sqrt(sum(c * c for c in tf_b.values()))
    return dot / (norm_a * norm_b)


def fetch_embeddings(texts: Sequence[str], provider: SimilarityProvider) -> list[list[float]]:
    """One vector per text from the embeddings endpoint, in input order."""
    url = provider.endpoint.rstrip("/") + "/embeddings"
    body: dict = {"input": list(texts)}
    if provider.model_id:
        body["model"] = provider.model_id
    try:
        response = requests.post(url, json=body, timeout=60)
    except requests.RequestException as exc:
        raise EndpointFailureError(f"embeddings endpoint unreachable: {exc.__class__.__name__}") from exc
    if response.status_code != 200:
        raise EndpointFailureError(f"embeddings endpoint returned HTTP {response.status_code}")
    try:
        data = response.json()["data"]
        vectors = [item["embedding"] for item in data]
    except (KeyError, TypeError, ValueError) as exc:
        raise EndpointFailureError(f"malformed embeddings response: {exc}") from exc
    if len(vectors) != len(texts):
        raise EndpointFailureError(
            f"expected {len(texts)} vectors, got {len(vectors)}"
        )
    return vectors


def text_similarity(a: str, b: str, provider: SimilarityProvider | None = None) -> float:
    """Similarity in [-1, 1] between two non-empty texts."""
    if provider is None:
        provider = SimilarityProvider()
    if not a.strip() or not b.strip():
        raise EmptyTextError("cannot compare empty text")
    if provider.kind == LEXICAL_FALLBACK:
        return lexical_similarity(a, b)
    u, v = fetch_embeddings([a, b], provider)
    return _cosine(u, v)


@dataclass(frozen=True)
class SampleScore:
    sample_id: str
    precision: float
    recall: float
    accuracy: float
    similarity: float
    generated: CodeSet
    truth: CodeSet
    flags: tuple[str, ...] = ()


def evaluate_sample(
    parsed: ParsedOutput,
    truth: Sequence[ThreatFinding],
    provider: SimilarityProvider | None = None,
    sample_id: str = "",
    fallback_on_error: bool = False,
) -> SampleScore:
    """Score one parsed completion against ground-truth findings.

    Code sets are the unions across findings on each side; similarity
    compares the canonical text of the parsed findings (output order)
    with that of the truth (declaration order). With fallback_on_error,
    an embedding endpoint failure downgrades to the lexical provider and
    is flagged on the score.
    """
    if not truth:
        raise EmptyInputError("ground truth must be non-empty")
    if provider is None:
        provider = SimilarityProvider()
    generated = findings_code_union(parsed.findings)
    truth_set = findings_code_union(truth)
    metrics = set_metrics(generated, truth_set)

    flags: list[str] = []
    if metrics.degenerate:
        flags.append(DEGENERATE_SETS)
    if len(generated) == 0:
        flags.append(EMPTY_GENERATED)

    generated_text = render_findings(parsed.findings)
    truth_text = render_findings(truth)
    if not generated_text.strip() or not truth_text.strip():
        similarity = 0.0
        flags.append(EMPTY_SIMILARITY)
    else:
        try:
            similarity = text_similarity(generated_text, truth_text, provider)
        except EndpointFailureError:
            if not fallback_on_error:
                raise
            similarity = lexical_similarity(generated_text, truth_text)
            flags.append(SIMILARITY_FALLBACK)

    return SampleScore(
        sample_id=sample_id,
        precision=metrics.precision,
        recall=metrics.recall,
        accuracy=metrics.accuracy,
        similarity=similarity,
        generated=generated,
        truth=truth_set,
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class EvalReport:
    per_sample: tuple[SampleScore, ...]
    macro_precision: float
    macro_recall: float
    macro_accuracy: float
    macro_similarity: float
    n_samples: int
    n_empty_generated: int
    notes: tuple[str, ...] = ()


def aggregate(scores: Sequence[SampleScore], notes: Sequence[str] = ()) -> EvalReport:
    """Unweighted per-sample means, samples ordered by id."""
    if not scores:
        raise EmptyInputError("no sample scores to aggregate")
    ordered = tuple(sorted(scores, key=lambda s: s.sample_id))
    n = len(ordered)
    return EvalReport(
        per_sample=ordered,
        macro_precision=sum(s.precision for s in ordered) / n,
        macro_recall=sum(s.recall for s in ordered) / n,
        macro_accuracy=sum(s.accuracy for s in ordered) / n,
        macro_similarity=sum(s.similarity for s in ordered) / n,
        n_samples=n,
        n_empty_generated=sum(1 for s in ordered if len(s.generated) == 0),
        notes=tuple(notes),
    )


def report_to_dict(report: EvalReport) -> dict:
    return {
        "aggregation": "macro",
        "notes": list(report.notes),
        "n_samples": report.n_samples,
        "n_empty_generated": report.n_empty_generated,
        "macro": {
            "precision": report.macro_precision,
            "recall": report.macro_recall,
            "accuracy": report.macro_accuracy,
            "similarity": report.macro_similarity,
        },
        "per_sample": [
            {
                "id": s.sample_id,
                "precision": s.precision,
                "recall": s.recall,
                "accuracy": s.accuracy,
                "similarity": s.similarity,
                "generated": s.generated.canonical_tokens(),
                "truth": s.truth.canonical_tokens(),
                "flags": list(s.flags),
            }
            for s in report.per_sample
        ],
    }


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, ensure_ascii=False) + "\n"


def format_report_table(report: EvalReport) -> str:
    """Aligned plain-text table, one row per sample plus the macro row."""
    headers = ("sample", "precision", "recall", "accuracy", "similarity", "flags")
    rows = [
        (
            s.sample_id,
            f"{s.precision:.4f}",
            f"{s.recall:.4f}",
            f"{s.accuracy:.4f}",
            f"{s.similarity:.4f}",
            ",".join(s.flags) or "-",
        )
        for s in report.per_sample
    ]
    rows.append(
        (
            "MACRO",
            f"{report.macro_precision:.4f}",
            f"{report.macro_recall:.4f}",
            f"{report.macro_accuracy:.4f}",
            f"{report.macro_similarity:.4f}",
            f"n={report.n_samples}",
        )
    )
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n"
