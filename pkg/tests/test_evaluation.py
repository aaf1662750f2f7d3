"""Metric formulas, similarity providers, and report aggregation."""

import json
import math
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from threatforge import evaluation, extraction, stride
from threatforge.errors import (
    EmptyInputError,
    EmptyTextError,
    EndpointFailureError,
    ModeMismatchError,
)
from threatforge.nist import BASE_ONLY, STRICT, CodeSet, ControlCode

CODE_POOL = [
    "AC-2", "AC-3", "AC-6", "AU-2", "AU-10", "CM-2", "CP-9", "IA-2", "IA-5",
    "IR-4", "PE-3", "RA-3", "SC-5", "SC-7", "SC-8", "SC-12", "SI-4", "SR-3",
]


def brute_force_metrics(generated: list[str], truth: list[str]):
    """Independent element-by-element counter used as the oracle."""
    gen, tru = [], []
    for token in generated:
        if token not in gen:
            gen.append(token)
    for token in truth:
        if token not in tru:
            tru.append(token)
    if not gen and not tru:
        return 1.0, 1.0, 1.0
    if not gen or not tru:
        return 0.0, 0.0, 0.0
    inter = sum(1 for token in gen if token in tru)
    union = len(tru) + sum(1 for token in gen if token not in tru)
    return inter / len(gen), inter / len(tru), inter / union


def test_worked_example():
    metrics = evaluation.set_metrics(
        CodeSet.of("IA-2", "SC-12", "AC-3"), CodeSet.of("IA-2", "SC-12", "SC-8")
    )
    assert metrics.precision == 2 / 3
    assert metrics.recall == 2 / 3
    assert metrics.accuracy == 0.5
    assert not metrics.degenerate


def test_identical_sets():
    metrics = evaluation.set_metrics(CodeSet.of("IA-2"), CodeSet.of("IA-2"))
    assert metrics == evaluation.SetMetrics(1.0, 1.0, 1.0, False)


def test_base_only_enhancement_equality():
    metrics = evaluation.set_metrics(CodeSet.of("SC-7(3)"), CodeSet.of("SC-7"))
    assert (metrics.precision, metrics.recall, metrics.accuracy) == (1.0, 1.0, 1.0)


def test_degenerate_conventions():
    both = evaluation.set_metrics(CodeSet(), CodeSet())
    assert both == evaluation.SetMetrics(1.0, 1.0, 1.0, True)
    gen_empty = evaluation.set_metrics(CodeSet(), CodeSet.of("IA-2"))
    assert gen_empty == evaluation.SetMetrics(0.0, 0.0, 0.0, True)
    truth_empty = evaluation.set_metrics(CodeSet.of("IA-2"), CodeSet())
    assert truth_empty == evaluation.SetMetrics(0.0, 0.0, 0.0, True)


def test_mode_mismatch_rejected():
    with pytest.raises(ModeMismatchError):
        evaluation.set_metrics(
            CodeSet.of("IA-2"), CodeSet.of("IA-2", comparison_mode=STRICT)
        )


def test_agrees_with_brute_force_on_random_pairs():
    rng = random.Random(20240815)
    for _ in range(1000):
        gen_tokens = rng.sample(CODE_POOL, rng.randint(0, 15))
        truth_tokens = rng.sample(CODE_POOL, rng.randint(0, 15))
        metrics = evaluation.set_metrics(CodeSet.of(*gen_tokens), CodeSet.of(*truth_tokens))
        expected = brute_force_metrics(gen_tokens, truth_tokens)
        assert (metrics.precision, metrics.recall, metrics.accuracy) == expected


def test_accuracy_bounded_by_precision_and_recall():
    rng = random.Random(5150)
    for _ in range(500):
        gen = CodeSet.of(*rng.sample(CODE_POOL, rng.randint(1, 15)))
        truth = CodeSet.of(*rng.sample(CODE_POOL, rng.randint(1, 15)))
        metrics = evaluation.set_metrics(gen, truth)
        assert metrics.accuracy <= min(metrics.precision, metrics.recall) + 1e-15


def test_lexical_hand_example():
    similarity = evaluation.text_similarity("ab ab c", "ab c")
    assert abs(similarity - 3 / math.sqrt(10)) < 1e-12


def test_self_similarity_is_one():
    text = "Boundary protection for the payment gateway."
    assert abs(evaluation.text_similarity(text, text) - 1.0) < 1e-6


def test_disjoint_vocabulary_is_zero():
    assert evaluation.text_similarity("alpha beta", "gamma delta") == 0.0


def test_similarity_symmetric():
    rng = random.Random(8)
    words = ["teller", "vault", "wire", "card", "audit", "ledger"]
    for _ in range(50):
        a = " ".join(rng.choices(words, k=rng.randint(1, 12)))
        b = " ".join(rng.choices(words, k=rng.randint(1, 12)))
        assert abs(evaluation.text_similarity(a, b) - evaluation.text_similarity(b, a)) < 1e-9


def test_empty_text_rejected():
    with pytest.raises(EmptyTextError):
        evaluation.text_similarity("  ", "x")


def _sample_findings(*code_lists):
    findings = []
    for i, codes in enumerate(code_lists):
        findings.append(
            stride.ThreatFinding(
                category=stride.CATEGORY_ORDER[i % 6],
                subject_id="",
                description=f"Scenario {i} text.",
                mitigation=f"Safeguard {i}.",
                codes=CodeSet.of(*codes),
            )
        )
    return findings


def test_evaluate_sample_perfect_round_trip():
    truth = _sample_findings(["IA-2", "SC-12"], ["SC-7", "SC-8"])
    parsed = extraction.parse_findings(stride.render_findings(truth))
    score = evaluation.evaluate_sample(parsed, truth, sample_id="s1")
    assert (score.precision, score.recall, score.accuracy) == (1.0, 1.0, 1.0)
    assert abs(score.similarity - 1.0) < 1e-9
    assert score.flags == ()


def test_evaluate_sample_zero_findings_degenerate():
    score = evaluation.evaluate_sample(
        extraction.parse_findings(""), _sample_findings(["IA-2"]), sample_id="s1"
    )
    assert (score.precision, score.recall, score.accuracy) == (0.0, 0.0, 0.0)
    assert score.similarity == 0.0
    assert evaluation.DEGENERATE_SETS in score.flags
    assert evaluation.EMPTY_SIMILARITY in score.flags


def test_evaluate_sample_partial_overlap_fixture():
    # Constructed so |inter| = 1, |generated| = 2, |truth| = 2.
    truth = _sample_findings(["IA-2", "SC-8"])
    transcript = (
        "Threat Type: Spoofing\nDescription: forged teller identity.\n"
        "Mitigation: enforce authentication.\nNIST: IA-2, AC-6"
    )
    score = evaluation.evaluate_sample(
        extraction.parse_findings(transcript), truth, sample_id="s1"
    )
    assert (score.precision, score.recall, score.accuracy) == (0.5, 0.5, 1 / 3)


def test_evaluate_sample_requires_truth():
    with pytest.raises(EmptyInputError):
        evaluation.evaluate_sample(extraction.parse_findings("x"), [], sample_id="s")


def _score(i, p, r, a, sim=0.5):
    return evaluation.SampleScore(
        sample_id=f"s{i:02d}",
        precision=p,
        recall=r,
        accuracy=a,
        similarity=sim,
        generated=CodeSet.of("IA-2"),
        truth=CodeSet.of("IA-2"),
    )


def test_aggregate_single_score_is_identity():
    report = evaluation.aggregate([_score(1, 0.25, 0.5, 0.2)])
    assert report.macro_precision == 0.25
    assert report.macro_recall == 0.5
    assert report.macro_accuracy == 0.2
    assert report.n_samples == 1


def test_aggregate_mean():
    report = evaluation.aggregate([_score(1, 1.0, 1.0, 0.0), _score(2, 0.0, 0.0, 1.0)])
    assert report.macro_accuracy == 0.5
    assert report.macro_precision == 0.5


def test_aggregate_empty_rejected():
    with pytest.raises(EmptyInputError):
        evaluation.aggregate([])


def test_aggregate_permutation_invariant():
    rng = random.Random(4)
    scores = [_score(i, rng.random(), rng.random(), rng.random()) for i in range(12)]
    shuffled = scores[:]
    rng.shuffle(shuffled)
    assert evaluation.aggregate(scores) == evaluation.aggregate(shuffled)


def test_backsolved_fixture_means_match_to_1e12():
    # Ten fixtures constructed so the macro means land on (0.35 precision,
    # 0.27 recall, 0.17 accuracy); scored here end to end.
    from .conftest import FIXTURES
    from threatforge import dataset as ds

    transcripts = json.loads(
        (FIXTURES / "replay_initial" / "transcripts.json").read_text("utf-8")
    )
    truth = {s.id: s for s in ds.load_samples(FIXTURES / "replay_initial" / "truth.json")}
    scores = [
        evaluation.evaluate_sample(
            extraction.parse_findings(transcripts[sid]), truth[sid].ground_truth, sample_id=sid
        )
        for sid in sorted(transcripts)
    ]
    report = evaluation.aggregate(scores)
    assert abs(report.macro_precision - 0.35) < 1e-12
    assert abs(report.macro_recall - 0.27) < 1e-12
    assert abs(report.macro_accuracy - 0.17) < 1e-12


def test_report_serialization_shapes():
    report = evaluation.aggregate([_score(1, 0.5, 0.5, 0.5)], notes=("similarity=lexical",))
    payload = json.loads(evaluation.report_to_json(report))
    assert payload["aggregation"] == "macro"
    assert payload["macro"]["precision"] == 0.5
    assert payload["per_sample"][0]["id"] == "s01"
    table = evaluation.format_report_table(report)
    assert "MACRO" in table


class _EmbeddingHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers["Content-Length"])
        request = json.loads(self.rfile.read(length))
        vectors = []
        for text in request["input"]:
            # Orthogonal-ish deterministic stub: vector from text length.
            vectors.append([float(len(text)), 1.0, 0.0])
        body = json.dumps(
            {"data": [{"embedding": v, "index": i} for i, v in enumerate(vectors)]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def embedding_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _EmbeddingHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_embedding_provider_self_similarity(embedding_server):
    provider = evaluation.SimilarityProvider(
        kind=evaluation.EMBEDDING_ENDPOINT, endpoint=embedding_server
    )
    assert abs(evaluation.text_similarity("same text", "same text", provider) - 1.0) < 1e-6


def test_embedding_endpoint_failure():
    provider = evaluation.SimilarityProvider(
        kind=evaluation.EMBEDDING_ENDPOINT, endpoint="http://127.0.0.1:9"
    )
    with pytest.raises(EndpointFailureError):
        evaluation.text_similarity("a", "b", provider)


def test_embedding_failure_downgrades_to_lexical_when_allowed():
    provider = evaluation.SimilarityProvider(
        kind=evaluation.EMBEDDING_ENDPOINT, endpoint="http://127.0.0.1:9"
    )
    truth = _sample_findings(["IA-2"])
    parsed = extraction.parse_findings(stride.render_findings(truth))
    score = evaluation.evaluate_sample(
        parsed, truth, provider, sample_id="s", fallback_on_error=True
    )
    assert evaluation.SIMILARITY_FALLBACK in score.flags
    assert abs(score.similarity - 1.0) < 1e-9
