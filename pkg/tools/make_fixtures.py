#!/usr/bin/env python3
"""Regenerate the shipped fixtures under fixtures/.

Expected metric values are computed here with self-contained brute-force
code (plain set counting, Counter-based cosine), independently of the
package's evaluation path, then frozen into JSON for the test suite.

Outputs:
  fixtures/datasets/synthetic_10.json      small synthetic benchmark
  fixtures/opro/train.json                 training samples for the optimizer demo
  fixtures/opro/script.jsonl               mock script planting 0.50 -> 0.57
  fixtures/replay/{transcripts,truth,expected}.json        macro (0.73 p, 0.73 r, 0.69 a)
  fixtures/replay_initial/{transcripts,truth,expected}.json macro (0.35 p, 0.27 r, 0.17 a)
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from fractions import Fraction
from pathlib import Path

from threatforge import dataset as ds
from threatforge import dfd, gateway, prompts, stride
from threatforge.nist import CodeSet

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

# Base codes never used by the default category mapping; safe "wrong" answers.
DISTRACTORS = [
    "CM-2", "CP-9", "IR-4", "MA-2", "PE-3", "RA-3", "SI-3", "SR-3", "AT-2",
    "PS-3", "CA-7", "PL-8", "PM-9", "PT-2", "SA-11", "MP-5", "AC-2", "AC-4",
    "AC-7", "AC-12", "AC-17", "AU-3", "AU-6", "AU-9", "AU-12", "CM-6",
    "CP-10", "IA-3", "IA-5", "IA-8", "IR-6", "RA-5", "SC-13", "SC-28",
    "SI-4", "SI-7",
]
IN_TRUTH_POOL = [
    "IA-2", "SC-12", "SC-7", "SC-8", "AU-2", "AU-10", "AC-3", "SC-5", "AC-6",
]


# --- independent oracles -----------------------------------------------------


def brute_metrics(generated: list[str], truth: list[str]) -> tuple[float, float, float]:
    """Element-by-element counting, no set algebra from the package."""
    gen_unique: list[str] = []
    for g in generated:
        if g not in gen_unique:
            gen_unique.append(g)
    truth_unique: list[str] = []
    for t in truth:
        if t not in truth_unique:
            truth_unique.append(t)
    if not gen_unique and not truth_unique:
        return 1.0, 1.0, 1.0
    if not gen_unique or not truth_unique:
        return 0.0, 0.0, 0.0
    inter = 0
    for g in gen_unique:
        if g in truth_unique:
            inter += 1
    union = len(truth_unique)
    for g in gen_unique:
        if g not in truth_unique:
            union += 1
    return inter / len(gen_unique), inter / len(truth_unique), inter / union


def brute_cosine(a: str, b: str) -> float:
    import re

    ta = Counter(re.findall(r"[a-z0-9]+", a.lower()))
    tb = Counter(re.findall(r"[a-z0-9]+", b.lower()))
    dot = sum(ta[t] * tb[t] for t in ta)
    na = math.sqrt(sum(v * v for v in ta.values()))
    nb = math.sqrt(sum(v * v for v in tb.values()))
    if na == 0 or nb == 0:
        return 0.0
    return dot / (na * nb)


# --- synthetic dataset -------------------------------------------------------


def make_synthetic_10():
    samples = ds.generate_synthetic(10, seed=7)
    out = FIXTURES / "datasets"
    out.mkdir(parents=True, exist_ok=True)
    ds.write_samples(samples, out / "synthetic_10.json")
    print(f"synthetic_10.json: {len(samples)} samples")


# --- OPRO fixture ------------------------------------------------------------

PROPOSALS = [
    "List every STRIDE threat for the described system and give a mitigation "
    "with NIST SP 800-53 control codes for each one.",
    "For each element and data flow in the description, identify the STRIDE "
    "threats and provide mitigations with NIST SP 800-53 control codes.",
    prompts.OPTIMIZED_INSTRUCTION,
]

# Per-sample (hits, generated-size) targets for the seed and each
# proposal, ordered so the float mean of each row is exactly the planted
# score (summation order matters at the last ulp).
PRECISION_ROWS = {
    "seed": ([(1, 2)] * 5, 0.50),
    "p1": ([(1, 2)] * 5, 0.50),
    "p2": ([(1, 2)] * 4 + [(3, 4)], 0.55),
    "p3": ([(3, 4), (9, 10), (0, 2), (1, 5), (2, 2)], 0.57),
}


def transcript_for_codes(codes: list[str]) -> str:
    """One canonical finding block whose code line carries exactly codes."""
    return "\n".join(
        [
            "Threat Type: Tampering",
            "Description: Transaction data handled by the system could be altered "
            "by an unauthorized party.",
            "Mitigation: Protect the relevant components and monitor for integrity "
            "violations.",
            f"NIST: {', '.join(codes)}",
        ]
    )


def codes_for_precision(hits: int, total: int, truth: list[str], rng: random.Random) -> list[str]:
    """Pick `total` generated codes of which exactly `hits` are in truth."""
    misses = total - hits
    in_truth = [c for c in truth if c in IN_TRUTH_POOL][:hits]
    assert len(in_truth) == hits, f"truth too small for {hits}/{total}"
    out_of_truth = rng.sample([d for d in DISTRACTORS if d not in truth], misses)
    return in_truth + out_of_truth


def make_opro_fixture():
    """A fully keyed mock script: scorer completions keyed by rendered
    prompt hash, optimizer proposals keyed by meta-prompt hash (computed
    by simulating the deterministic loop), so replays and resumes hit the
    same entries."""
    from threatforge import opro

    out = FIXTURES / "opro"
    out.mkdir(parents=True, exist_ok=True)
    samples = ds.generate_synthetic(5, seed=11)
    ds.write_samples(samples, out / "train.json")

    rng = random.Random(2024)
    records = []
    instructions = {
        "seed": prompts.INITIAL_INSTRUCTION,
        "p1": PROPOSALS[0],
        "p2": PROPOSALS[1],
        "p3": PROPOSALS[2],
    }
    planted_scores = {}
    for row_name, (pairs, planted) in PRECISION_ROWS.items():
        instruction = instructions[row_name]
        template = prompts.PromptTemplate(instruction=instruction)
        values = []
        for sample, (hits, total) in zip(samples, pairs):
            truth_codes = sorted(
                {c.canonical for f in sample.ground_truth for c in f.codes.codes}
            )
            gen_codes = codes_for_precision(hits, total, truth_codes, rng)
            transcript = transcript_for_codes(gen_codes)
            precision, _, _ = brute_metrics(gen_codes, truth_codes)
            values.append(precision)
            user_text = prompts.position_instruction(template, sample.description).user_text
            records.append(
                {
                    "mode": "key",
                    "key": gateway.request_key(user_text),
                    "response": transcript,
                }
            )
        mean = sum(values) / len(values)
        assert mean == planted, f"{row_name}: mean {mean!r} != planted {planted!r}"
        planted_scores[instructions[row_name]] = planted

    # Key each optimizer proposal by the meta-prompt the loop will build
    # at that point in the trajectory.
    exemplars = opro.task_exemplars_from_samples(samples)
    trajectory = opro.OproTrajectory(top_k=8)
    trajectory.append(opro.PromptCandidate(prompts.INITIAL_INSTRUCTION, 0.50))
    for proposal in PROPOSALS:
        meta = opro.build_meta_prompt(trajectory, exemplars)
        records.append(
            {"mode": "key", "key": gateway.request_key(meta), "response": proposal}
        )
        trajectory.append(opro.PromptCandidate(proposal, planted_scores[proposal]))

    with open(out / "script.jsonl", "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    print(f"opro fixture: {len(records)} keyed script records, planted best 0.57")


# --- replay fixtures ---------------------------------------------------------


def achievable_triples(max_size: int = 12) -> dict:
    """All (precision, recall, accuracy) triples reachable with set sizes
    up to max_size, as exact fractions."""
    table = {}
    for g in range(1, max_size + 1):
        for t in range(1, max_size + 1):
            for x in range(0, min(g, t) + 1):
                key = (Fraction(x, g), Fraction(x, t), Fraction(x, g + t - x))
                table.setdefault(key, (x, g, t))
    return table


_PAIR_TABLE = None


def _pair_table(table):
    """Sums of every pair of achievable triples, for residual lookup."""
    global _PAIR_TABLE
    if _PAIR_TABLE is None:
        keys = sorted(table)
        pairs = {}
        for i, a in enumerate(keys):
            for b in keys[i:]:
                s = (a[0] + b[0], a[1] + b[1], a[2] + b[2])
                if s not in pairs:
                    pairs[s] = (a, b)
        _PAIR_TABLE = pairs
    return _PAIR_TABLE


def solve_counts(
    target_p: Fraction, target_r: Fraction, target_a: Fraction, n: int, seed: int
) -> list[tuple[int, int, int]]:
    """Back-solve n (hits, generated, truth) count triples whose exact
    per-sample metric means equal the targets.

    Draws n-3 triples biased toward the target level, then solves the
    three-triple residual against the achievable pair-sum table, and
    finally orders the samples so the float means land on the target
    literals exactly.
    """
    table = achievable_triples()
    keys = sorted(table)
    pairs = _pair_table(table)
    rng = random.Random(seed)
    want = (target_p * n, target_r * n, target_a * n)
    target = (float(target_p), float(target_r), float(target_a))

    def distance(key):
        return sum((float(key[i]) - target[i]) ** 2 for i in range(3))

    near = sorted(keys, key=distance)[:40]
    perfect = (Fraction(1), Fraction(1), Fraction(1))
    zero = (Fraction(0), Fraction(0), Fraction(0))

    for _ in range(60_000):
        chosen = []
        for _ in range(n - 3):
            roll = rng.random()
            if roll < 0.5 * target[2]:
                chosen.append(perfect)
            elif roll < 0.5 * target[2] + 0.5 * (1 - target[0]):
                chosen.append(zero)
            elif roll < 0.9:
                chosen.append(near[rng.randrange(len(near))])
            else:
                chosen.append(keys[rng.randrange(len(keys))])
        residual = (
            want[0] - sum(k[0] for k in chosen),
            want[1] - sum(k[1] for k in chosen),
            want[2] - sum(k[2] for k in chosen),
        )
        if any(part < 0 or part > 3 for part in residual):
            continue
        for key in keys:
            rest = (residual[0] - key[0], residual[1] - key[1], residual[2] - key[2])
            if any(part < 0 for part in rest):
                continue
            hit = pairs.get(rest)
            if hit is None:
                continue
            counts = [table[k] for k in chosen] + [table[key], table[hit[0]], table[hit[1]]]
            ordered = _order_for_exact_floats(counts, target, rng)
            if ordered is not None:
                return ordered
    raise RuntimeError("no back-solved fixture found; widen the search")


def _order_for_exact_floats(counts, targets, rng, tries: int = 40_000):
    """Find a sample order whose left-to-right float means hit the target
    literals exactly (the last ulp depends on summation order)."""
    n = len(counts)

    def means(order):
        p = sum(x / g for x, g, _ in order) / n
        r = sum(x / t for x, _, t in order) / n
        a = sum(x / (g + t - x) for x, g, t in order) / n
        return p, r, a

    counts = list(counts)
    for _ in range(tries):
        if means(counts) == targets:
            return counts
        rng.shuffle(counts)
    return None


_CATEGORIES = ["Spoofing", "Tampering", "Information Disclosure", "Denial of Service"]


def truth_findings_records(codes: list[str], ordinal: int) -> list[dict]:
    """Split codes across a few ground-truth finding records."""
    chunks = [codes[i : i + 4] for i in range(0, len(codes), 4)] or [[]]
    records = []
    for i, chunk in enumerate(chunks):
        records.append(
            {
                "category": _CATEGORIES[(ordinal + i) % len(_CATEGORIES)],
                "threat": f"Replay scenario {ordinal + 1} narrative {i + 1} for the "
                "fixture system.",
                "mitigation": f"Apply the documented safeguards for scenario "
                f"{ordinal + 1} part {i + 1}.",
                "codes": chunk,
            }
        )
    return records


def make_replay(name: str, target_p: str, target_r: str, target_a: str, seed: int):
    out = FIXTURES / name
    out.mkdir(parents=True, exist_ok=True)
    n = 10
    counts = solve_counts(Fraction(target_p), Fraction(target_r), Fraction(target_a), n, seed)
    rng = random.Random(seed + 1)
    descriptions = [s.description for s in ds.generate_synthetic(n, seed=seed + 2)]

    truth_entries = []
    transcripts = {}
    per_sample = []
    code_pool = IN_TRUTH_POOL + DISTRACTORS
    for i, (hits, n_gen, n_truth) in enumerate(counts):
        sample_id = f"replay-{i + 1:02d}"
        pool = code_pool[:]
        rng.shuffle(pool)
        truth_codes = pool[:n_truth]
        gen_codes = truth_codes[:hits] + pool[n_truth : n_truth + (n_gen - hits)]
        truth_records = truth_findings_records(truth_codes, i)
        truth_entries.append(
            {
                "id": sample_id,
                "description": descriptions[i],
                "ground_truth": truth_records,
            }
        )
        transcripts[sample_id] = transcript_for_codes(gen_codes)

        precision, recall, accuracy = brute_metrics(gen_codes, truth_codes)
        # The package compares canonical renderings; reproduce them through
        # its serializer (input construction), score with brute cosine.
        truth_findings = [
            stride.ThreatFinding(
                category=stride.StrideCategory.from_text(r["category"]),
                subject_id="",
                description=r["threat"],
                mitigation=r["mitigation"],
                codes=CodeSet.of(*r["codes"]),
            )
            for r in truth_records
        ]
        similarity = brute_cosine(
            transcripts[sample_id], stride.render_findings(truth_findings)
        )
        per_sample.append(
            {
                "id": sample_id,
                "precision": precision,
                "recall": recall,
                "accuracy": accuracy,
                "similarity": similarity,
            }
        )

    macro = {
        metric: sum(s[metric] for s in per_sample) / len(per_sample)
        for metric in ("precision", "recall", "accuracy", "similarity")
    }
    assert macro["precision"] == float(Fraction(target_p)), macro
    assert macro["recall"] == float(Fraction(target_r)), macro
    assert macro["accuracy"] == float(Fraction(target_a)), macro

    (out / "truth.json").write_text(
        json.dumps(truth_entries, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    (out / "transcripts.json").write_text(
        json.dumps(transcripts, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    (out / "expected.json").write_text(
        json.dumps({"macro": macro, "per_sample": per_sample}, indent=2) + "\n",
        encoding="utf-8",
    )
    print(f"{name}: macro p={macro['precision']:.4f} r={macro['recall']:.4f} "
          f"a={macro['accuracy']:.4f} sim={macro['similarity']:.4f}")


def main():
    make_synthetic_10()
    make_opro_fixture()
    make_replay("replay", "73/100", "73/100", "69/100", seed=101)
    make_replay("replay_initial", "35/100", "27/100", "17/100", seed=202)


if __name__ == "__main__":
    main()
