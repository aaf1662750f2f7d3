"""Benchmark samples: schema, deterministic splitting, synthetic
generation through the rule oracle, fine-tune export, and the low-rank
adapter arithmetic used to sanity-check exported training manifests.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dfd
from .errors import (
    DuplicateIdError,
    MissingDimsError,
    SchemaError,
    ShapeMismatchError,
    TooFewSamplesError,
)
from .nist import CodeSet, normalize_code
from .prompts import OPTIMIZED_INSTRUCTION
from .stride import StrideCategory, ThreatFinding, enumerate_threats, render_findings


@dataclass(frozen=True)
class BenchmarkSample:
    id: str
    description: str
    ground_truth: tuple[ThreatFinding, ...]
    dfd: str | None = None

    def __post_init__(self):
        if not self.id:
            raise SchemaError("sample id must be non-empty")
        if not self.description.strip():
            raise SchemaError("sample description must be non-empty", self.id)
        if not self.ground_truth:
            raise SchemaError("ground_truth must be non-empty", self.id)


@dataclass(frozen=True)
class SplitSpec:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int


# --- sample files ----------------------------------------------------------


def _finding_from_record(record: dict, location: str) -> ThreatFinding:
    for key in ("category", "threat", "mitigation", "codes"):
        if key not in record:
            raise SchemaError(f"missing field {key!r}", location)
    try:
        category = StrideCategory.from_text(str(record["category"]))
    except SchemaError as exc:
        raise SchemaError(str(exc), location) from exc
    codes = record["codes"]
    if not isinstance(codes, list):
        raise SchemaError("codes must be a list", location)
    try:
        code_set = CodeSet(normalize_code(str(c)) for c in codes)
    except Exception as exc:
        raise SchemaError(f"bad control code: {exc}", location) from exc
    return ThreatFinding(
        category=category,
        subject_id=str(record.get("subject", "")),
        description=str(record["threat"]),
        mitigation=str(record["mitigation"]),
        codes=code_set,
    )


def _finding_to_record(finding: ThreatFinding) -> dict:
    record = {
        "category": finding.category.label,
        "threat": finding.description,
        "mitigation": finding.mitigation,
        "codes": finding.codes.canonical_tokens(),
    }
    if finding.subject_id:
        record["subject"] = finding.subject_id
    return record


def load_samples(path) -> list[BenchmarkSample]:
    """Load and validate a benchmark dataset file (JSON array)."""
    source = str(path)
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}", source) from exc
    if not isinstance(raw, list):
        raise SchemaError("dataset must be a JSON array", source)
    samples: list[BenchmarkSample] = []
    seen: set[str] = set()
    for index, entry in enumerate(raw):
        location = f"{source}[{index}]"
        if not isinstance(entry, dict):
            raise SchemaError("sample must be an object", location)
        for key in ("id", "description", "ground_truth"):
            if key not in entry:
                raise SchemaError(f"missing field {key!r}", location)
        sample_id = str(entry["id"])
        if sample_id in seen:
            raise DuplicateIdError(sample_id)
        seen.add(sample_id)
        truth_raw = entry["ground_truth"]
        if not isinstance(truth_raw, list) or not truth_raw:
            raise SchemaError("ground_truth must be a non-empty list", location)
        findings = tuple(
            _finding_from_record(r, f"{location}.ground_truth[{i}]")
            for i, r in enumerate(truth_raw)
        )
        dfd_source = entry.get("dfd")
        if dfd_source is not None:
            graph = dfd.parse_dfd(dfd_source)
            rendered = dfd.render_description(graph).text
            if rendered != entry["description"]:
                raise SchemaError("description does not match its rendered dfd", location)
        samples.append(
            BenchmarkSample(
                id=sample_id,
                description=str(entry["description"]),
                ground_truth=findings,
                dfd=dfd_source,
            )
        )
    return samples


def samples_to_json(samples: Sequence[BenchmarkSample]) -> str:
    records = []
    for s in samples:
        record: dict = {"id": s.id, "description": s.description}
        if s.dfd is not None:
            record["dfd"] = s.dfd
        record["ground_truth"] = [_finding_to_record(f) for f in s.ground_truth]
        records.append(record)
    return json.dumps(records, indent=2, ensure_ascii=False) + "\n"


def write_samples(samples: Sequence[BenchmarkSample], path):
    Path(path).write_text(samples_to_json(samples), encoding="utf-8")


# --- splitting ---------------------------------------------------------------


def split_dataset(samples: Sequence[BenchmarkSample], seed: int) -> SplitSpec:
    """Deterministic shuffle then 4:1 split, rounding toward train.

    A 50-sample dataset always lands at 40 train / 10 test.
    """
    if len(samples) < 2:
        raise TooFewSamplesError(f"need at least 2 samples, got {len(samples)}")
    ids = [s.id for s in samples]
    rng = random.Random(seed)
    rng.shuffle(ids)
    n_test = len(ids) // 5
    return SplitSpec(
        train_ids=tuple(ids[: len(ids) - n_test]),
        test_ids=tuple(ids[len(ids) - n_test :]),
        seed=seed,
    )


def save_split(split: SplitSpec, path):
    payload = {
        "seed": split.seed,
        "train_ids": list(split.train_ids),
        "test_ids": list(split.test_ids),
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_split(path) -> SplitSpec:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return SplitSpec(
        train_ids=tuple(payload["train_ids"]),
        test_ids=tuple(payload["test_ids"]),
        seed=int(payload["seed"]),
    )


def select_samples(samples: Sequence[BenchmarkSample], ids: Sequence[str]) -> list[BenchmarkSample]:
    by_id = {s.id: s for s in samples}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise SchemaError(f"split references unknown sample ids: {', '.join(missing)}")
    return [by_id[i] for i in ids]


# --- synthesis ---------------------------------------------------------------


def synthesize_sample(graph: dfd.DfdGraph, sample_id: str) -> BenchmarkSample:
    """Build one sample whose ground truth is the rule-oracle enumeration."""
    description = dfd.render_description(graph)
    findings = enumerate_threats(graph)
    return BenchmarkSample(
        id=sample_id,
        description=description.text,
        ground_truth=tuple(findings),
        dfd=dfd.serialize(graph),
    )


_EXTERNAL_POOL = (
    "Bank Customer", "ATM Operator", "Third Party Financial Service", "Other Bank",
    "Mobile App User", "Branch Teller", "Payment Network", "Regulatory Auditor",
)
_PROCESS_POOL = (
    "Open Account", "Customer Banking Account Login", "Manage Bank Customer Information",
    "Account Information Update", "Transaction Processing", "Fraud Screening",
    "Loan Approval", "Balance Inquiry Service", "Payment Authorization",
    "Statement Generation",
)
_STORE_POOL = (
    "Customer Account DB", "Transaction Record Store", "Audit Log Store",
    "Credential Vault", "Loan Document Archive",
)
_FLOW_POOL = (
    "Transaction Request", "Confirmation", "Cash Out and Receipts", "Account Request",
    "Login Credentials", "Balance Response", "Audit Event", "Statement Delivery",
    "Fraud Alert", "Payment Instruction", "Account Update", "Receipt Notice",
)
_BOUNDARY_POOL = ("Internet", "Bank Internal Network", "Partner Gateway", "Branch Network")
_TITLE_POOL = (
    "Retail Banking", "ATM Services", "Mobile Banking", "Loan Origination",
    "Payments Clearing", "Account Servicing", "Card Management", "Branch Operations",
)


def _random_graph(rng: random.Random, ordinal: int) -> dfd.DfdGraph:
    title = f"{rng.choice(_TITLE_POOL)} System {ordinal}"
    externals = rng.sample(_EXTERNAL_POOL, rng.randint(1, 2))
    processes = rng.sample(_PROCESS_POOL, rng.randint(1, 3))
    stores = rng.sample(_STORE_POOL, rng.randint(1, 2))

    elements: list[dfd.DfdElement] = []
    for name in externals:
        elements.append(dfd.DfdElement(name, name, dfd.ElementKind.EXTERNAL_ENTITY))
    for name in processes:
        attrs = []
        if rng.random() < 0.5:
            attrs.append(("running_as", "network_service"))
        if rng.random() < 0.5:
            attrs.append(("isolation", "app_container"))
        if rng.random() < 0.3:
            attrs.append(("accepts_input_from", "kernel_system_local_admin"))
        elements.append(
            dfd.DfdElement(name, name, dfd.ElementKind.PROCESS, tuple(attrs))
        )
    for name in stores:
        elements.append(dfd.DfdElement(name, name, dfd.ElementKind.DATA_STORE))

    boundaries: list[dfd.TrustBoundary] = []
    if rng.random() < 0.8:
        bname = rng.choice(_BOUNDARY_POOL)
        boundaries.append(dfd.TrustBoundary(bname, bname, tuple(externals)))

    flow_names = rng.sample(_FLOW_POOL, min(len(_FLOW_POOL), rng.randint(2, 4)))
    flows: list[dfd.DataFlow] = []
    for i, fname in enumerate(flow_names):
        if i % 2 == 0:
            source = rng.choice(externals)
            sink = rng.choice(processes)
        else:
            source = rng.choice(processes)
            sink = rng.choice(stores)
        crosses = tuple(
            b.id for b in boundaries if source in b.contains or sink in b.contains
        )
        flows.append(dfd.DataFlow(fname, fname, source, sink, crosses))

    return dfd.DfdGraph(
        title=title,
        elements=tuple(elements),
        flows=tuple(flows),
        boundaries=tuple(boundaries),
    )


def generate_synthetic(count: int, seed: int) -> list[BenchmarkSample]:
    """Deterministic banking-flavored samples; same (count, seed) gives
    byte-identical datasets."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = random.Random(seed)
    return [
        synthesize_sample(_random_graph(rng, i + 1), f"synth-{i + 1:03d}")
        for i in range(count)
    ]


# --- low-rank adapter math ---------------------------------------------------


@dataclass(frozen=True)
class LoraSpec:
    r: int = 32
    alpha: float = 64.0
    dropout: float = 0.1
    target_modules: tuple[str, ...] = ("q_proj", "k_proj", "v_proj", "o_proj")
    d: int | None = None
    k: int | None = None

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("rank must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.d is not None and self.k is not None and self.r > min(self.d, self.k):
            raise ValueError("rank exceeds min(d, k)")

    def param_count(self) -> int:
        if self.d is None or self.k is None:
            raise MissingDimsError("d and k must be supplied to count parameters")
        return lora_param_count(self.d, self.k, self.r)


@dataclass(frozen=True)
class TrainManifest:
    lora: LoraSpec = field(default_factory=LoraSpec)
    batch_size: int = 4
    grad_accum: int = 4
    optimizer_name: str = "paged_adamw_32bit"
    learning_rate: float = 1e-4
    epochs: int = 30
    eval_interval_fraction: float = 0.2


def lora_param_count(d: int, k: int, r: int) -> int:
    """Trainable parameters of one adapted matrix: d*r + r*k."""
    if d < 0 or k < 0 or r < 0:
        raise ValueError("dimensions must be non-negative")
    return d * r + r * k


def apply_lora_update(W, A, B, alpha: float):
    """W + alpha * (A @ B); pure, inputs untouched."""
    W = np.asarray(W, dtype=float)
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if W.ndim != 2 or A.ndim != 2 or B.ndim != 2:
        raise ShapeMismatchError("W, A, and B must be matrices")
    d, k = W.shape
    if A.shape[0] != d or B.shape[1] != k or A.shape[1] != B.shape[0]:
        raise ShapeMismatchError(
            f"shapes do not conform: W{W.shape}, A{A.shape}, B{B.shape}"
        )
    return W + alpha * (A @ B)


# --- fine-tune export --------------------------------------------------------

ASSISTANT_FORMAT = "threat-blocks-v1"


def manifest_to_dict(manifest: TrainManifest, split: SplitSpec | None = None) -> dict:
    payload = {
        "lora": {
            "r": manifest.lora.r,
            "lora_alpha": manifest.lora.alpha,
            "lora_dropout": manifest.lora.dropout,
            "target_modules": list(manifest.lora.target_modules),
        },
        "training": {
            "batch_size": manifest.batch_size,
            "gradient_accumulation_steps": manifest.grad_accum,
            "optimizer": manifest.optimizer_name,
            "learning_rate": manifest.learning_rate,
            "epochs": manifest.epochs,
            "eval_interval_fraction": manifest.eval_interval_fraction,
        },
        "data": {
            "system_prompt": "optimized",
            "assistant_format": ASSISTANT_FORMAT,
        },
    }
    if split is not None:
        payload["data"]["train_records"] = len(split.train_ids)
        payload["data"]["test_records"] = len(split.test_ids)
        payload["data"]["split_seed"] = split.seed
    return payload


def _chat_record(sample: BenchmarkSample) -> str:
    record = {
        "messages": [
            {"role": "system", "content": OPTIMIZED_INSTRUCTION},
            {"role": "user", "content": sample.description},
            {"role": "assistant", "content": render_findings(sample.ground_truth)},
        ]
    }
    return json.dumps(record, ensure_ascii=False)


def export_finetune(
    samples: Sequence[BenchmarkSample],
    split: SplitSpec,
    manifest: TrainManifest,
    out_dir,
) -> list[Path]:
    """Write train.jsonl, test.jsonl, and manifest.json into out_dir.

    One chat record per sample in split order; output bytes depend only
    on the inputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = select_samples(samples, split.train_ids)
    test = select_samples(samples, split.test_ids)
    paths = []
    for name, subset in (("train.jsonl", train), ("test.jsonl", test)):
        path = out / name
        body = "\n".join(_chat_record(s) for s in subset)
        path.write_text(body + ("\n" if body else ""), encoding="utf-8")
        paths.append(path)
    manifest_path = out / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest_to_dict(manifest, split), indent=2) + "\n", encoding="utf-8"
    )
    paths.append(manifest_path)
    return paths
