"""Instruction optimization: an optimizer backend proposes new
instructions conditioned on the scored trajectory so far, and a scorer
backend evaluates each proposal on training samples.

The meta-prompt lists the current top candidates in ascending score order
(best last), then task exemplars, then the request for one new
instruction. The loop stops at the step budget or after ``patience``
proposals without improving the best score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .dataset import BenchmarkSample
from .errors import BackendError, EmptyInputError, OptimizationAborted, SchemaError
from .evaluation import set_metrics
from .extraction import parse_findings
from .gateway import BackendSpec, ChatRequest, send_chat
from .prompts import InstructionPosition, PromptTemplate, position_instruction
from .stride import findings_code_union, render_findings

METRICS = ("accuracy", "precision", "recall")


@dataclass(frozen=True)
class PromptCandidate:
    instruction: str
    score: float | None = None

    @property
    def scored(self) -> bool:
        return self.score is not None


@dataclass(frozen=True)
class DecodePolicy:
    max_tokens: int
    temperature: float
    num_decodes: int = 1
    batch_size: int = 1

    def __post_init__(self):
        if self.max_tokens <= 0 or self.num_decodes < 1 or self.batch_size < 1:
            raise ValueError("decode policy values must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


SCORER_POLICY = DecodePolicy(max_tokens=1024, temperature=0.0)
OPTIMIZER_POLICY = DecodePolicy(max_tokens=512, temperature=1.0)


@dataclass(frozen=True)
class OproConfig:
    scorer: BackendSpec
    optimizer: BackendSpec
    metric: str = "precision"
    max_steps: int = 20
    patience: int = 5
    top_k: int = 8
    scorer_policy: DecodePolicy = SCORER_POLICY
    optimizer_policy: DecodePolicy = OPTIMIZER_POLICY
    scorer_model: str = "gpt-3.5-turbo"
    optimizer_model: str = "gpt-3.5-turbo"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.max_steps < 1 or self.patience < 1 or self.top_k < 1:
            raise ValueError("max_steps, patience, and top_k must be positive")


class OproTrajectory:
    """Append-only history of scored candidates."""

    def __init__(self, top_k: int = 8):
        if top_k < 1:
            raise ValueError("top_k must be positive")
        self.top_k = top_k
        self._history: list[PromptCandidate] = []

    @property
    def history(self) -> tuple[PromptCandidate, ...]:
        return tuple(self._history)

    def append(self, candidate: PromptCandidate):
        if not candidate.scored:
            raise ValueError("only scored candidates join the trajectory")
        self._history.append(candidate)

    @property
    def best(self) -> PromptCandidate | None:
        best = None
        for candidate in self._history:
            if best is None or candidate.score > best.score:
                best = candidate
        return best

    def top_candidates(self) -> list[PromptCandidate]:
        """Up to top_k candidates, ascending by score; insertion order
        breaks ties, so the strongest candidate is always last."""
        ranked = sorted(
            enumerate(self._history),
            key=lambda pair: (pair[1].score, pair[0]),
        )
        return [c for _, c in ranked[-self.top_k:]]


META_PROMPT_HEADER = (
    "Your task is to write one new instruction for a security threat "
    "modeling assistant. Below are previous instructions with their "
    "scores; the score ranges from 0.00 to 1.00 and higher is better."
)

META_PROMPT_REQUEST = (
    "Write one new instruction that is different from the instructions "
    "above and achieves a higher score. Reply with the instruction text "
    "only."
)


def build_meta_prompt(
    trajectory: OproTrajectory,
    task_exemplars: Sequence[tuple[str, str]] = (),
) -> str:
    """Deterministic meta-prompt bytes for a given trajectory and exemplars."""
    parts = [META_PROMPT_HEADER]
    for candidate in trajectory.top_candidates():
        parts.append(f"Instruction: {candidate.instruction}\nScore: {candidate.score:.2f}")
    if task_exemplars:
        parts.append("Below are examples of the task.")
        for question, answer in task_exemplars:
            parts.append(f"Question:\n{question}\nAnswer:\n{answer}")
    parts.append(META_PROMPT_REQUEST)
    return "\n\n".join(parts)


def score_candidate(
    instruction: str,
    samples: Sequence[BenchmarkSample],
    scorer: BackendSpec,
    metric: str = "precision",
    policy: DecodePolicy = SCORER_POLICY,
    model_id: str = "gpt-3.5-turbo",
) -> float:
    """Mean metric of an instruction over the samples.

    Each sample is rendered Q_begin, completed by the scorer backend, and
    parsed; a completion with no parseable findings counts as 0 for that
    sample rather than failing the run.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    if not samples:
        raise EmptyInputError("cannot score on zero samples")
    template = PromptTemplate(instruction=instruction, position=InstructionPosition.Q_BEGIN)
    values: list[float] = []
    for sample in samples:
        rendered = position_instruction(template, sample.description)
        request = ChatRequest(
            user_text=rendered.user_text,
            system_text=rendered.system_text,
            max_tokens=policy.max_tokens,
            temperature=policy.temperature,
            model_id=model_id,
        )
        completion = send_chat(request, scorer)
        parsed = parse_findings(completion)
        if not parsed.findings:
            values.append(0.0)
            continue
        metrics = set_metrics(
            findings_code_union(parsed.findings),
            findings_code_union(sample.ground_truth),
        )
        values.append(getattr(metrics, metric))
    return sum(values) / len(values)


def task_exemplars_from_samples(samples: Sequence[BenchmarkSample], limit: int = 2) -> list[tuple[str, str]]:
    return [(s.description, render_findings(s.ground_truth)) for s in samples[:limit]]


def optimize(
    seed_instruction: str,
    samples: Sequence[BenchmarkSample],
    config: OproConfig,
    trajectory: OproTrajectory | None = None,
) -> OproTrajectory:
    """Run the propose-score loop from a seed instruction.

    The best-so-far score is non-decreasing by construction and the
    history never exceeds max_steps + 1 entries. A backend failure
    aborts with the partial trajectory attached to the error. Passing a
    pre-populated trajectory resumes a previous run; its proposals count
    against max_steps.
    """
    if trajectory is None:
        trajectory = OproTrajectory(top_k=config.top_k)
    exemplars = task_exemplars_from_samples(samples)
    try:
        if not trajectory.history:
            seed_score = score_candidate(
                seed_instruction, samples, config.scorer, config.metric,
                config.scorer_policy, config.scorer_model,
            )
            trajectory.append(PromptCandidate(seed_instruction, seed_score))
        best = trajectory.best.score
        stale = 0
        steps_done = len(trajectory.history) - 1
        for _ in range(steps_done, config.max_steps):
            meta_prompt = build_meta_prompt(trajectory, exemplars)
            request = ChatRequest(
                user_text=meta_prompt,
                max_tokens=config.optimizer_policy.max_tokens,
                temperature=config.optimizer_policy.temperature,
                model_id=config.optimizer_model,
            )
            proposal = send_chat(request, config.optimizer).strip()
            score = score_candidate(
                proposal, samples, config.scorer, config.metric,
                config.scorer_policy, config.scorer_model,
            )
            trajectory.append(PromptCandidate(proposal, score))
            if score > best:
                best = score
                stale = 0
            else:
                stale += 1
            if stale >= config.patience:
                break
    except BackendError as exc:
        raise OptimizationAborted(exc, trajectory) from exc
    return trajectory


# --- persistence -----------------------------------------------------------

TRAJECTORY_FORMAT = "opro-trajectory-v1"


def save_trajectory(trajectory: OproTrajectory, path, metric: str, scored_on: str = "train"):
    """Write the trajectory as JSONL: a header record, then one record
    per step. No timestamps, so identical runs write identical bytes."""
    lines = [
        json.dumps(
            {
                "format": TRAJECTORY_FORMAT,
                "metric": metric,
                "scored_on": scored_on,
                "top_k": trajectory.top_k,
            }
        )
    ]
    for step, candidate in enumerate(trajectory.history):
        lines.append(
            json.dumps(
                {"step": step, "instruction": candidate.instruction, "score": candidate.score}
            )
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_trajectory(path) -> tuple[dict, OproTrajectory]:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise SchemaError("empty trajectory file", str(path))
    header = json.loads(lines[0])
    if header.get("format") != TRAJECTORY_FORMAT:
        raise SchemaError(f"not a {TRAJECTORY_FORMAT} file", str(path))
    trajectory = OproTrajectory(top_k=int(header.get("top_k", 8)))
    for line in lines[1:]:
        record = json.loads(line)
        trajectory.append(PromptCandidate(record["instruction"], float(record["score"])))
    return header, trajectory
