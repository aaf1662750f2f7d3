"""Prompt construction: the default instruction, stepwise-reasoning and
two-example variants, and instruction positioning.

Rendering is pure and byte-stable: separators and exemplar framing are
fixed constants so the same template and question always produce the same
prompt bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .errors import EmptyQuestionError, ExemplarArityError, SchemaError

INITIAL_INSTRUCTION = (
    "The STRIDE model is a systematic approach to identifying and analyzing "
    "potential security threats to a system. It helps in reasoning about and "
    "discovering threats by leveraging a comprehensive model of the target "
    "system, which includes detailed representations of processes, data "
    "stores, data flows, and trust boundaries. In this task, you will be "
    "provided with a description of a data flow diagram (DFD) for a specific "
    "application. Based on the provided DFD description, your objective is to "
    "identify all relevant security threats. For each identified threat, "
    "please specify the threat type, a detailed description of the threat, "
    "recommended mitigation strategies, and the corresponding mitigation code "
    "according to NIST SP 800-53 controls."
)

OPTIMIZED_INSTRUCTION = (
    "Generate a comprehensive list of identified threats, effective "
    "mitigation strategies, and corresponding NIST SP 800-53 control codes "
    "for all interactions, processes, and entities depicted in the system "
    "diagrams."
)

STEPWISE_DIRECTIVE = (
    "Reason step by step: list elements, then per-element STRIDE categories, "
    "then threats, mitigations, and NIST SP 800-53 codes."
)

EXEMPLAR_HEADER = "Example:"
ANSWER_HEADER = "Answer:"
SEPARATOR = "\n\n"

ZERO_SHOT = "zero_shot"
FEW_SHOT = "few_shot"


class InstructionPosition(Enum):
    Q_BEGIN = "q_begin"
    Q_END = "q_end"


@dataclass(frozen=True)
class PromptTemplate:
    instruction: str
    position: InstructionPosition = InstructionPosition.Q_BEGIN
    exemplars: tuple[tuple[str, str], ...] = ()
    reasoning_directive: str | None = None

    def __post_init__(self):
        if not self.instruction.strip():
            raise ValueError("instruction must be non-empty")
        if len(self.exemplars) not in (0, 2):
            raise ExemplarArityError(
                f"templates carry zero or two exemplars, got {len(self.exemplars)}"
            )


@dataclass(frozen=True)
class RenderedPrompt:
    system_text: str
    user_text: str


def build_initial_prompt() -> PromptTemplate:
    """The default zero-shot instruction, no exemplars, no directive."""
    return PromptTemplate(instruction=INITIAL_INSTRUCTION)


def build_optimized_prompt() -> PromptTemplate:
    return PromptTemplate(instruction=OPTIMIZED_INSTRUCTION)


def build_cot_prompt(mode: str, exemplars: tuple[tuple[str, str], ...] = ()) -> PromptTemplate:
    """Stepwise-reasoning template, zero-shot or with exactly two QA pairs."""
    if mode == ZERO_SHOT:
        if exemplars:
            raise ExemplarArityError("zero_shot takes no exemplars")
        return PromptTemplate(
            instruction=INITIAL_INSTRUCTION,
            reasoning_directive=STEPWISE_DIRECTIVE,
        )
    if mode == FEW_SHOT:
        if len(exemplars) != 2:
            raise ExemplarArityError(f"few_shot needs exactly 2 exemplars, got {len(exemplars)}")
        return PromptTemplate(
            instruction=INITIAL_INSTRUCTION,
            exemplars=tuple(exemplars),
            reasoning_directive=STEPWISE_DIRECTIVE,
        )
    raise ValueError(f"unknown mode {mode!r}")


def _exemplar_block(question: str, answer: str) -> str:
    return f"{EXEMPLAR_HEADER}\n{question}\n{ANSWER_HEADER}\n{answer}"


def render_user_text(template: PromptTemplate, question: str) -> str:
    """Assemble the user text; empty segments are dropped.

    With Q_BEGIN the instruction comes first and the question last; with
    Q_END the question comes first. Segments join with one blank line.
    """
    instruction_parts = [template.instruction]
    if template.reasoning_directive:
        instruction_parts.append(template.reasoning_directive)
    exemplar_parts = [_exemplar_block(q, a) for q, a in template.exemplars]
    if template.position is InstructionPosition.Q_BEGIN:
        parts = [*instruction_parts, *exemplar_parts, question]
    else:
        parts = [question, *instruction_parts, *exemplar_parts]
    return SEPARATOR.join(p for p in parts if p)


def position_instruction(template: PromptTemplate, question: str) -> RenderedPrompt:
    """Render a template against a question; the question must be non-empty."""
    if not question or not question.strip():
        raise EmptyQuestionError("question must be non-empty")
    return RenderedPrompt(system_text="", user_text=render_user_text(template, question))


def load_default_exemplars() -> tuple[tuple[str, str], tuple[str, str]]:
    """The two bundled QA pairs used by the few-shot variant."""
    raw = resources.files("threatforge.data").joinpath("exemplars.json").read_text("utf-8")
    pairs = json.loads(raw)
    if len(pairs) != 2:
        raise SchemaError("exemplars.json must hold exactly two QA pairs")
    return tuple((p["question"], p["answer"]) for p in pairs)  # type: ignore[return-value]


# --- template files --------------------------------------------------------

QUESTION_PLACEHOLDER = "{{question}}"
EXEMPLARS_PLACEHOLDER = "{{exemplars}}"


def render_template_file(text: str, question: str, exemplars: tuple[tuple[str, str], ...] = ()) -> str:
    """Render a plain-text template carrying {{question}} / {{exemplars}}.

    Placeholders left out of the file simply render nothing; the exemplar
    placeholder expands to the same framed blocks the builders use.
    """
    blocks = SEPARATOR.join(_exemplar_block(q, a) for q, a in exemplars)
    rendered = text.replace(EXEMPLARS_PLACEHOLDER, blocks)
    rendered = rendered.replace(QUESTION_PLACEHOLDER, question)
    return "\n".join(line.rstrip() for line in rendered.strip().splitlines())


BUILTIN_TEMPLATES = ("initial", "cot_zero", "cot_few", "optimized")


def build_named_template(name: str) -> PromptTemplate:
    if name == "initial":
        return build_initial_prompt()
    if name == "optimized":
        return build_optimized_prompt()
    if name == "cot_zero":
        return build_cot_prompt(ZERO_SHOT)
    if name == "cot_few":
        return build_cot_prompt(FEW_SHOT, load_default_exemplars())
    raise ValueError(f"unknown template {name!r}; expected one of {BUILTIN_TEMPLATES}")
