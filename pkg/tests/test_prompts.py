"""Prompt templates, positioning, and the bundled exemplars."""

import pytest

from threatforge import prompts
from threatforge.errors import EmptyQuestionError, ExemplarArityError


def test_initial_prompt_verbatim_anchor():
    template = prompts.build_initial_prompt()
    assert "STRIDE model is a systematic approach" in template.instruction
    assert template.exemplars == ()
    assert template.reasoning_directive is None


def test_initial_prompt_requests_the_output_contract():
    text = prompts.build_initial_prompt().instruction
    assert "threat type" in text
    assert "NIST SP 800-53" in text


def test_optimized_prompt_verbatim():
    assert prompts.OPTIMIZED_INSTRUCTION == (
        "Generate a comprehensive list of identified threats, effective "
        "mitigation strategies, and corresponding NIST SP 800-53 control "
        "codes for all interactions, processes, and entities depicted in "
        "the system diagrams."
    )


def test_render_with_empty_question_is_instruction_only():
    template = prompts.build_initial_prompt()
    assert prompts.render_user_text(template, "") == template.instruction


def test_cot_zero_shot():
    template = prompts.build_cot_prompt(prompts.ZERO_SHOT)
    assert template.reasoning_directive == prompts.STEPWISE_DIRECTIVE
    assert template.exemplars == ()


def test_cot_zero_shot_rejects_exemplars():
    with pytest.raises(ExemplarArityError):
        prompts.build_cot_prompt(prompts.ZERO_SHOT, (("q", "a"),))


def test_cot_few_shot_embeds_both_answers_in_order():
    pairs = (("first question", "FIRST ANSWER"), ("second question", "SECOND ANSWER"))
    template = prompts.build_cot_prompt(prompts.FEW_SHOT, pairs)
    rendered = prompts.position_instruction(template, "the real question")
    first = rendered.user_text.index("FIRST ANSWER")
    second = rendered.user_text.index("SECOND ANSWER")
    assert first < second < rendered.user_text.index("the real question")


@pytest.mark.parametrize("pairs", [(), (("q", "a"),), (("q", "a"),) * 3])
def test_cot_few_shot_arity(pairs):
    with pytest.raises(ExemplarArityError):
        prompts.build_cot_prompt(prompts.FEW_SHOT, pairs)


def test_q_begin_starts_with_instruction():
    template = prompts.build_initial_prompt()
    rendered = prompts.position_instruction(template, "Q")
    assert rendered.user_text.startswith(template.instruction)
    assert rendered.user_text.endswith("Q")


def test_q_end_starts_with_question():
    template = prompts.PromptTemplate(
        instruction="Do the thing.", position=prompts.InstructionPosition.Q_END
    )
    rendered = prompts.position_instruction(template, "Q")
    assert rendered.user_text.startswith("Q")


def test_separator_is_one_blank_line():
    template = prompts.PromptTemplate(instruction="Inst.")
    rendered = prompts.position_instruction(template, "Quest.")
    assert rendered.user_text == "Inst.\n\nQuest."


def test_empty_question_rejected():
    template = prompts.build_initial_prompt()
    with pytest.raises(EmptyQuestionError):
        prompts.position_instruction(template, "   ")


def test_rendering_is_byte_stable():
    template = prompts.build_cot_prompt(prompts.FEW_SHOT, prompts.load_default_exemplars())
    a = prompts.position_instruction(template, "Q").user_text
    b = prompts.position_instruction(template, "Q").user_text
    assert a == b


def test_default_exemplars_are_two_qa_pairs():
    pairs = prompts.load_default_exemplars()
    assert len(pairs) == 2
    for question, answer in pairs:
        assert question.strip()
        assert "Threat Type:" in answer


def test_template_file_rendering():
    text = "Find threats.\n\n{{exemplars}}\n\n{{question}}"
    rendered = prompts.render_template_file(text, "THE QUESTION", (("q1", "a1"), ("q2", "a2")))
    assert rendered.startswith("Find threats.")
    assert "THE QUESTION" in rendered
    assert "Example:\nq1\nAnswer:\na1" in rendered


def test_build_named_template_names():
    for name in prompts.BUILTIN_TEMPLATES:
        template = prompts.build_named_template(name)
        assert template.instruction
    with pytest.raises(ValueError):
        prompts.build_named_template("mystery")
