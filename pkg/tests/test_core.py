import math

import pytest
from hypothesis import given, strategies as st

from physrefine.core import (
    AnswerKind,
    ErrorKind,
    VerifierReport,
    classify,
    classify_scores,
    extract_answer_line,
    flag_from_wire,
    flag_to_wire,
    parse_answer_value,
    render_solution,
    score_comp,
    score_concept,
    segment_solution,
    solutions_textually_equal,
)


def oracle_score(n, total):
    """Independent transcription of the three-branch positional score."""
    if n is None:
        return 1.0
    if 1 <= n < total:
        return n / total
    if n == total:
        return n / (total + 1)
    raise ValueError(n)


def report(concept=None, comp=None, total=5, objective=True, variables=True):
    return VerifierReport(
        objective_aligned=objective,
        variables_correct=variables,
        total_steps=total,
        concept_first_error_step=concept,
        comp_first_error_step=comp,
    )


class TestScores:
    def test_error_at_step_two_of_five(self):
        assert score_concept(report(concept=2, total=5)) == pytest.approx(0.4, abs=1e-12)

    def test_no_error_is_exactly_one(self):
        assert score_concept(report(total=7)) == 1.0

    def test_error_at_last_step(self):
        assert score_concept(report(concept=5, total=5)) == pytest.approx(5 / 6, abs=1e-12)

    def test_comp_examples(self):
        assert score_comp(report(comp=1, total=4)) == pytest.approx(0.25, abs=1e-12)
        assert score_comp(report(total=1)) == 1.0
        assert score_comp(report(comp=3, total=3)) == pytest.approx(0.75, abs=1e-12)

    def test_exhaustive_against_oracle(self):
        for total in range(1, 51):
            for n in [None, *range(1, total + 1)]:
                expected = oracle_score(n, total)
                got = score_concept(report(concept=n, total=total))
                assert abs(got - expected) <= 1e-12, (n, total)
                got_comp = score_comp(report(comp=n, total=total))
                assert abs(got_comp - expected) <= 1e-12, (n, total)

    def test_range_is_zero_one_half_open(self):
        values = [
            score_concept(report(concept=n, total=total))
            for total in range(1, 30)
            for n in [None, *range(1, total + 1)]
        ]
        assert all(0 < v <= 1 for v in values)

    @given(st.integers(min_value=3, max_value=60), st.data())
    def test_monotone_in_error_position(self, total, data):
        n1 = data.draw(st.integers(min_value=1, max_value=total - 2))
        n2 = data.draw(st.integers(min_value=n1 + 1, max_value=total - 1))
        assert score_concept(report(concept=n1, total=total)) < score_concept(
            report(concept=n2, total=total)
        )

    @given(st.integers(min_value=1, max_value=200))
    def test_last_step_error_never_reaches_one(self, total):
        assert score_concept(report(concept=total, total=total)) < 1.0

    def test_out_of_range_step_rejected(self):
        with pytest.raises(ValueError):
            report(concept=6, total=5)
        with pytest.raises(ValueError):
            report(comp=0, total=5)


def oracle_classify(objective, variables, concept, comp, epsilon):
    """Independent transcription of the routing if/elif chain."""
    if objective == -1 or variables == -1:
        return ErrorKind.MISCOMPREHENSION
    if concept < 1 - epsilon:
        return ErrorKind.WRONG_CONCEPT
    if comp < 1 - epsilon:
        return ErrorKind.COMPUTATIONAL
    return ErrorKind.NONE


class TestClassify:
    def test_misaligned_objective_wins_over_clean_scores(self):
        kind = classify_scores(False, True, 1.0, 1.0, epsilon=0.05)
        assert kind is ErrorKind.MISCOMPREHENSION

    def test_clean_solution(self):
        assert classify_scores(True, True, 1.0, 1.0, epsilon=0.05) is ErrorKind.NONE

    def test_decision_table_against_oracle(self):
        epsilon = 0.05
        grid = [0.5, 0.94, 0.96, 1.0]
        for objective in (True, False):
            for variables in (True, False):
                for concept in grid:
                    for comp in grid:
                        expected = oracle_classify(
                            flag_to_wire(objective), flag_to_wire(variables), concept, comp, epsilon
                        )
                        got = classify_scores(objective, variables, concept, comp, epsilon)
                        assert got is expected, (objective, variables, concept, comp)

    @given(
        st.floats(min_value=0, max_value=1),
        st.floats(min_value=0, max_value=1),
        st.booleans(),
    )
    def test_miscomprehension_ignores_scores(self, concept, comp, objective):
        # The variables flag is down; no score can change the route.
        kind = classify_scores(objective, False, concept, comp)
        assert kind is ErrorKind.MISCOMPREHENSION

    def test_classify_from_report(self):
        assert classify(report(concept=3, total=5)) is ErrorKind.WRONG_CONCEPT
        assert classify(report(comp=3, total=5)) is ErrorKind.COMPUTATIONAL
        assert classify(report(concept=3, comp=1, total=5)) is ErrorKind.WRONG_CONCEPT
        assert classify(report(total=5)) is ErrorKind.NONE

    def test_epsilon_validated(self):
        with pytest.raises(ValueError):
            classify_scores(True, True, 1.0, 1.0, epsilon=1.0)


class TestFlagWire:
    def test_round_trip(self):
        assert flag_to_wire(True) == 1
        assert flag_to_wire(False) == -1
        assert flag_from_wire(1) is True
        assert flag_from_wire(-1) is False
        with pytest.raises(ValueError):
            flag_from_wire(0)


class TestSegmentation:
    def test_step_markers(self):
        sol = segment_solution("Step 1: F=ma\nStep 2: a=2\nFinal Answer: 2 m/s^2")
        assert [s.text for s in sol.steps] == ["F=ma", "a=2"]
        assert sol.final_answer is not None
        assert sol.final_answer.kind is AnswerKind.NUMERIC
        assert sol.final_answer.numeric_value == 2.0
        assert sol.final_answer.unit == "m/s^2"

    def test_single_paragraph_fallback(self):
        sol = segment_solution("single paragraph with no markers")
        assert len(sol.steps) == 1
        assert sol.final_answer is None

    def test_numbered_list(self):
        sol = segment_solution("1. use F=ma\n2) divide by mass\nFinal Answer: B")
        assert [s.text for s in sol.steps] == ["use F=ma", "divide by mass"]
        assert sol.final_answer.option_label == "B"

    def test_blank_line_paragraphs(self):
        sol = segment_solution("first idea\n\nsecond idea\n\nthird idea")
        assert len(sol.steps) == 3

    def test_marker_precedence_steps_over_numbers(self):
        text = "Step 1: compute 2. something\nStep 2: done"
        sol = segment_solution(text)
        assert len(sol.steps) == 2

    def test_preamble_becomes_first_step(self):
        sol = segment_solution("We proceed as follows.\nStep 1: apply F=ma")
        assert sol.steps[0].text == "We proceed as follows."
        assert sol.steps[1].text == "apply F=ma"

    def test_steps_renumbered_contiguously(self):
        sol = segment_solution("Step 3: first\nStep 9: second")
        assert [s.index for s in sol.steps] == [1, 2]

    def test_answer_only_line_still_yields_a_step(self):
        sol = segment_solution("Final Answer: 42")
        assert len(sol.steps) == 1
        assert sol.final_answer.numeric_value == 42.0

    def test_bold_answer_line(self):
        sol = segment_solution("Step 1: trivial\n**Final Answer:** (C)")
        assert sol.final_answer.option_label == "C"

    def test_last_answer_line_wins(self):
        _answer, _ = extract_answer_line("Final Answer: 1\nmore\nFinal Answer: 2")
        assert _answer.numeric_value == 2.0

    def test_round_trip_over_mixed_corpus(self):
        # 30 synthetic solutions across the three marker styles; after one
        # segmentation, render->segment must be the identity on steps/answer.
        corpus = []
        for i in range(10):
            corpus.append(
                f"Step 1: relate quantities case {i}\nStep 2: solve case {i}\nFinal Answer: {i}.5"
            )
            corpus.append(f"1. set up equation {i}\n2. rearrange terms {i}\n3. evaluate {i}")
            corpus.append(f"first consider {i}\n\nthen conclude {i}\n\nFinal Answer: A")
        assert len(corpus) == 30
        for raw in corpus:
            first = segment_solution(raw)
            second = segment_solution(render_solution(first))
            assert [s.text for s in second.steps] == [s.text for s in first.steps]
            a1, a2 = first.final_answer, second.final_answer
            assert (a1 is None) == (a2 is None)
            if a1 is not None:
                assert a1.raw == a2.raw and a1.kind is a2.kind

    @given(
        st.lists(
            st.text(
                alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd"), max_codepoint=0x7F),
                min_size=1,
                max_size=30,
            ).filter(lambda s: s.strip()),
            min_size=1,
            max_size=6,
        )
    )
    def test_render_segment_identity_property(self, step_texts):
        raw = "\n".join(f"Step {i}: {t}" for i, t in enumerate(step_texts, start=1))
        sol = segment_solution(raw)
        again = segment_solution(render_solution(sol))
        assert [s.text for s in again.steps] == [s.text for s in sol.steps]

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            segment_solution("   ")


class TestAnswerParsing:
    @pytest.mark.parametrize(
        "text,kind,check",
        [
            ("B", AnswerKind.OPTION, lambda a: a.option_label == "B"),
            ("(b)", AnswerKind.OPTION, lambda a: a.option_label == "B"),
            ("9.81", AnswerKind.NUMERIC, lambda a: a.numeric_value == 9.81),
            ("1e3 J", AnswerKind.NUMERIC, lambda a: a.numeric_value == 1000.0 and a.unit == "J"),
            ("-3.5e-2 m", AnswerKind.NUMERIC, lambda a: math.isclose(a.numeric_value, -0.035)),
            ("2GM/r", AnswerKind.EXPRESSION, lambda a: a.raw == "2GM/r"),
            ("v = u + at", AnswerKind.EXPRESSION, lambda a: True),
        ],
    )
    def test_value_kinds(self, text, kind, check):
        answer = parse_answer_value(text)
        assert answer is not None and answer.kind is kind and check(answer)

    def test_empty_value_is_no_answer(self):
        assert parse_answer_value("  ") is None


class TestTextualEquality:
    def test_identical_solutions(self):
        a = segment_solution("Step 1: x\nFinal Answer: 2")
        b = segment_solution("Step 1: x\nFinal Answer: 2")
        assert solutions_textually_equal(a, b)

    def test_answer_change_detected(self):
        a = segment_solution("Step 1: x\nFinal Answer: 2")
        b = segment_solution("Step 1: x\nFinal Answer: 3")
        assert not solutions_textually_equal(a, b)
