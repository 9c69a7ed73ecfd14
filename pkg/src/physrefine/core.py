"""Domain types and pure scoring/segmentation logic shared by the whole pipeline.

Everything in this module is deterministic and side-effect free: solutions
are immutable value objects, and the step-position scores are computed
locally from verifier-reported step indices, never parsed from model text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

DEFAULT_EPSILON = 0.05

# Answer-line convention: the last line matching "Final Answer:" (case
# insensitive, "**" bold markers tolerated) carries the final answer.
_ANSWER_LINE_RE = re.compile(r"^\s*final\s+answer\s*:\s*(?P<value>.*?)\s*$", re.IGNORECASE)
_OPTION_RE = re.compile(r"^\(?([A-Ea-e])\)?$")
_NUMERIC_RE = re.compile(
    r"^(?P<num>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(?:\s+(?P<unit>\S.*))?$"
)

_STEP_MARKER_RE = re.compile(r"^\s*(?:\*\*)?\s*step\s+(\d+)\s*[:.]", re.IGNORECASE | re.MULTILINE)
_NUMBERED_ITEM_RE = re.compile(r"^\s*(\d+)[.)]\s+", re.MULTILINE)
_PARAGRAPH_SPLIT_RE = re.compile(r"\n\s*\n")


class ErrorKind(Enum):
    """Error categories, listed in strict routing-priority order."""

    MISCOMPREHENSION = "miscomprehension"
    WRONG_CONCEPT = "wrong_concept"
    COMPUTATIONAL = "computational"
    NONE = "none"

    @property
    def priority(self) -> int:
        """Lower value wins the routing decision."""
        return _PRIORITY[self]


_PRIORITY = {
    ErrorKind.MISCOMPREHENSION: 0,
    ErrorKind.WRONG_CONCEPT: 1,
    ErrorKind.COMPUTATIONAL: 2,
    ErrorKind.NONE: 3,
}


class AnswerKind(Enum):
    OPTION = "option"
    NUMERIC = "numeric"
    EXPRESSION = "expression"


class SolutionOrigin(Enum):
    INITIAL = "initial"
    MISCOMPREHENSION_AGENT = "miscomprehension_agent"
    CONCEPT_AGENT = "concept_agent"
    COMPUTATION_AGENT = "computation_agent"


@dataclass(frozen=True)
class AnswerKey:
    """A final answer in one of three shapes: option letter, number, or expression."""

    kind: AnswerKind
    raw: str
    option_label: Optional[str] = None
    numeric_value: Optional[float] = None
    unit: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind is AnswerKind.OPTION and not self.option_label:
            raise ValueError("option answer requires option_label")
        if self.kind is AnswerKind.NUMERIC and self.numeric_value is None:
            raise ValueError("numeric answer requires numeric_value")


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answer: AnswerKey
    options: tuple[tuple[str, str], ...] = ()
    topic: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("question id must be nonempty")
        if self.options:
            labels = [label for label, _ in self.options]
            if len(set(labels)) != len(labels):
                raise ValueError(f"duplicate option labels in question {self.id!r}")
            if self.gold_answer.kind is AnswerKind.OPTION and self.gold_answer.option_label not in labels:
                raise ValueError(
                    f"gold answer label {self.gold_answer.option_label!r} not among options of {self.id!r}"
                )


@dataclass(frozen=True)
class SolutionStep:
    index: int
    text: str

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("step index must be >= 1")
        if not self.text.strip():
            raise ValueError("step text must be nonempty")


@dataclass(frozen=True)
class Solution:
    """A step-segmented candidate answer; the object the pipeline refines."""

    steps: tuple[SolutionStep, ...]
    raw_text: str
    final_answer: Optional[AnswerKey] = None
    origin: SolutionOrigin = SolutionOrigin.INITIAL

    def __post_init__(self) -> None:
        for position, step in enumerate(self.steps, start=1):
            if step.index != position:
                raise ValueError("steps must be numbered contiguously from 1")

    @property
    def total_steps(self) -> int:
        return len(self.steps)

    def with_origin(self, origin: SolutionOrigin) -> "Solution":
        return replace(self, origin=origin)


@dataclass(frozen=True)
class VerifierReport:
    """Flags and first-error step indices produced by the error identifier.

    ``objective_aligned`` / ``variables_correct`` are stored as booleans; the
    -1/+1 wire convention used in serialized traces maps False to -1.
    """

    objective_aligned: bool
    variables_correct: bool
    total_steps: int
    concept_first_error_step: Optional[int] = None
    comp_first_error_step: Optional[int] = None
    raw_verifier_text: str = ""

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        for name, step in (
            ("concept_first_error_step", self.concept_first_error_step),
            ("comp_first_error_step", self.comp_first_error_step),
        ):
            if step is not None and not 1 <= step <= self.total_steps:
                raise ValueError(f"{name}={step} out of range 1..{self.total_steps}")


def flag_to_wire(value: bool) -> int:
    """Boolean flag to the -1/+1 convention used in serialized traces."""
    return 1 if value else -1


def flag_from_wire(value: int) -> bool:
    if value not in (-1, 1):
        raise ValueError(f"wire flag must be -1 or +1, got {value}")
    return value == 1


def _positional_score(first_error_step: Optional[int], total_steps: int) -> float:
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if first_error_step is None:
        return 1.0
    n, big_n = first_error_step, total_steps
    if not 1 <= n <= big_n:
        raise ValueError(f"first error step {n} out of range 1..{big_n}")
    if n < big_n:
        return n / big_n
    return n / (big_n + 1)


def score_concept(report: VerifierReport) -> float:
    """Step-position score for the first conceptual error.

    Returns n/N for an error at step n < N, n/(N+1) for an error at the
    last step, and exactly 1.0 when no conceptual error was reported.
    """
    return _positional_score(report.concept_first_error_step, report.total_steps)


def score_comp(report: VerifierReport) -> float:
    """Same positional score, applied to the first computational error."""
    return _positional_score(report.comp_first_error_step, report.total_steps)


def classify_scores(
    objective_aligned: bool,
    variables_correct: bool,
    concept_score: float,
    comp_score: float,
    epsilon: float = DEFAULT_EPSILON,
) -> ErrorKind:
    """Routing decision over raw flags and scores, as a strict if/elif chain.

    Miscomprehension always wins; concept beats computation; a score only
    counts as an error when it falls below 1 - epsilon.
    """
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must be in [0, 1)")
    if not objective_aligned or not variables_correct:
        return ErrorKind.MISCOMPREHENSION
    if concept_score < 1 - epsilon:
        return ErrorKind.WRONG_CONCEPT
    if comp_score < 1 - epsilon:
        return ErrorKind.COMPUTATIONAL
    return ErrorKind.NONE


def classify(report: VerifierReport, epsilon: float = DEFAULT_EPSILON) -> ErrorKind:
    return classify_scores(
        report.objective_aligned,
        report.variables_correct,
        score_concept(report),
        score_comp(report),
        epsilon,
    )


def parse_answer_value(value: str) -> Optional[AnswerKey]:
    """Parse the text after "Final Answer:" into an AnswerKey.

    A single letter A-E (optionally parenthesized) is an option; a decimal
    or scientific-notation literal with an optional trailing unit string is
    numeric; anything else nonempty is an expression.
    """
    value = value.replace("**", "").strip()
    if not value:
        return None
    option = _OPTION_RE.match(value)
    if option:
        return AnswerKey(kind=AnswerKind.OPTION, raw=value, option_label=option.group(1).upper())
    numeric = _NUMERIC_RE.match(value)
    if numeric:
        return AnswerKey(
            kind=AnswerKind.NUMERIC,
            raw=value,
            numeric_value=float(numeric.group("num")),
            unit=numeric.group("unit"),
        )
    return AnswerKey(kind=AnswerKind.EXPRESSION, raw=value)


def extract_answer_line(raw_text: str) -> tuple[Optional[AnswerKey], str]:
    """Split off the trailing final-answer line.

    Returns (answer or None, remaining body). The last line whose
    de-bolded form matches the answer-line convention wins.
    """
    lines = raw_text.splitlines()
    answer_index = None
    answer: Optional[AnswerKey] = None
    for i in range(len(lines) - 1, -1, -1):
        match = _ANSWER_LINE_RE.match(lines[i].replace("**", ""))
        if match:
            parsed = parse_answer_value(match.group("value"))
            if parsed is not None:
                answer_index = i
                answer = parsed
            break
    if answer_index is None:
        return None, raw_text
    body = "\n".join(lines[:answer_index] + lines[answer_index + 1 :])
    return answer, body


def _split_on_markers(body: str, marker_re: re.Pattern[str]) -> list[str]:
    matches = list(marker_re.finditer(body))
    if not matches:
        return []
    texts: list[str] = []
    preamble = body[: matches[0].start()].strip()
    if preamble:
        texts.append(preamble)
    for i, match in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(body)
        text = body[match.end() : end].strip()
        if text:
            texts.append(text)
    return texts


def segment_solution(raw_text: str, origin: SolutionOrigin = SolutionOrigin.INITIAL) -> Solution:
    """Segment free text into numbered steps plus an optional final answer.

    Marker precedence is fixed: explicit "Step k:" headings, then numbered
    list items, then blank-line paragraphs, then the whole text as one step.
    Total by design; never raises on nonempty input.
    """
    if not raw_text.strip():
        raise ValueError("raw_text must be nonempty")
    answer, body = extract_answer_line(raw_text)

    texts = _split_on_markers(body, _STEP_MARKER_RE)
    if not texts:
        texts = _split_on_markers(body, _NUMBERED_ITEM_RE)
    if not texts:
        texts = [p.strip() for p in _PARAGRAPH_SPLIT_RE.split(body) if p.strip()]
    if not texts:
        texts = [raw_text.strip()]

    steps = tuple(SolutionStep(index=i, text=t) for i, t in enumerate(texts, start=1))
    return Solution(steps=steps, raw_text=raw_text, final_answer=answer, origin=origin)


def render_solution(solution: Solution) -> str:
    """Canonical text form: "Step k:" lines plus a final-answer line.

    Segmenting the rendered text reproduces the same steps and answer, which
    is the round-trip property tests rely on.
    """
    lines = [f"Step {step.index}: {step.text}" for step in solution.steps]
    if solution.final_answer is not None:
        lines.append(f"Final Answer: {solution.final_answer.raw}")
    return "\n".join(lines)


def solutions_textually_equal(a: Solution, b: Solution) -> bool:
    """Step-text and final-answer equality; used by the stall detector."""
    if len(a.steps) != len(b.steps):
        return False
    if any(sa.text != sb.text for sa, sb in zip(a.steps, b.steps)):
        return False
    a_raw = a.final_answer.raw if a.final_answer else None
    b_raw = b.final_answer.raw if b.final_answer else None
    return a_raw == b_raw
