"""Dataset loading, baseline generation, answer matching, and accuracy
reporting.

Baselines cover answer-only, chain-of-thought, and 3-shot prompting; the
refinement mode ("mora") seeds each question with a chain-of-thought
solution and runs it through the pipeline, reporting both the initial and
the post-refinement accuracy side by side so the delta is observable.
Aborted questions count as incorrect.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from .agents import SOLVER_SYSTEM
from .core import (
    AnswerKey,
    AnswerKind,
    Question,
    Solution,
    parse_answer_value,
    segment_solution,
)
from .gateway import ChatGateway, ChatMessage, Role
from .orchestrator import PipelineConfig, RefinementTrace, TerminatedBy, run_batch

logger = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = "1"

ANSWER_ABS_TOL = 1e-2
ANSWER_REL_TOL = 1e-2

_AO_INSTRUCTION = "Answer with the option letter only."
_COT_INSTRUCTION = (
    "Let's think step by step. Write each reasoning step on its own line as "
    '"Step k: ..." and end with a line "Final Answer: <answer>".'
)


class SchemaError(Exception):
    """Dataset file violates the line schema; carries offending line numbers."""

    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = problems
        detail = "; ".join(f"line {n}: {msg}" for n, msg in problems)
        super().__init__(f"dataset schema violations: {detail}")


class EvalMode(Enum):
    ANSWER_ONLY = "ao"
    COT = "cot"
    FEW_SHOT_3 = "3shot"
    MORA = "mora"


@dataclass(frozen=True)
class Dataset:
    name: str
    questions: tuple[Question, ...]
    format_version: str = DATASET_FORMAT_VERSION


@dataclass(frozen=True)
class Exemplar:
    question: str
    solution: str


@dataclass
class EvalConfig:
    solver: ChatGateway
    pipeline: Optional[PipelineConfig] = None
    exemplars: tuple[Exemplar, ...] = ()
    concurrency: int = 1
    trace_path: Optional[str] = None
    abs_tol: float = ANSWER_ABS_TOL
    rel_tol: float = ANSWER_REL_TOL


@dataclass(frozen=True)
class EvalReport:
    dataset: str
    mode: EvalMode
    model_id: str
    n_total: int
    n_correct: int
    n_aborted: int
    accuracy: float
    per_topic: dict[str, tuple[int, int]]
    trace_path: Optional[str] = None
    initial_n_correct: Optional[int] = None
    initial_accuracy: Optional[float] = None


def _parse_gold_answer(record: dict, options: Sequence[tuple[str, str]]) -> AnswerKey:
    answer = record["answer"]
    kind = AnswerKind(answer["kind"])
    if kind is AnswerKind.OPTION:
        label = str(answer["label"]).upper()
        text = dict(options).get(label, label)
        return AnswerKey(kind=kind, raw=text, option_label=label)
    if kind is AnswerKind.NUMERIC:
        value = float(answer["value"])
        return AnswerKey(
            kind=kind,
            raw=answer.get("raw", str(value)),
            numeric_value=value,
            unit=answer.get("unit"),
        )
    return AnswerKey(kind=kind, raw=str(answer["raw"]))


def question_from_record(record: dict) -> Question:
    """One dataset line (already JSON-decoded) to a validated Question."""
    options = tuple(
        (str(opt["label"]).upper(), str(opt["text"])) for opt in record.get("options", [])
    )
    if record.get("options") is not None and 0 < len(options) < 2:
        raise ValueError("multiple-choice question needs at least 2 options")
    return Question(
        id=str(record["id"]),
        text=str(record["question"]),
        options=options,
        gold_answer=_parse_gold_answer(record, options),
        topic=record.get("topic"),
    )


def load_dataset(path: str | Path) -> Dataset:
    """Load and validate a JSON-lines dataset; rejects with line numbers."""
    source = Path(path)
    problems: list[tuple[int, str]] = []
    questions: list[Question] = []
    seen_ids: set[str] = set()
    lines = source.read_text(encoding="utf-8").splitlines()
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append((number, f"invalid JSON: {exc.msg}"))
            continue
        try:
            if record["id"] in seen_ids:
                raise ValueError(f"duplicate question id {record['id']!r}")
            seen_ids.add(record["id"])
            questions.append(question_from_record(record))
        except (KeyError, TypeError, ValueError) as exc:
            problems.append((number, str(exc)))
    if problems:
        raise SchemaError(problems)
    if not questions:
        raise SchemaError([(0, "dataset holds no questions")])
    return Dataset(name=source.stem, questions=tuple(questions))


def _options_block(question: Question) -> str:
    if not question.options:
        return ""
    lines = [f"({label}) {text}" for label, text in question.options]
    return "Options:\n" + "\n".join(lines) + "\n"


def load_exemplars(path: str | Path) -> tuple[Exemplar, ...]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return tuple(Exemplar(question=e["question"], solution=e["solution"]) for e in raw)


def generate_baseline(
    question: Question,
    mode: EvalMode,
    gateway: ChatGateway,
    exemplars: Sequence[Exemplar] = (),
) -> Solution:
    """Produce one baseline solution in the requested prompting mode."""
    if mode is EvalMode.MORA:
        raise ValueError("mora is not a baseline mode; use evaluate()")
    if mode is EvalMode.FEW_SHOT_3 and len(exemplars) != 3:
        raise ValueError(f"3-shot mode requires exactly 3 exemplars, got {len(exemplars)}")

    if mode is EvalMode.ANSWER_ONLY:
        prompt = f"{question.text}\n{_options_block(question)}{_AO_INSTRUCTION}"
        messages = (ChatMessage(Role.USER, prompt),)
    elif mode is EvalMode.COT:
        prompt = f"{question.text}\n{_options_block(question)}{_COT_INSTRUCTION}"
        messages = (ChatMessage(Role.SYSTEM, SOLVER_SYSTEM), ChatMessage(Role.USER, prompt))
    else:
        shots = "\n\n".join(
            f"Question: {e.question}\nSolution:\n{e.solution}" for e in exemplars
        )
        prompt = (
            f"{shots}\n\nQuestion: {question.text}\n{_options_block(question)}"
            f"Solution:\n{_COT_INSTRUCTION}"
        )
        messages = (ChatMessage(Role.SYSTEM, SOLVER_SYSTEM), ChatMessage(Role.USER, prompt))

    exchange = gateway.complete(messages, label=f"{mode.value}:{question.id}")
    solution = segment_solution(exchange.response_text)
    if solution.final_answer is None:
        # Bare replies ("B", "42 J") are themselves the answer in AO mode.
        parsed = parse_answer_value(exchange.response_text.strip())
        if parsed is not None and (
            mode is EvalMode.ANSWER_ONLY or len(exchange.response_text.strip().splitlines()) == 1
        ):
            solution = Solution(
                steps=solution.steps,
                raw_text=solution.raw_text,
                final_answer=parsed,
                origin=solution.origin,
            )
    return solution


def _numeric_of(answer: AnswerKey) -> Optional[float]:
    if answer.kind is AnswerKind.NUMERIC:
        return answer.numeric_value
    match = re.match(
        r"\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(?:\s|$)", answer.raw
    )
    return float(match.group(1)) if match else None


def _normalize_expr(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().lower()


def match_answer(
    predicted: Optional[AnswerKey],
    gold: AnswerKey,
    abs_tol: float = ANSWER_ABS_TOL,
    rel_tol: float = ANSWER_REL_TOL,
) -> bool:
    """Final-answer equality: labels case-insensitively, numbers within
    max(abs_tol, rel_tol*|gold|), expressions by normalized string.

    On a kind mismatch, a numeric parse of the option (or expression) text
    is attempted before declaring false. Total: never raises.
    """
    if predicted is None:
        return False
    if predicted.kind is gold.kind is AnswerKind.OPTION:
        assert predicted.option_label and gold.option_label
        return predicted.option_label.upper() == gold.option_label.upper()
    if predicted.kind is gold.kind is AnswerKind.EXPRESSION:
        return _normalize_expr(predicted.raw) == _normalize_expr(gold.raw)
    p_num, g_num = _numeric_of(predicted), _numeric_of(gold)
    if p_num is not None and g_num is not None:
        return abs(p_num - g_num) <= max(abs_tol, rel_tol * abs(g_num))
    return False


def evaluate(dataset: Dataset, mode: EvalMode, cfg: EvalConfig) -> EvalReport:
    """Score a whole dataset in one mode.

    Baseline modes do one generate+match per question. The refinement mode
    seeds from chain-of-thought solutions, runs the pipeline batch, and
    reports initial and final accuracy together.
    """
    if not dataset.questions:
        raise SchemaError([(0, "dataset holds no questions")])
    if mode is EvalMode.MORA and cfg.pipeline is None:
        raise ValueError("mora mode requires a pipeline config")

    per_topic: dict[str, list[int]] = {}
    n_correct = 0
    n_aborted = 0
    initial_n_correct: Optional[int] = None
    trace_path = cfg.trace_path

    if mode is EvalMode.MORA:
        assert cfg.pipeline is not None
        initial: dict[str, Optional[Solution]] = {}

        def make_initial(question: Question) -> Solution:
            solution = generate_baseline(question, EvalMode.COT, cfg.solver, cfg.exemplars)
            initial[question.id] = solution
            return solution

        traces = run_batch(
            list(dataset.questions),
            cfg.pipeline,
            cfg.concurrency,
            make_initial=make_initial,
            trace_path=trace_path,
        )
        initial_n_correct = 0
        for question, trace in zip(dataset.questions, traces):
            seed = initial.get(question.id)
            if seed is not None and match_answer(
                seed.final_answer, question.gold_answer, cfg.abs_tol, cfg.rel_tol
            ):
                initial_n_correct += 1
            correct = _trace_correct(trace, question, cfg)
            if trace.terminated_by is TerminatedBy.ABORTED:
                n_aborted += 1
            n_correct += int(correct)
            _tally(per_topic, question, correct)
    else:
        for question in dataset.questions:
            try:
                solution = generate_baseline(question, mode, cfg.solver, cfg.exemplars)
                correct = match_answer(
                    solution.final_answer, question.gold_answer, cfg.abs_tol, cfg.rel_tol
                )
            except Exception as exc:
                logger.warning("question %s aborted: %s", question.id, exc)
                n_aborted += 1
                correct = False
            n_correct += int(correct)
            _tally(per_topic, question, correct)

    n_total = len(dataset.questions)
    return EvalReport(
        dataset=dataset.name,
        mode=mode,
        model_id=cfg.solver.spec.model_id,
        n_total=n_total,
        n_correct=n_correct,
        n_aborted=n_aborted,
        accuracy=n_correct / n_total,
        per_topic={topic: (n, c) for topic, (n, c) in sorted(per_topic.items())},
        trace_path=trace_path,
        initial_n_correct=initial_n_correct,
        initial_accuracy=(initial_n_correct / n_total) if initial_n_correct is not None else None,
    )


def _trace_correct(trace: RefinementTrace, question: Question, cfg: EvalConfig) -> bool:
    if trace.final_solution is None:
        return False
    return match_answer(
        trace.final_solution.final_answer, question.gold_answer, cfg.abs_tol, cfg.rel_tol
    )


def _tally(per_topic: dict[str, list[int]], question: Question, correct: bool) -> None:
    topic = question.topic or "untagged"
    bucket = per_topic.setdefault(topic, [0, 0])
    bucket[0] += 1
    bucket[1] += int(correct)


_MODE_COLUMNS = (
    (EvalMode.ANSWER_ONLY, "AO"),
    (EvalMode.COT, "CoT"),
    (EvalMode.FEW_SHOT_3, "3-Shot"),
    (EvalMode.MORA, "MORA"),
)


def render_report_table(report: EvalReport) -> str:
    """Fixed-width accuracy table juxtaposing prompting modes per dataset row."""
    cells = {}
    if report.mode is EvalMode.MORA:
        if report.initial_accuracy is not None:
            cells["CoT"] = f"{report.initial_accuracy * 100:.2f}%"
        cells["MORA"] = f"{report.accuracy * 100:.2f}%"
    else:
        name = dict(_MODE_COLUMNS)[report.mode]
        cells[name] = f"{report.accuracy * 100:.2f}%"
    headers = ["Model", "Dataset"] + [name for _, name in _MODE_COLUMNS]
    row = [report.model_id, report.dataset] + [
        cells.get(name, "-") for _, name in _MODE_COLUMNS
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*headers), fmt.format(*["-" * w for w in widths]), fmt.format(*row)]
    for topic, (n, c) in report.per_topic.items():
        lines.append(f"  {topic}: {c}/{n}")
    return "\n".join(lines)


def report_to_dict(report: EvalReport) -> dict:
    return {
        "dataset": report.dataset,
        "mode": report.mode.value,
        "model_id": report.model_id,
        "n_total": report.n_total,
        "n_correct": report.n_correct,
        "n_aborted": report.n_aborted,
        "accuracy": report.accuracy,
        "per_topic": {k: {"n": n, "correct": c} for k, (n, c) in report.per_topic.items()},
        "trace_path": report.trace_path,
        "initial_n_correct": report.initial_n_correct,
        "initial_accuracy": report.initial_accuracy,
    }


def write_report(
    report: EvalReport, path: str | Path, config_echo: Optional[dict] = None
) -> None:
    """Atomically write the report JSON, with the effective config echoed
    into the header when the caller provides it."""
    payload = report_to_dict(report)
    if config_echo is not None:
        payload = {"config": config_echo, **payload}
    target = Path(path)
    tmp = target.with_suffix(target.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, target)
