import pytest

from physrefine.core import (
    AnswerKey,
    AnswerKind,
    Question,
    segment_solution,
)
from physrefine.gateway import BackendSpec, ChatGateway, RetryPolicy, ScriptedBackend
from physrefine.gateway import _ScriptEntry as ScriptEntry
from physrefine.sandbox import SandboxExecutor


def scripted_gateway(entries, model_id="scripted", max_attempts=3, rate_limit=0):
    """Gateway over an in-memory scripted backend; entries are (label, response)
    pairs, dicts, or ScriptEntry objects."""
    normalized = []
    for entry in entries:
        if isinstance(entry, ScriptEntry):
            normalized.append(entry)
        elif isinstance(entry, dict):
            normalized.append(ScriptEntry(**entry))
        else:
            label, response = entry
            normalized.append(ScriptEntry(label=label, response=response))
    spec = BackendSpec(
        kind="scripted",
        model_id=model_id,
        script_path="<inline>",
        rate_limit_per_min=rate_limit,
        retry=RetryPolicy(max_attempts=max_attempts, backoff_base_ms=1),
    )
    return ChatGateway(spec, backend=ScriptedBackend(normalized), sleep=lambda _s: None)


@pytest.fixture
def sandbox():
    return SandboxExecutor()


@pytest.fixture
def pendulum_question():
    return Question(
        id="q-pendulum",
        text=(
            "A simple pendulum of length 0.49 m swings with small amplitude where "
            "g = 9.8 m/s^2. Find its time period in seconds."
        ),
        gold_answer=AnswerKey(kind=AnswerKind.NUMERIC, raw="1.4049 s", numeric_value=1.4049, unit="s"),
        topic="Mechanics",
    )


@pytest.fixture
def mass_question():
    return Question(
        id="q-mass",
        text=(
            "A block of mass 9M with M = 2 kg slides at 2 m/s. "
            "Find its kinetic energy in joules."
        ),
        gold_answer=AnswerKey(kind=AnswerKind.NUMERIC, raw="36 J", numeric_value=36.0, unit="J"),
        topic="Mechanics",
    )


@pytest.fixture
def cylinder_question():
    return Question(
        id="q-cylinder",
        text=(
            "A uniform solid cylinder of mass 2 kg and radius 0.5 m rotates about its "
            "central axis. Find its moment of inertia in kg m^2."
        ),
        gold_answer=AnswerKey(kind=AnswerKind.NUMERIC, raw="0.25 kg m^2", numeric_value=0.25, unit="kg m^2"),
        topic="Mechanics",
    )


def make_solution(text):
    return segment_solution(text)
