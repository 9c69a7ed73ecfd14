"""Iterative refinement engine for step-by-step physics solutions."""

from .core import (
    AnswerKey,
    AnswerKind,
    ErrorKind,
    Question,
    Solution,
    SolutionOrigin,
    SolutionStep,
    VerifierReport,
    classify,
    classify_scores,
    render_solution,
    score_comp,
    score_concept,
    segment_solution,
)
from .gateway import BackendSpec, ChatGateway, ChatMessage, Role, ScriptedBackend, fingerprint
from .orchestrator import PipelineConfig, RefinementTrace, TerminatedBy, run_batch, run_pipeline
from .retrieval import KnowledgeBase, Observation, ingest, load_index, retrieve
from .sandbox import ExecutionRequest, ExecutionResult, SandboxExecutor, parse_result_line
from .verifier import VerifierConfig, verify, verify_computation

__all__ = [
    "AnswerKey",
    "AnswerKind",
    "BackendSpec",
    "ChatGateway",
    "ChatMessage",
    "ErrorKind",
    "ExecutionRequest",
    "ExecutionResult",
    "KnowledgeBase",
    "Observation",
    "PipelineConfig",
    "Question",
    "RefinementTrace",
    "Role",
    "SandboxExecutor",
    "ScriptedBackend",
    "Solution",
    "SolutionOrigin",
    "SolutionStep",
    "TerminatedBy",
    "VerifierConfig",
    "VerifierReport",
    "classify",
    "classify_scores",
    "fingerprint",
    "ingest",
    "load_index",
    "parse_result_line",
    "render_solution",
    "retrieve",
    "run_batch",
    "run_pipeline",
    "score_comp",
    "score_concept",
    "segment_solution",
    "verify",
    "verify_computation",
]

__version__ = "0.1.0"
