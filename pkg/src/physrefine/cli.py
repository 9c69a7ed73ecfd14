"""Operator entry points: ingest a knowledge base, run one pipeline,
evaluate a dataset, and inspect traces.

Exit codes: 0 success, 2 missing/invalid input, 3 pipeline abort.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Optional

import click

from .agents import AgentContext
from .core import segment_solution
from .evalharness import (
    EvalConfig,
    EvalMode,
    SchemaError,
    evaluate,
    generate_baseline,
    load_dataset,
    load_exemplars,
    question_from_record,
    render_report_table,
    write_report,
)
from .gateway import BackendSpec, ChatGateway, GatewayError, RetryPolicy
from .orchestrator import (
    PipelineConfig,
    StallPolicy,
    load_traces,
    run_pipeline,
    write_traces,
)
from .retrieval import EmptyCorpus, RetrievalConfig, ingest, load_index
from .sandbox import SandboxExecutor
from .verifier import VerifierConfig

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib  # type: ignore[no-redef]

_MODE_ALIASES = {
    "ao": EvalMode.ANSWER_ONLY,
    "cot": EvalMode.COT,
    "3shot": EvalMode.FEW_SHOT_3,
    "mora": EvalMode.MORA,
}


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    source = Path(path)
    if not source.exists():
        raise click.ClickException(f"config file not found: {path}")
    if source.suffix == ".toml":
        return tomllib.loads(source.read_text(encoding="utf-8"))
    return json.loads(source.read_text(encoding="utf-8"))


def _backend_spec(data: dict) -> BackendSpec:
    retry = data.get("retry", {})
    return BackendSpec(
        kind=data["kind"],
        model_id=data.get("model_id", "unknown"),
        base_url=data.get("base_url"),
        api_key_env=data.get("api_key_env"),
        script_path=data.get("script_path"),
        rate_limit_per_min=int(data.get("rate_limit_per_min", 0)),
        retry=RetryPolicy(
            max_attempts=int(retry.get("max_attempts", 3)),
            backoff_base_ms=int(retry.get("backoff_base_ms", 100)),
        ),
    )


def _backend_from_flag(value: str) -> dict:
    """Parse a "model_id@base_url" shorthand into an http backend mapping."""
    if "@" not in value:
        raise click.ClickException(f"--backend expects model_id@base_url, got {value!r}")
    model_id, base_url = value.split("@", 1)
    return {"kind": "http_openai_compatible", "model_id": model_id, "base_url": base_url}


def _resolve_backends(
    config: dict, backend: Optional[str], identifier_backend: Optional[str], script: Optional[str]
) -> tuple[ChatGateway, ChatGateway]:
    solver_cfg = dict(config.get("solver", {}))
    identifier_cfg = dict(config.get("identifier", {}))
    if backend:
        solver_cfg = _backend_from_flag(backend)
    if identifier_backend:
        identifier_cfg = _backend_from_flag(identifier_backend)
    if script:
        solver_cfg = {"kind": "scripted", "model_id": solver_cfg.get("model_id", "scripted-solver"), "script_path": script}
        identifier_cfg = {
            "kind": "scripted",
            "model_id": identifier_cfg.get("model_id", "scripted-identifier"),
            "script_path": script,
        }
    if not solver_cfg or not identifier_cfg:
        raise click.ClickException(
            "solver and identifier backends must come from --config, --backend/--identifier-backend, or --script"
        )
    return ChatGateway(_backend_spec(solver_cfg)), ChatGateway(_backend_spec(identifier_cfg))


def _build_pipeline(
    config: dict,
    solver: ChatGateway,
    identifier: ChatGateway,
    kb_path: Optional[str],
    epsilon: Optional[float],
    max_iterations: Optional[int],
) -> PipelineConfig:
    pipeline_cfg = config.get("pipeline", {})
    verifier_cfg = config.get("verifier", {})
    kb_index = kb_path or config.get("kb_index")
    kb = load_index(kb_index) if kb_index else None
    runner_cmd = config.get("runner_cmd")
    sandbox = SandboxExecutor(runner_cmd=runner_cmd)
    retrieval_cfg = RetrievalConfig(**config.get("retrieval", {}))
    return PipelineConfig(
        verifier=VerifierConfig(
            identifier=identifier,
            comp_tolerance=float(verifier_cfg.get("comp_tolerance", 0.1)),
            use_code_verification=bool(verifier_cfg.get("use_code_verification", True)),
        ),
        agent_ctx=AgentContext(
            solver=solver, retrieval_kb=kb, sandbox=sandbox, retrieval_config=retrieval_cfg
        ),
        max_iterations=max_iterations or int(pipeline_cfg.get("max_iterations", 3)),
        epsilon=epsilon if epsilon is not None else float(pipeline_cfg.get("epsilon", 0.05)),
        stall_policy=StallPolicy(pipeline_cfg.get("stall_policy", "stop")),
    )


def _load_question(path: Path) -> dict:
    text = path.read_text(encoding="utf-8").strip()
    first_line = text.splitlines()[0] if text else ""
    record = json.loads(first_line if path.suffix == ".jsonl" else text)
    if not isinstance(record, dict):
        raise click.ClickException(f"question file {path} must hold a JSON object")
    return record


@click.group()
def main() -> None:
    """Iterative physics-solution refinement pipeline."""


@main.command("ingest")
@click.argument("corpus_dir", type=click.Path(file_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--max-chunk-chars", default=1200, show_default=True)
def cmd_ingest(corpus_dir: str, out_dir: str, max_chunk_chars: int) -> None:
    """Build a knowledge-base index from a directory of .txt/.md documents."""
    try:
        kb = ingest(corpus_dir, out_dir, RetrievalConfig(max_chunk_chars=max_chunk_chars))
    except (EmptyCorpus, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"chunks: {len(kb.chunks)}")
    click.echo(f"entities: {len(kb.nodes)}")
    click.echo(f"edges: {len(kb.edges)}")


@main.command("run")
@click.argument("question_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--solution", "solution_file", type=click.Path(exists=True, dir_okay=False), help="Initial solution text; generated via chain-of-thought when omitted.")
@click.option("--config", "config_path", type=click.Path(), help="TOML/JSON config file.")
@click.option("--backend", help="Solver backend as model_id@base_url.")
@click.option("--identifier-backend", help="Identifier backend as model_id@base_url.")
@click.option("--script", type=click.Path(exists=True, dir_okay=False), help="Scripted-backend file (replaces both backends).")
@click.option("--kb", "kb_path", type=click.Path(), help="Knowledge-base index directory.")
@click.option("--epsilon", type=float, default=None)
@click.option("--max-iterations", type=int, default=None)
@click.option("--trace-out", default="trace.jsonl", show_default=True)
def cmd_run(
    question_file: str,
    solution_file: Optional[str],
    config_path: Optional[str],
    backend: Optional[str],
    identifier_backend: Optional[str],
    script: Optional[str],
    kb_path: Optional[str],
    epsilon: Optional[float],
    max_iterations: Optional[int],
    trace_out: str,
) -> None:
    """Refine one question's solution and write its trace."""
    config = _load_config_file(config_path)
    solver, identifier = _resolve_backends(config, backend, identifier_backend, script)
    cfg = _build_pipeline(config, solver, identifier, kb_path, epsilon, max_iterations)

    record = _load_question(Path(question_file))
    try:
        question_obj = question_from_record(record)
    except (KeyError, TypeError, ValueError) as exc:
        click.echo(f"error: invalid question file: {exc}", err=True)
        sys.exit(2)

    try:
        if solution_file:
            s0 = segment_solution(Path(solution_file).read_text(encoding="utf-8"))
        else:
            s0 = generate_baseline(question_obj, EvalMode.COT, solver)
        trace = run_pipeline(question_obj, s0, cfg)
    except GatewayError as exc:
        click.echo(f"pipeline aborted: {exc}", err=True)
        sys.exit(3)

    write_traces(trace_out, [trace], cfg)
    answer = trace.final_solution.final_answer if trace.final_solution else None
    click.echo(f"final_answer: {answer.raw if answer else '(none)'}")
    click.echo(f"terminated_by: {trace.terminated_by.value}")
    agents = [r.agent_invoked.value for r in trace.iterations if r.agent_invoked]
    click.echo(f"agents: {', '.join(agents) if agents else '(none)'}")
    click.echo(f"trace: {trace_out}")


@main.command("eval")
@click.argument("dataset_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(sorted(_MODE_ALIASES)), required=True)
@click.option("--config", "config_path", type=click.Path())
@click.option("--backend", help="Solver backend as model_id@base_url.")
@click.option("--identifier-backend", help="Identifier backend as model_id@base_url.")
@click.option("--script", type=click.Path(exists=True, dir_okay=False))
@click.option("--kb", "kb_path", type=click.Path())
@click.option("--epsilon", type=float, default=None)
@click.option("--max-iterations", type=int, default=None)
@click.option("--concurrency", type=int, default=1, show_default=True)
@click.option("--trace-out", default=None, help="Trace file for mora mode.")
@click.option("--report-out", default="report.json", show_default=True)
@click.option("--exemplars", "exemplar_path", type=click.Path(), help="Exemplar file for 3shot mode.")
def cmd_eval(
    dataset_file: str,
    mode: str,
    config_path: Optional[str],
    backend: Optional[str],
    identifier_backend: Optional[str],
    script: Optional[str],
    kb_path: Optional[str],
    epsilon: Optional[float],
    max_iterations: Optional[int],
    concurrency: int,
    trace_out: Optional[str],
    report_out: str,
    exemplar_path: Optional[str],
) -> None:
    """Evaluate a dataset in one prompting mode and write the report."""
    config = _load_config_file(config_path)
    eval_mode = _MODE_ALIASES[mode]
    try:
        dataset = load_dataset(dataset_file)
    except SchemaError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)

    solver, identifier = _resolve_backends(config, backend, identifier_backend, script)
    pipeline = None
    if eval_mode is EvalMode.MORA:
        pipeline = _build_pipeline(config, solver, identifier, kb_path, epsilon, max_iterations)
        trace_out = trace_out or "mora-traces.jsonl"

    exemplar_source = exemplar_path or config.get("exemplars")
    exemplars = load_exemplars(exemplar_source) if exemplar_source else ()
    try:
        report = evaluate(
            dataset,
            eval_mode,
            EvalConfig(
                solver=solver,
                pipeline=pipeline,
                exemplars=exemplars,
                concurrency=concurrency,
                trace_path=trace_out,
            ),
        )
    except (SchemaError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)

    config_echo = {
        "mode": mode,
        "solver_model": solver.spec.model_id,
        "identifier_model": identifier.spec.model_id,
        "epsilon": pipeline.epsilon if pipeline else None,
        "max_iterations": pipeline.max_iterations if pipeline else None,
        "concurrency": concurrency,
    }
    write_report(report, report_out, config_echo=config_echo)
    click.echo(render_report_table(report))
    click.echo(f"report: {report_out}")


@main.command("trace")
@click.argument("trace_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--question-id", default=None)
def cmd_trace(trace_file: str, question_id: Optional[str]) -> None:
    """Pretty-print traces: flags in -1/+1 notation, scores, agents, diffs."""
    header, traces = load_traces(trace_file)
    if question_id is not None:
        traces = [t for t in traces if t["question_id"] == question_id]
        if not traces:
            click.echo(f"error: no trace for question id {question_id!r}", err=True)
            sys.exit(2)
    click.echo(f"format: {header['format']}")
    for trace in traces:
        click.echo(render_trace(trace))


def render_trace(trace: dict) -> str:
    lines = [f"question {trace['question_id']}  terminated_by: {trace['terminated_by']}"]
    if trace.get("error"):
        lines.append(f"  error: {trace['error']}")
    previous = None
    for record in trace["iterations"]:
        report = record.get("report")
        if report is None:
            lines.append(f"iteration {record['index']}: verifier output unparseable")
        else:
            concept = report["concept_error_step"]
            comp = report["comp_error_step"]
            scores = record["scores"]
            lines.append(
                f"iteration {record['index']}: "
                f"objective={report['objective']:+d} variables={report['variables']:+d} "
                f"concept_step={concept if concept is not None else '-'} "
                f"comp_step={comp if comp is not None else '-'} "
                f"score_concept={_fmt(scores['concept'])} score_comp={_fmt(scores['comp'])} "
                f"-> {record['classification']}"
            )
        agent = record.get("agent_invoked")
        lines.append(f"  agent: {agent if agent else '(none)'}")
        flags = record.get("flags", {})
        raised = [name for name, value in sorted(flags.items()) if value]
        if raised:
            lines.append(f"  flags: {', '.join(raised)}")
        lines.append(f"  {_diff_summary(previous, record['solution_after'])}")
        previous = record["solution_after"]
    return "\n".join(lines)


def _fmt(value: Optional[float]) -> str:
    return f"{value:.4f}" if value is not None else "-"


def _diff_summary(before: Optional[dict], after: Optional[dict]) -> str:
    if after is None:
        return "solution: (aborted)"
    answer = after.get("final_answer")
    answer_text = answer["raw"] if answer else "(none)"
    if before is None:
        return f"solution: {len(after['steps'])} steps, answer: {answer_text}"
    changed = sum(
        1 for a, b in zip(before["steps"], after["steps"]) if a != b
    ) + abs(len(before["steps"]) - len(after["steps"]))
    if changed == 0 and (before.get("final_answer") or {}) == (answer or {}):
        return "diff: unchanged"
    return f"diff: {changed} step(s) changed, answer: {answer_text}"


if __name__ == "__main__":
    main()
