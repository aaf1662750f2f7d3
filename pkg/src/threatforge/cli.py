"""Command-line entry point.

Each pipeline stage is separately invocable and chainable through files,
so any stage can be replayed or tested on its own. Runs against a mock
backend are fully deterministic: the same inputs write the same bytes.

Exit codes: 0 success, 2 usage, 3 backend failure, 4 bad input or schema,
5 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import dataset as ds
from . import dfd, evaluation, extraction, opro, prompts, stride
from .errors import (
    BackendError,
    DfdParseError,
    EmptyInputError,
    InvalidGraphError,
    NotACodeError,
    SchemaError,
    ThreatForgeError,
    TooFewSamplesError,
)
from .gateway import BackendSpec, ChatRequest, parse_backend_arg, send_chat

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_SCHEMA = 4
EXIT_INTERNAL = 5

_SCHEMA_ERRORS = (
    DfdParseError,
    InvalidGraphError,
    SchemaError,
    NotACodeError,
    TooFewSamplesError,
    EmptyInputError,
    FileNotFoundError,
)


@dataclass
class PipelineConfig:
    backend: BackendSpec
    template: prompts.PromptTemplate
    provider: evaluation.SimilarityProvider
    out_dir: Path | None = None
    model_id: str = "gpt-3.5-turbo"
    max_tokens: int = 1024
    temperature: float = 0.0


def _parsed_to_dict(parsed: extraction.ParsedOutput) -> dict:
    return {
        "findings": [
            {
                "category": f.category.label,
                "subject": f.subject_id,
                "threat": f.description,
                "mitigation": f.mitigation,
                "codes": f.codes.canonical_tokens(),
            }
            for f in parsed.findings
        ],
        "unparsed_spans": [list(span) for span in parsed.unparsed_spans],
        "warnings": list(parsed.warnings),
        "flags": [] if parsed.findings else ["no_findings"],
    }


def _findings_table(parsed: extraction.ParsedOutput) -> str:
    headers = ("category", "codes", "threat")
    rows = [
        (f.category.label, ",".join(f.codes.canonical_tokens()) or "-", f.description)
        for f in parsed.findings
    ]
    if not rows:
        rows = [("-", "-", "(no findings parsed)")]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers[:2])]
    lines = ["  ".join([headers[0].ljust(widths[0]), headers[1].ljust(widths[1]), headers[2]])]
    lines.append("  ".join(["-" * widths[0], "-" * widths[1], "------"]))
    for row in rows:
        lines.append("  ".join([row[0].ljust(widths[0]), row[1].ljust(widths[1]), row[2]]))
    return "\n".join(lines) + "\n"


def run_pipeline(description: str, config: PipelineConfig) -> extraction.ParsedOutput:
    """Render the prompt, query the backend, parse the completion, and
    (when out_dir is set) write findings.json and findings.txt."""
    rendered = prompts.position_instruction(config.template, description)
    request = ChatRequest(
        user_text=rendered.user_text,
        system_text=rendered.system_text,
        max_tokens=config.max_tokens,
        temperature=config.temperature,
        model_id=config.model_id,
    )
    completion = send_chat(request, config.backend)
    parsed = extraction.parse_findings(completion)
    if config.out_dir is not None:
        config.out_dir.mkdir(parents=True, exist_ok=True)
        payload = _parsed_to_dict(parsed)
        payload["completion"] = completion
        (config.out_dir / "findings.json").write_text(
            json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        (config.out_dir / "findings.txt").write_text(_findings_table(parsed), encoding="utf-8")
    return parsed


def _parse_similarity_arg(arg: str, model_id: str = "") -> evaluation.SimilarityProvider:
    if arg == "lexical":
        return evaluation.SimilarityProvider()
    if arg.startswith("endpoint:"):
        return evaluation.SimilarityProvider(
            kind=evaluation.EMBEDDING_ENDPOINT,
            endpoint=arg[len("endpoint:"):],
            model_id=model_id,
        )
    raise SchemaError(f"cannot parse similarity provider {arg!r}; use lexical or endpoint:URL")


def _load_description(args) -> str:
    if args.dfd:
        graph = dfd.parse_dfd(Path(args.dfd).read_text(encoding="utf-8"))
        return dfd.render_description(graph).text
    return Path(args.description).read_text(encoding="utf-8").strip()


# --- subcommand handlers -----------------------------------------------------


def _cmd_model_validate(args) -> int:
    try:
        graph = dfd.parse_dfd(Path(args.path).read_text(encoding="utf-8"))
    except (DfdParseError, InvalidGraphError) as exc:
        print(f"invalid: {exc}")
        return EXIT_SCHEMA
    problems = dfd.validate(graph)
    if problems:
        for p in problems:
            print(str(p))
        return EXIT_SCHEMA
    print(f"ok: {len(graph.elements)} elements, {len(graph.flows)} flows, "
          f"{len(graph.boundaries)} boundaries")
    return EXIT_OK


def _cmd_model_render(args) -> int:
    graph = dfd.parse_dfd(Path(args.path).read_text(encoding="utf-8"))
    description = dfd.render_description(graph)
    if args.out:
        Path(args.out).write_text(description.text + "\n", encoding="utf-8")
    else:
        print(description.text)
    return EXIT_OK


def _cmd_oracle_enumerate(args) -> int:
    graph = dfd.parse_dfd(Path(args.path).read_text(encoding="utf-8"))
    table = stride.load_rule_table(args.rules) if args.rules else None
    findings = stride.enumerate_threats(graph, table)
    width = max(len(f.subject_id) for f in findings)
    for f in findings:
        codes = ",".join(f.codes.canonical_tokens())
        print(f"{f.subject_id.ljust(width)}  {f.category.letter}  {codes}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(stride.render_findings(findings) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_prompt_build(args) -> int:
    template = prompts.build_named_template(args.name)
    question = Path(args.question).read_text(encoding="utf-8").strip() if args.question else ""
    if question:
        rendered = prompts.position_instruction(template, question)
        text = rendered.user_text
    else:
        text = prompts.render_user_text(template, "")
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def _cmd_prompt_optimize(args) -> int:
    samples = ds.load_samples(args.dataset)
    if args.train_only:
        split = ds.split_dataset(samples, args.seed)
        samples = ds.select_samples(samples, split.train_ids)
    backend = parse_backend_arg(args.backend)
    optimizer_backend = (
        parse_backend_arg(args.optimizer_backend) if args.optimizer_backend else backend
    )
    config = opro.OproConfig(
        scorer=backend,
        optimizer=optimizer_backend,
        metric=args.metric,
        max_steps=args.max_steps,
        patience=args.patience,
        top_k=args.top_k,
    )
    trajectory = None
    if args.resume:
        _, trajectory = opro.load_trajectory(args.resume)
        trajectory.top_k = config.top_k
    seed_instruction = (
        Path(args.seed_prompt).read_text(encoding="utf-8").strip()
        if args.seed_prompt
        else prompts.INITIAL_INSTRUCTION
    )
    trajectory = opro.optimize(seed_instruction, samples, config, trajectory)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scored_on = "train-split" if args.train_only else "train"
    opro.save_trajectory(trajectory, out / "trajectory.jsonl", config.metric, scored_on)
    best = trajectory.best
    (out / "best.txt").write_text(best.instruction + "\n", encoding="utf-8")
    print(f"best score {best.score:.4f} after {len(trajectory.history)} candidates")
    return EXIT_OK


def _cmd_run(args) -> int:
    description = _load_description(args)
    config = PipelineConfig(
        backend=parse_backend_arg(args.backend),
        template=prompts.build_named_template(args.prompt)
        if args.prompt in prompts.BUILTIN_TEMPLATES
        else prompts.PromptTemplate(Path(args.prompt).read_text(encoding="utf-8").strip()),
        provider=_parse_similarity_arg(args.similarity),
        out_dir=Path(args.out) if args.out else None,
        model_id=args.model,
    )
    parsed = run_pipeline(description, config)
    print(f"{len(parsed.findings)} findings, {len(parsed.warnings)} warnings")
    return EXIT_OK


def _cmd_eval(args) -> int:
    with open(args.pred, encoding="utf-8") as fh:
        predictions = json.load(fh)
    if not isinstance(predictions, dict):
        raise SchemaError("predictions must map sample id to completion text", args.pred)
    truth_samples = {s.id: s for s in ds.load_samples(args.truth)}
    provider = _parse_similarity_arg(args.similarity, args.similarity_model)
    scores = []
    for sample_id in sorted(predictions):
        if sample_id not in truth_samples:
            raise SchemaError(f"prediction for unknown sample {sample_id!r}", args.pred)
        parsed = extraction.parse_findings(str(predictions[sample_id]))
        scores.append(
            evaluation.evaluate_sample(
                parsed,
                truth_samples[sample_id].ground_truth,
                provider,
                sample_id=sample_id,
                fallback_on_error=args.allow_fallback,
            )
        )
    report = evaluation.aggregate(scores, notes=(f"similarity={provider.label}",))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(evaluation.report_to_json(report), encoding="utf-8")
    (out / "eval.txt").write_text(evaluation.format_report_table(report), encoding="utf-8")
    print(evaluation.format_report_table(report), end="")
    return EXIT_OK


def _cmd_dataset_synth(args) -> int:
    samples = ds.generate_synthetic(args.count, args.seed)
    ds.write_samples(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def _cmd_dataset_split(args) -> int:
    samples = ds.load_samples(args.dataset)
    split = ds.split_dataset(samples, args.seed)
    ds.save_split(split, args.out)
    print(f"train={len(split.train_ids)} test={len(split.test_ids)}")
    return EXIT_OK


def _cmd_dataset_export(args) -> int:
    samples = ds.load_samples(args.dataset)
    if args.split:
        split = ds.load_split(args.split)
    else:
        split = ds.split_dataset(samples, args.seed)
    manifest = ds.TrainManifest()
    paths = ds.export_finetune(samples, split, manifest, args.out)
    for path in paths:
        print(str(path))
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="threatforge",
        description="Threat modeling pipeline: DFD rendering, STRIDE enumeration, "
        "prompt optimization, and evaluation against ground truth.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    model = sub.add_parser("model", help="parse, validate, and render DFD files")
    model_sub = model.add_subparsers(dest="subcommand", required=True)
    validate = model_sub.add_parser("validate", help="check a DFD file")
    validate.add_argument("path")
    validate.set_defaults(handler=_cmd_model_validate)
    render = model_sub.add_parser("render", help="render a DFD file to prose")
    render.add_argument("path")
    render.add_argument("--out")
    render.set_defaults(handler=_cmd_model_render)

    oracle = sub.add_parser("oracle", help="deterministic STRIDE enumeration")
    oracle_sub = oracle.add_subparsers(dest="subcommand", required=True)
    enumerate_cmd = oracle_sub.add_parser("enumerate", help="enumerate threats for a DFD")
    enumerate_cmd.add_argument("path")
    enumerate_cmd.add_argument("--rules", help="rule table override file")
    enumerate_cmd.add_argument("--out", help="also write canonical finding blocks here")
    enumerate_cmd.set_defaults(handler=_cmd_oracle_enumerate)

    prompt = sub.add_parser("prompt", help="build or optimize instructions")
    prompt_sub = prompt.add_subparsers(dest="subcommand", required=True)
    build = prompt_sub.add_parser("build", help="print a named prompt template")
    build.add_argument("name", choices=prompts.BUILTIN_TEMPLATES)
    build.add_argument("--question", help="file with the question to render against")
    build.add_argument("--out")
    build.set_defaults(handler=_cmd_prompt_build)
    optimize_cmd = prompt_sub.add_parser("optimize", help="run the instruction optimizer")
    optimize_cmd.add_argument("--backend", required=True, help="mock:PATH or http:URL")
    optimize_cmd.add_argument("--optimizer-backend", help="separate optimizer backend")
    optimize_cmd.add_argument("--dataset", required=True)
    optimize_cmd.add_argument("--metric", default="precision", choices=opro.METRICS)
    optimize_cmd.add_argument("--max-steps", type=int, default=20)
    optimize_cmd.add_argument("--patience", type=int, default=5)
    optimize_cmd.add_argument("--top-k", type=int, default=8)
    optimize_cmd.add_argument("--seed", type=int, default=0, help="split seed for --train-only")
    optimize_cmd.add_argument("--train-only", action="store_true",
                              help="score on the training split instead of all samples")
    optimize_cmd.add_argument("--seed-prompt", help="file with the seed instruction")
    optimize_cmd.add_argument("--resume", help="existing trajectory.jsonl to continue")
    optimize_cmd.add_argument("--out", required=True)
    optimize_cmd.set_defaults(handler=_cmd_prompt_optimize)

    run = sub.add_parser("run", help="end-to-end: prompt, complete, parse, report")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--dfd", help="DFD file to render as the question")
    source.add_argument("--description", help="plain-text description file")
    run.add_argument("--backend", required=True)
    run.add_argument("--prompt", default="initial",
                     help="template name or file path (default: initial)")
    run.add_argument("--similarity", default="lexical")
    run.add_argument("--model", default="gpt-3.5-turbo")
    run.add_argument("--out")
    run.set_defaults(handler=_cmd_run)

    eval_cmd = sub.add_parser("eval", help="score predictions against ground truth")
    eval_cmd.add_argument("--pred", required=True, help="JSON: sample id -> completion text")
    eval_cmd.add_argument("--truth", required=True, help="benchmark dataset file")
    eval_cmd.add_argument("--similarity", default="lexical")
    eval_cmd.add_argument("--similarity-model", default="",
                          help="model id to request from the embeddings endpoint")
    eval_cmd.add_argument("--allow-fallback", action="store_true",
                          help="fall back to lexical similarity if the endpoint fails")
    eval_cmd.add_argument("--out", required=True)
    eval_cmd.set_defaults(handler=_cmd_eval)

    data = sub.add_parser("dataset", help="synthesize, split, and export datasets")
    data_sub = data.add_subparsers(dest="subcommand", required=True)
    synth = data_sub.add_parser("synth", help="generate synthetic benchmark samples")
    synth.add_argument("--count", type=int, default=50)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(handler=_cmd_dataset_synth)
    split_cmd = data_sub.add_parser("split", help="deterministic train/test split")
    split_cmd.add_argument("--dataset", required=True)
    split_cmd.add_argument("--seed", type=int, default=0)
    split_cmd.add_argument("--out", required=True)
    split_cmd.set_defaults(handler=_cmd_dataset_split)
    export = data_sub.add_parser("export-finetune", help="write train/test JSONL and manifest")
    export.add_argument("--dataset", required=True)
    export.add_argument("--split", help="split file; omit to split by --seed")
    export.add_argument("--seed", type=int, default=0)
    export.add_argument("--out", required=True)
    export.set_defaults(handler=_cmd_dataset_export)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except _SCHEMA_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ThreatForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
