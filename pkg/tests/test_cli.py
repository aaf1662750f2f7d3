"""CLI wiring: subcommands, exit codes, and byte-determinism."""

import json

import pytest

from threatforge import cli, evaluation, extraction, prompts
from threatforge.gateway import register_mock

from .conftest import FIXTURES

BANK = str(FIXTURES / "bank_account.dfd")
TRAIN = str(FIXTURES / "opro" / "train.json")
SCRIPT = str(FIXTURES / "opro" / "script.jsonl")


def run(argv):
    return cli.dispatch(argv)


def test_model_validate_ok(capsys):
    assert run(["model", "validate", BANK]) == 0
    assert "ok:" in capsys.readouterr().out


def test_model_validate_bad_file(tmp_path, capsys):
    path = tmp_path / "bad.dfd"
    path.write_text('dfd "X" { process "P" {} flow "F" from "P" to "Ghost" }', encoding="utf-8")
    assert run(["model", "validate", str(path)]) == cli.EXIT_SCHEMA


def test_model_render_writes_file(tmp_path):
    out = tmp_path / "description.txt"
    assert run(["model", "render", BANK, "--out", str(out)]) == 0
    assert "Customer Account DB" in out.read_text(encoding="utf-8")


def test_missing_input_file_is_schema_exit():
    assert run(["model", "render", "/nonexistent/x.dfd"]) == cli.EXIT_SCHEMA


def test_usage_error_exit_code():
    assert run(["model"]) == cli.EXIT_USAGE
    assert run(["frobnicate"]) == cli.EXIT_USAGE
    assert run(["run", "--backend", "mock:x"]) == cli.EXIT_USAGE  # no input source


def test_help_exits_zero():
    assert run(["--help"]) == 0


def test_oracle_enumerate_fixture_rows(capsys):
    assert run(["oracle", "enumerate", BANK]) == 0
    rows = [line for line in capsys.readouterr().out.splitlines() if line.strip()]
    assert len(rows) == 18


def test_prompt_build_initial(capsys):
    assert run(["prompt", "build", "initial"]) == 0
    assert "STRIDE model is a systematic approach" in capsys.readouterr().out


def test_prompt_build_unknown_name():
    assert run(["prompt", "build", "mystery"]) == cli.EXIT_USAGE


def test_run_pipeline_with_mock(tmp_path, capsys):
    spoof = (
        "Threat Type: Spoofing\nDescription: an attacker impersonates a bank "
        "customer to reach the account service.\nMitigation: require strong "
        "authentication.\nNIST: IA-2, SC-12"
    )
    script = tmp_path / "script.jsonl"
    script.write_text(json.dumps({"mode": "seq", "response": spoof}) + "\n", encoding="utf-8")
    out = tmp_path / "out"
    code = run(
        ["run", "--dfd", BANK, "--backend", f"mock:{script}", "--out", str(out)]
    )
    assert code == 0
    report = json.loads((out / "findings.json").read_text(encoding="utf-8"))
    assert len(report["findings"]) == 1
    assert report["findings"][0]["category"] == "Spoofing"
    assert report["findings"][0]["codes"] == ["IA-2", "SC-12"]
    assert (out / "findings.txt").exists()


def test_run_pipeline_empty_completion_degenerate(tmp_path):
    script = tmp_path / "script.jsonl"
    script.write_text(json.dumps({"mode": "seq", "response": ""}) + "\n", encoding="utf-8")
    out = tmp_path / "out"
    code = run(["run", "--dfd", BANK, "--backend", f"mock:{script}", "--out", str(out)])
    assert code == 0
    report = json.loads((out / "findings.json").read_text(encoding="utf-8"))
    assert report["findings"] == []
    assert report["flags"] == ["no_findings"]


def test_run_pipeline_backend_failure_no_partial_report(tmp_path, monkeypatch):
    monkeypatch.setenv("THREATFORGE_API_KEY", "k")
    out = tmp_path / "out"
    code = run(
        ["run", "--dfd", BANK, "--backend", "http://127.0.0.1:1", "--out", str(out)]
    )
    assert code == cli.EXIT_BACKEND
    assert not (out / "findings.json").exists()


def test_run_twice_is_byte_identical(tmp_path):
    spoof = "Threat Type: Spoofing\nDescription: x.\nMitigation: y.\nNIST: IA-2"
    script = tmp_path / "script.jsonl"
    script.write_text(
        json.dumps({"mode": "seq", "response": spoof}) + "\n"
        + json.dumps({"mode": "seq", "response": spoof}) + "\n",
        encoding="utf-8",
    )
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run(["run", "--dfd", BANK, "--backend", f"mock:{script}", "--out", str(out_a)]) == 0
    assert run(["run", "--dfd", BANK, "--backend", f"mock:{script}", "--out", str(out_b)]) == 0
    for name in ("findings.json", "findings.txt"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_prompt_optimize_trajectory_matches_planted_best(tmp_path):
    out = tmp_path / "opro"
    code = run(
        [
            "prompt", "optimize", "--backend", f"mock:{SCRIPT}", "--dataset", TRAIN,
            "--metric", "precision", "--max-steps", "3", "--out", str(out),
        ]
    )
    assert code == 0
    lines = (out / "trajectory.jsonl").read_text(encoding="utf-8").splitlines()
    scores = [json.loads(line)["score"] for line in lines[1:]]
    assert max(scores) == 0.57
    assert (out / "best.txt").read_text(encoding="utf-8").strip() == prompts.OPTIMIZED_INSTRUCTION


def test_prompt_optimize_resume_continues_trajectory(tmp_path):
    first = tmp_path / "first"
    assert run(
        [
            "prompt", "optimize", "--backend", f"mock:{SCRIPT}", "--dataset", TRAIN,
            "--metric", "precision", "--max-steps", "1", "--out", str(first),
        ]
    ) == 0
    partial = (first / "trajectory.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(partial) == 3  # header, seed, one proposal

    resumed = tmp_path / "resumed"
    assert run(
        [
            "prompt", "optimize", "--backend", f"mock:{SCRIPT}", "--dataset", TRAIN,
            "--metric", "precision", "--max-steps", "3",
            "--resume", str(first / "trajectory.jsonl"), "--out", str(resumed),
        ]
    ) == 0
    lines = (resumed / "trajectory.jsonl").read_text(encoding="utf-8").splitlines()
    scores = [json.loads(line)["score"] for line in lines[1:]]
    assert len(scores) == 4
    assert scores[-1] == 0.57


def test_eval_wiring(tmp_path):
    out = tmp_path / "eval"
    code = run(
        [
            "eval",
            "--pred", str(FIXTURES / "replay" / "transcripts.json"),
            "--truth", str(FIXTURES / "replay" / "truth.json"),
            "--similarity", "lexical",
            "--out", str(out),
        ]
    )
    assert code == 0
    payload = json.loads((out / "eval.json").read_text(encoding="utf-8"))
    assert payload["n_samples"] == 10
    assert (out / "eval.txt").exists()


def test_eval_unknown_sample_id(tmp_path):
    pred = tmp_path / "pred.json"
    pred.write_text(json.dumps({"ghost": "text"}), encoding="utf-8")
    code = run(
        [
            "eval", "--pred", str(pred),
            "--truth", str(FIXTURES / "replay" / "truth.json"),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert code == cli.EXIT_SCHEMA


def test_dataset_synth_split_export_chain(tmp_path):
    dataset_path = tmp_path / "synth.json"
    assert run(["dataset", "synth", "--count", "50", "--seed", "4", "--out", str(dataset_path)]) == 0
    split_path = tmp_path / "split.json"
    assert run(["dataset", "split", "--dataset", str(dataset_path), "--seed", "4",
                "--out", str(split_path)]) == 0
    split = json.loads(split_path.read_text(encoding="utf-8"))
    assert len(split["train_ids"]) == 40 and len(split["test_ids"]) == 10
    export_dir = tmp_path / "export"
    assert run(["dataset", "export-finetune", "--dataset", str(dataset_path),
                "--split", str(split_path), "--out", str(export_dir)]) == 0
    assert len((export_dir / "train.jsonl").read_text(encoding="utf-8").splitlines()) == 40


def test_api_key_never_written_to_outputs(tmp_path, monkeypatch):
    secret = "super-secret-key-material-12345"
    monkeypatch.setenv("THREATFORGE_API_KEY", secret)
    spoof = "Threat Type: Spoofing\nDescription: x.\nMitigation: y.\nNIST: IA-2"
    script = tmp_path / "script.jsonl"
    script.write_text(json.dumps({"mode": "seq", "response": spoof}) + "\n", encoding="utf-8")
    out = tmp_path / "out"
    assert run(["run", "--dfd", BANK, "--backend", f"mock:{script}", "--out", str(out)]) == 0
    for path in out.rglob("*"):
        if path.is_file():
            assert secret not in path.read_text(encoding="utf-8")


def test_run_pipeline_library_surface(tmp_path):
    spoof = "Threat Type: Spoofing\nDescription: x.\nMitigation: y.\nNIST: IA-2, SC-12"
    script = tmp_path / "script.jsonl"
    script.write_text(json.dumps({"mode": "seq", "response": spoof}) + "\n", encoding="utf-8")
    config = cli.PipelineConfig(
        backend=register_mock(script),
        template=prompts.build_initial_prompt(),
        provider=evaluation.SimilarityProvider(),
    )
    parsed = cli.run_pipeline("A one-process system description.", config)
    assert isinstance(parsed, extraction.ParsedOutput)
    assert parsed.findings[0].codes.canonical_tokens() == ["IA-2", "SC-12"]
