"""Command-line interface: subcommands, determinism, exit codes."""
from __future__ import annotations

import json

import pytest

from qres.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main

SPEC = {
    "templates": {"scan": 1.0, "sort_scan": 1.0, "hash_join": 1.0},
    "tables": [
        {"table_id": "a", "base_tuples": 20000, "row_bytes": 100, "columns": 8},
        {"table_id": "b", "base_tuples": 4000, "row_bytes": 120, "columns": 6},
    ],
    "scales": [1, 2, 4],
    "query_count": 24,
    "rng_seed": 11,
    "noise_sigma": 0.05,
    "card_sigma": 0.1,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps(SPEC))
    corpus = root / "corpus.jsonl"
    model = root / "model.bin"
    assert main(["gen", "--spec", str(spec), "--out", str(corpus)]) == EXIT_OK
    assert main([
        "train", "--corpus", str(corpus), "--out", str(model),
        "--iterations", "40", "--seed", "0",
    ]) == EXIT_OK
    return root, spec, corpus, model


def test_gen_deterministic(workspace, tmp_path):
    root, spec, corpus, _ = workspace
    other = tmp_path / "again.jsonl"
    assert main(["gen", "--spec", str(spec), "--out", str(other)]) == EXIT_OK
    assert other.read_bytes() == corpus.read_bytes()


def test_gen_seed_override(workspace, tmp_path):
    _, spec, corpus, _ = workspace
    other = tmp_path / "seeded.jsonl"
    assert main(["gen", "--spec", str(spec), "--out", str(other), "--seed", "99"]) == EXIT_OK
    assert other.read_bytes() != corpus.read_bytes()


def test_train_deterministic(workspace, tmp_path):
    _, _, corpus, model = workspace
    other = tmp_path / "model2.bin"
    assert main([
        "train", "--corpus", str(corpus), "--out", str(other),
        "--iterations", "40", "--seed", "0",
    ]) == EXIT_OK
    assert other.read_bytes() == model.read_bytes()


def test_estimate_outputs_totals(workspace, tmp_path, capsys):
    _, _, corpus, model = workspace
    out = tmp_path / "est.json"
    assert main([
        "estimate", "--model", str(model), "--plans", str(corpus),
        "--resource", "cpu", "--out", str(out),
    ]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert len(doc) == SPEC["query_count"]
    for entry in doc:
        assert entry["total"] == pytest.approx(sum(entry["per_pipeline"]))
        assert entry["total"] >= 0.0


def test_eval_report(workspace, tmp_path, capsys):
    _, _, corpus, model = workspace
    prefix = tmp_path / "report"
    assert main([
        "eval", "--model", str(model), "--corpus", str(corpus),
        "--resource", "cpu", "--baselines", "--train-corpus", str(corpus),
        "--seed", "0", "--out", str(prefix),
    ]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.splitlines()[0] == "technique,L1,R<=1.5,R in [1.5:2],R>2"
    names = [line.split(",")[0] for line in text.strip().splitlines()[1:]]
    assert set(names) == {"SCALING", "MART", "LINEAR", "OPT"}
    doc = json.loads((tmp_path / "report.json").read_text())
    assert set(doc) == {"SCALING", "MART", "LINEAR", "OPT"}


def test_eval_baselines_require_train_corpus(workspace):
    _, _, corpus, model = workspace
    code = main([
        "eval", "--model", str(model), "--corpus", str(corpus), "--baselines",
    ])
    assert code == EXIT_USAGE


def test_fit_scaling_selects_generating_form(tmp_path, capsys):
    import math

    csv_path = tmp_path / "obs.csv"
    rows = ["CIN1,resource"]
    for n in (100, 200, 400, 800, 1600):
        rows.append(f"{n},{2 * n * math.log2(n)}")
    csv_path.write_text("\n".join(rows) + "\n")
    assert main(["fit-scaling", "--csv", str(csv_path), "--features", "CIN1"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["selected"]["kind"] == "NLogN"
    assert doc["selected"]["alpha"] == pytest.approx(2.0)
    assert {c["kind"] for c in doc["candidates"]} == {"Linear", "NLogN", "Power", "Log"}


def test_inspect_lists_models(workspace, capsys):
    _, _, _, model = workspace
    assert main(["inspect", "--model", str(model)]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    ops = {e["operator"] for e in doc}
    assert "TableScan" in ops and "Sort" in ops
    for e in doc:
        assert e["models"][0]["kind"] == "mart"
        assert 0 <= e["default_index"] < len(e["models"])


def test_missing_file_is_data_error(tmp_path, capsys):
    assert main(["train", "--corpus", str(tmp_path / "none.jsonl"),
                 "--out", str(tmp_path / "m.bin")]) == EXIT_DATA


def test_malformed_corpus_is_data_error(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"root": {"op": "Nope"}}\n')
    assert main(["train", "--corpus", str(bad), "--out", str(tmp_path / "m.bin")]) == EXIT_DATA


def test_unknown_flag_is_usage_error(capsys):
    assert main(["gen", "--bogus"]) == EXIT_USAGE


def test_missing_subcommand_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE
