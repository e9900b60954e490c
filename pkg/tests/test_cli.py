from __future__ import annotations

import json
from pathlib import Path

import pytest

from findbench import __version__, agent, cli, generator
from findbench.interpreters import read_jsonl

from conftest import tree_hash


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def _jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# generate


@pytest.fixture(scope="module")
def numeric100(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen") / "d"
    assert run("generate", "--category", "numeric", "--count", 100, "--seed", 1, "--out", out) == 0
    return out


def test_generate_numeric_100(numeric100):
    specs = generator.load_dataset(numeric100).manifest.specs
    assert len(specs) == 100
    assert sum(s.subcategory == "composed" for s in specs) == 15
    meta = json.loads((numeric100 / "dataset.json").read_text())
    assert meta["seed"] == 1 and meta["engine_version"] == __version__ and "format_version" in meta


def test_generate_rerun_is_hash_identical(numeric100, tmp_path):
    assert run("generate", "--category", "numeric", "--count", 100, "--seed", 1, "--out", tmp_path / "d") == 0
    assert tree_hash(tmp_path / "d") == tree_hash(numeric100)


def test_generate_usage_errors(tmp_path, capsys):
    assert run("generate", "--count", 0, "--out", tmp_path / "x") == 2
    (tmp_path / "full").mkdir()
    (tmp_path / "full" / "keep.txt").write_text("x")
    assert run("generate", "--category", "strings", "--count", 5, "--out", tmp_path / "full") == 2
    assert (tmp_path / "full" / "keep.txt").exists()
    assert run("generate", "--category", "strings", "--count", 5, "--out", tmp_path / "full", "--force") == 0
    assert not (tmp_path / "full" / "keep.txt").exists()
    assert run("generate", "--category", "bogus", "--out", tmp_path / "y") == 2
    assert run("generate") == 2


# ---------------------------------------------------------------------------
# interpret


def test_interpret_ten_noiseless_numeric(small_dir, tmp_path):
    out = tmp_path / "i.jsonl"
    assert run("interpret", "--dataset", small_dir, "--out", out, "--interpreter", "numeric-ref",
               "--category", "numeric", "--subcategory", "atomic", "--subcategory", "composed",
               "--limit", 10, "--budget", 120) == 0
    recs = _jsonl(out)
    assert len(recs) == 10
    assert [r["id"] for r in recs] == sorted(r["id"] for r in recs)
    assert all(r["queries"] <= 120 for r in recs)
    for r in recs:
        assert r["provenance"]["seed"] == 1 and r["provenance"]["engine_version"] == __version__
        assert "format_version" in r["provenance"]
    assert len(read_jsonl(out)) == 10


def test_interpret_parallel_matches_serial(small_dir, tmp_path):
    args = ["interpret", "--dataset", small_dir, "--category", "strings", "--limit", 4]
    assert run(*args, "--out", tmp_path / "a.jsonl") == 0
    assert run(*args, "--out", tmp_path / "b.jsonl", "--jobs", 2) == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


@pytest.mark.parametrize("extra", [
    ["--interpreter", "lm-agent"],
    ["--interpreter", "nope"],
    ["--ids", "missing"],
    ["--budget", "0"],
    ["--jobs", "0"],
])
def test_interpret_usage_errors(small_dir, tmp_path, extra):
    assert run("interpret", "--dataset", small_dir, "--out", tmp_path / "o.jsonl", *extra) == 2


def test_interpret_output_must_differ_from_input(small_dir):
    assert run("interpret", "--dataset", small_dir, "--out", small_dir, "--limit", 1) == 2


def test_config_file_with_flags_winning(small_dir, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'seed = 0\n[interpret]\nbudget = 70\ncategory = ["numeric"]\nlimit = 2\n'
                   f'dataset = "{small_dir}"\n')
    out = tmp_path / "c.jsonl"
    assert run("--config", cfg, "interpret", "--out", out) == 0
    assert all(r["queries"] <= 70 and r["category"] == "numeric" for r in _jsonl(out))
    assert run("--config", cfg, "interpret", "--out", out, "--budget", 90) == 0
    assert max(r["queries"] for r in _jsonl(out)) > 70
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"interpret": {"no_such_flag": 1}}))
    assert run("--config", bad, "interpret", "--out", out) == 2


# ---------------------------------------------------------------------------
# agent


class _Stub:
    def __init__(self, *a, **k):
        pass

    def complete(self, messages):
        text = messages[-1]["content"]
        if text.startswith("Response:"):
            return "[DESCRIPTION] done\n[DOMAIN] none"
        return "COMMAND: PYTHON(./function.py apple 3)"

    def close(self):
        pass


def test_agent_command_and_replay(small_dir, tmp_path, monkeypatch):
    monkeypatch.setattr(agent, "HttpChatClient", _Stub)
    out = tmp_path / "a.jsonl"
    assert run("agent", "--dataset", small_dir, "--out", out, "--endpoint", "http://stub", "--limit", 3) == 0
    trs = tmp_path / "a.transcripts.jsonl"
    recs = _jsonl(trs)
    assert len(recs) == 3 and all(r["interactions"] == 1 for r in recs)
    assert all(r["provenance"]["engine_version"] == __version__ for r in recs)
    assert run("agent", "--dataset", small_dir, "--out", tmp_path / "r.jsonl", "--replay", trs) == 0
    recs[0]["responses"] = ["Response: tampered"]
    trs.write_text("".join(json.dumps(r) + "\n" for r in recs))
    assert run("agent", "--dataset", small_dir, "--out", tmp_path / "r.jsonl", "--replay", trs) == 1


def test_agent_milan_without_exemplars_is_usage_error(small_dir, tmp_path):
    assert run("agent", "--dataset", small_dir, "--out", tmp_path / "a.jsonl", "--endpoint", "http://x",
               "--mode", "milan") == 2


# ---------------------------------------------------------------------------
# evaluate / report


@pytest.fixture(scope="module")
def gt_report(small_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("rep")
    assert run("evaluate", "--dataset", small_dir, "--ground-truth", "--out", d / "r.json", "--csv", d / "r.csv") == 0
    return d


def test_ground_truth_smoke_run_all_success(gt_report):
    rep = json.loads((gt_report / "r.json").read_text())
    assert rep["records"] and all(r["success"] for r in rep["records"])
    assert rep["meta"]["seed"] == 1 and rep["meta"]["engine_version"] == __version__
    assert (gt_report / "r.csv").read_text().startswith(f"# seed=1 format_version={generator.FORMAT_VERSION} "
                                                        f"engine_version={__version__}\n")


def test_report_recomputes(gt_report, capsys):
    for fmt in ("text", "csv", "json"):
        assert run("report", gt_report / "r.json", "--format", fmt) == 0
    capsys.readouterr()
    assert run("report", gt_report / "r.json", "--format", "json") == 0
    assert json.loads(capsys.readouterr().out) == json.loads((gt_report / "r.json").read_text())["aggregates"]


def test_report_detects_tampering(gt_report, tmp_path):
    rep = json.loads((gt_report / "r.json").read_text())
    rep["records"][0]["success"] = not rep["records"][0]["success"]
    (tmp_path / "t.json").write_text(json.dumps(rep))
    assert run("report", tmp_path / "t.json") == 1


def test_evaluate_errors(small_dir, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run("evaluate", "--dataset", small_dir, "--interpretations", empty, "--out", tmp_path / "r.json") == 1
    stray = tmp_path / "stray.jsonl"
    stray.write_text(json.dumps({"id": "zz", "category": "strings", "description": "x", "program": None}) + "\n")
    assert run("evaluate", "--dataset", small_dir, "--interpretations", stray, "--out", tmp_path / "r.json") == 1
    assert run("evaluate", "--dataset", small_dir, "--out", tmp_path / "r.json") == 2
    assert run("evaluate", "--dataset", small_dir, "--ground-truth", "--judge", "endpoint",
               "--out", tmp_path / "r.json") == 2


def test_version_and_help(capsys):
    assert run("--version") == 0
    assert __version__ in capsys.readouterr().out
    assert run("--help") == 0
    text = capsys.readouterr().out
    for cmd in ("generate", "exec", "interpret", "agent", "evaluate", "report"):
        assert f"  {cmd} " in text
