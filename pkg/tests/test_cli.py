from __future__ import annotations

import io
import json

import pytest
from conftest import DECISION_MAKERS_QUERY, DECISION_MAKERS_WIRE

from nlsearch.cli import CliConfig, cmd_repl, main
from nlsearch.harness import sample_dataset_path

PROSE = "I'm sorry, I didn't quite catch that"


def _write(path, obj):
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj), encoding="utf-8")
    return str(path)


def _dataset(tmp_path, rows):
    lines = [json.dumps({"id": f"d{i}", "query": q, "ground_truth": gt}) for i, (q, gt) in enumerate(rows)]
    return _write(tmp_path / "data.jsonl", "\n".join(lines) + "\n")


def test_translate_with_mock(tmp_path, capsys):
    script = _write(tmp_path / "s.json", {DECISION_MAKERS_QUERY: [PROSE, json.dumps(DECISION_MAKERS_WIRE)]})
    assert main(["translate", DECISION_MAKERS_QUERY, "--mock-script", script]) == 0
    out = capsys.readouterr().out
    assert json.loads(out) == DECISION_MAKERS_WIRE


def test_translate_empty_query_is_usage_error(tmp_path):
    script = _write(tmp_path / "s.json", ["{}"])
    with pytest.raises(SystemExit) as info:
        main(["translate", "  ", "--mock-script", script])
    assert info.value.code != 0


def test_translate_three_prose_replies(tmp_path, capsys):
    script = _write(tmp_path / "s.json", [PROSE, PROSE, PROSE])
    assert main(["translate", "lawyers", "--mock-script", script]) == 1
    err = capsys.readouterr().err
    assert "3 attempt" in err
    assert err.count("invalid (not_json") == 3


def test_http_backend_needs_model():
    with pytest.raises(SystemExit) as info:
        main(["translate", "lawyers", "--backend", "openai"])
    assert info.value.code == 2


def test_http_backend_without_key_fails_cleanly(monkeypatch, capsys):
    monkeypatch.delenv("NLSEARCH_TEST_KEY", raising=False)
    code = main(["translate", "x", "--backend", "openai", "--model", "m", "--api-key-env", "NLSEARCH_TEST_KEY"])
    assert code == 1
    assert "NLSEARCH_TEST_KEY" in capsys.readouterr().err


def test_compile_employee_min(tmp_path, capsys):
    path = _write(tmp_path / "d.json", {"employee_min": 5000})
    assert main(["compile", path, "--format", "filter"]) == 0
    assert capsys.readouterr().out == "employee:[5000 TO *]\n"


def test_compile_both_formats_and_warnings(tmp_path, capsys):
    path = _write(tmp_path / "d.json", {"titles": ["CTO"], "management_levels": ["c-level"], "revenue_min": 500000})
    assert main(["compile", path]) == 0
    captured = capsys.readouterr()
    assert captured.out.splitlines() == [
        '{"revenue":{"min":500000},"titles":["CTO"]}',
        'revenue:[500000 TO *] AND titles:("CTO")',
    ]
    assert "exclusivity" in captured.err


def test_compile_empty_document(tmp_path, capsys):
    path = _write(tmp_path / "d.json", {})
    assert main(["compile", path, "--format", "filter"]) == 0
    assert capsys.readouterr().out == "\n"


def test_compile_unknown_field(tmp_path, capsys):
    path = _write(tmp_path / "d.json", {"favorite_color": "blue"})
    assert main(["compile", path]) != 0
    assert "unknown_field" in capsys.readouterr().err


def test_eval_replay_prints_one(tmp_path, capsys):
    data = _dataset(tmp_path, [(DECISION_MAKERS_QUERY, DECISION_MAKERS_WIRE), ("lawyers", {"titles": ["Lawyer"]})])
    assert main(["eval", data, "--backend", "replay", "--out", str(tmp_path / "rep")]) == 0
    assert "overall mean: 1.0000" in capsys.readouterr().out
    assert (tmp_path / "rep" / "report.txt").exists()


def test_eval_malformed_line(tmp_path, capsys):
    data = _write(
        tmp_path / "data.jsonl",
        json.dumps({"id": "a", "query": "q", "ground_truth": {}}) + "\n{broken\n",
    )
    assert main(["eval", data, "--backend", "replay", "--out", str(tmp_path / "rep")]) != 0
    assert "line 2" in capsys.readouterr().err


def test_eval_mock_dropping_employee_min(tmp_path, capsys):
    rows = [
        ("CTOs at companies with 5000+ employees", {"titles": ["CTO"], "employee_min": 5000}),
        ("lawyers at firms of 50 or more people", {"titles": ["Lawyer"], "employee_min": 50}),
    ]
    data = _dataset(tmp_path, rows)
    script = {q: [json.dumps({k: v for k, v in gt.items() if k != "employee_min"})] for q, gt in rows}
    script_path = _write(tmp_path / "s.json", script)
    assert main(["eval", data, "--mock-script", script_path, "--out", str(tmp_path / "rep")]) == 0
    assert "overall mean: 0.9706" in capsys.readouterr().out


def test_eval_bundled_sample(tmp_path, capsys):
    from importlib import resources

    script = str(resources.files("nlsearch").joinpath("data/sample_mock_script.json"))
    args = ["eval", str(sample_dataset_path()), "--mock-script", script, "--out", str(tmp_path / "rep"),
            "--report-formats", "json"]
    assert main(args) == 0
    assert "queries: 25" in capsys.readouterr().out
    assert [p.name for p in (tmp_path / "rep").iterdir()] == ["report.json"]


def test_export_finetune_split(tmp_path, capsys):
    out = tmp_path / "ft"
    assert main(["export-finetune", str(sample_dataset_path()), "--out", str(out), "--split"]) == 0
    sizes = {p.stem: len(p.read_text().splitlines()) - 1 for p in out.iterdir()}
    # 25 -> 22.5/2.5 ties toward the first part (23/2), then 23 -> 18.4/4.6 -> 18/5
    assert sizes == {"train": 18, "validation": 5, "test": 2}


def _repl_config(tmp_path, script):
    return CliConfig(mock_script=_write(tmp_path / "s.json", script), output_format="filter")


def test_repl_quit(tmp_path):
    out = io.StringIO()
    assert cmd_repl(_repl_config(tmp_path, []), io.StringIO(":quit\nnever read\n"), out) == 0
    assert out.getvalue() == ""


def test_repl_valid_query(tmp_path):
    out = io.StringIO()
    config = _repl_config(tmp_path, [json.dumps({"titles": ["Lawyer"], "revenue_min": 500000})])
    assert cmd_repl(config, io.StringIO("lawyers\n"), out) == 0
    document, filter_line = out.getvalue().strip().split("\n}\n")
    assert json.loads(document + "}") == {"revenue_min": 500000, "titles": ["Lawyer"]}
    assert filter_line == 'revenue:[500000 TO *] AND titles:("Lawyer")'


def test_repl_backend_down_keeps_going(tmp_path):
    out = io.StringIO()
    config = _repl_config(tmp_path, {"second": ["{}"]})
    assert cmd_repl(config, io.StringIO("first\nsecond\n:quit\n"), out) == 0
    lines = out.getvalue().splitlines()
    assert lines[0].startswith("error:")
    assert "{}" in lines[1:]


@pytest.mark.parametrize("reply", ['{"titles": "CTO"}', '```json\n{"revenue_min": "5000"}\n```', "{}"])
def test_translate_output_reparses(tmp_path, capsys, reply):
    from nlsearch.entities import parse_document
    from nlsearch.schema import default_schema

    script = _write(tmp_path / "s.json", [reply])
    assert main(["translate", "anything", "--mock-script", script]) == 0
    outcome = parse_document(capsys.readouterr().out, default_schema())
    assert outcome.valid and outcome.coercions == ()
