from __future__ import annotations

import json

import pytest
from conftest import DECISION_MAKERS_QUERY, GOLDEN, SCHEMA

from nlsearch.errors import EmptyQueryError
from nlsearch.prompts import (
    FewShotExample,
    build_system_message,
    default_shot_library,
    dump_shots,
    field_block,
    format_answer,
    load_shots,
    render_prompt,
    render_shot,
)
from nlsearch.schema import load_schema


def test_default_library_size_and_reasoning():
    shots = default_shot_library()
    assert len(shots) >= 11
    assert all(s.reasoning for s in shots)
    assert len({s.query for s in shots}) == len(shots)


def test_library_covers_hidden_logic():
    shots = default_shot_library()
    # titles vs management_levels exclusivity is demonstrated by a shot with titles set
    assert any("titles" in s.answer and "management_levels" not in s.answer for s in shots)
    # at least one shot lists more than one company
    assert any(len(s.answer.get("company_name", ())) > 1 for s in shots)
    first = shots[0]
    assert set(first.answer["management_levels"]) == {"C-Level", "VP-Level"}


def test_first_shot_matches_golden():
    expected = (GOLDEN / "decision_makers_shot.txt").read_text(encoding="utf-8").rstrip("\n")
    assert render_shot(default_shot_library()[0]) == expected


def test_management_levels_block_matches_golden():
    expected = (GOLDEN / "management_levels_block.txt").read_text(encoding="utf-8").rstrip("\n")
    assert field_block(SCHEMA.field("management_levels")) == expected


def test_system_message_contents():
    msg = build_system_message(SCHEMA, default_shot_library())
    assert 'Leave this empty if "titles" is not empty' in msg
    assert '"crm software", "cloud security"' in msg
    assert '"revenue_min": int' in msg and '"employee_max": int' in msg
    assert len(msg.split()) >= 2000


def test_single_field_schema_has_one_block():
    reg = load_schema(
        "fields:\n  - name: departments\n    kind: categorical\n    shape: string_list\n"
        "    description: Departments.\n    word_bank: [Sales, Legal]\n"
    )
    msg = build_system_message(reg)
    assert msg.count(": List[str]") == 1
    assert "Choices (comma separated):\nSales,Legal" in msg
    assert "Examples:" not in msg


def test_reasoning_can_be_left_out():
    shots = default_shot_library()
    with_cot = build_system_message(SCHEMA, shots)
    without = build_system_message(SCHEMA, shots, include_reasoning=False)
    assert "Reasoning:" in with_cot and "Reasoning:" not in without


def test_render_prompt():
    bundle = render_prompt(SCHEMA, default_shot_library(), DECISION_MAKERS_QUERY)
    assert bundle.shots[0].answer["company_name"] == ("Zoominfo", "Chorus")
    assert bundle.user_message() == f"Prompt: {DECISION_MAKERS_QUERY}\n\nAnswer in json format:"
    retry = bundle.with_suffix("Attempt 2: fix it")
    assert retry.user_message() == f"Prompt: {DECISION_MAKERS_QUERY}\n\nAttempt 2: fix it\n\nAnswer in json format:"
    assert retry.system_message == bundle.system_message


@pytest.mark.parametrize("query", ["", "   ", "\n\t"])
def test_blank_query_rejected(query):
    with pytest.raises(EmptyQueryError):
        render_prompt(SCHEMA, [], query)


def test_zero_shot_bundle():
    bundle = render_prompt(SCHEMA, [], "lawyers in ohio")
    assert bundle.shots == ()
    assert "Examples:" not in bundle.system_message


def test_format_answer_style():
    shot = default_shot_library()[1]
    text = format_answer(shot.answer, SCHEMA)
    assert json.loads(text) == shot.answer.to_wire(SCHEMA)
    assert format_answer(shot.answer.without(*shot.answer), SCHEMA) == "{}"


def test_shot_library_round_trip():
    shots = default_shot_library()
    again = load_shots(dump_shots(shots, SCHEMA), SCHEMA)
    assert again == shots


def test_shot_answers_must_be_canonical():
    text = json.dumps({"version": 1, "shots": [{"query": "q", "answer": {"titles": "Lawyer"}, "reasoning": ""}]})
    with pytest.raises(ValueError, match="coercions"):
        load_shots(text, SCHEMA)
    text = json.dumps({"version": 1, "shots": [{"query": "q", "answer": {"color": "red"}}]})
    with pytest.raises(ValueError, match="invalid answer"):
        load_shots(text, SCHEMA)


def test_shots_are_hashable():
    shot = default_shot_library()[0]
    assert isinstance(shot, FewShotExample)
    assert hash(shot) == hash(default_shot_library()[0])


def test_system_message_is_deterministic():
    shots = default_shot_library()
    assert build_system_message(SCHEMA, shots) == build_system_message(SCHEMA, list(shots))


def test_listed_bank_values_round_trip():
    from nlsearch.schema import word_bank_lookup

    msg = build_system_message(SCHEMA)
    lines = msg.splitlines()
    checked = 0
    for spec in SCHEMA:
        if spec.word_bank is None or spec.word_bank.ref is not None:
            continue
        header = lines.index(f'"{spec.name}": {"List[str]" if spec.is_list else "str"}')
        choices = lines[lines.index("Choices (comma separated):", header) + 1]
        for value in choices.split(","):
            assert word_bank_lookup(spec, value) == value
            checked += 1
    assert checked > 50
